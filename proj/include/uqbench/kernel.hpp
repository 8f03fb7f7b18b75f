#pragma once

#include "uqbench/core.hpp"

#include <string>

namespace uqbench {

enum class KernelFamily { matern52, squared_exponential };

inline const char* to_string(KernelFamily family) {
  return family == KernelFamily::matern52 ? "matern52" : "squared-exponential";
}

inline KernelFamily kernel_family_from_string(const std::string& text) {
  if (text == "matern52" || text == "matern-5/2") return KernelFamily::matern52;
  if (text == "squared-exponential" || text == "se" || text == "rbf") return KernelFamily::squared_exponential;
  throw InvalidArgument("unknown kernel family '" + text + "'");
}

/// Stationary covariance function with length-scale and output variance.
struct KernelSpec {
  KernelFamily family = KernelFamily::matern52;
  double length_scale = 1.0;
  double variance = 1.0;

  void validate() const {
    if (!(length_scale > 0.0) || !std::isfinite(length_scale)) throw InvalidArgument("length-scale must be > 0");
    if (!(variance > 0.0) || !std::isfinite(variance)) throw InvalidArgument("kernel variance must be > 0");
  }

  /// Covariance as a function of Euclidean distance r.
  double at_distance(double r) const {
    switch (family) {
      case KernelFamily::matern52: {
        const double a = std::sqrt(5.0) * r / length_scale;
        return variance * (1.0 + a + a * a / 3.0) * std::exp(-a);
      }
      case KernelFamily::squared_exponential: {
        const double s = r / length_scale;
        return variance * std::exp(-0.5 * s * s);
      }
    }
    return 0.0;
  }
};

inline double euclidean_distance(std::span<const double> a, std::span<const double> b) {
  check_dim(b, a.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return std::sqrt(sum);
}

inline double kernel_eval(const KernelSpec& spec, std::span<const double> x, std::span<const double> x2) {
  return spec.at_distance(euclidean_distance(x, x2));
}

inline std::span<const double> row_span(const InputMatrix& m, Eigen::Index i) {
  return {m.row(i).data(), static_cast<std::size_t>(m.cols())};
}

/// Gram matrix over the rows of `x`; symmetric by construction (each
/// off-diagonal pair is evaluated once and mirrored).
inline MatrixXd gram_matrix(const KernelSpec& spec, const InputMatrix& x) {
  const Eigen::Index n = x.rows();
  MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    k(i, i) = spec.variance;
    for (Eigen::Index j = 0; j < i; ++j) {
      const double v = kernel_eval(spec, row_span(x, i), row_span(x, j));
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

/// Cross-covariance vector k(x_i, query) over the rows of `x`.
inline VectorXd cross_covariance(const KernelSpec& spec, const InputMatrix& x, std::span<const double> query) {
  VectorXd k(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) k[i] = kernel_eval(spec, row_span(x, i), query);
  return k;
}

}  // namespace uqbench
