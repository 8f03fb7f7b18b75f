#pragma once

#include "uqbench/core.hpp"
#include "uqbench/kernel.hpp"
#include "uqbench/linalg.hpp"

#include <numbers>
#include <optional>
#include <tuple>

namespace uqbench {

/// Exact GP regression with Gaussian noise.
///
/// Targets are centred on their training mean before fitting; the mean is
/// added back at prediction time, so the effective prior mean is that
/// training mean. The factorization is of K + (noise + jitter) I, where the
/// jitter only enters if the plain factorization fails.
class GpModel final : public IntervalPredictor, public Regressor {
 public:
  GpModel() = default;

  static GpModel fit(const KernelSpec& kernel, double noise_variance, const InputMatrix& x, const VectorXd& y) {
    kernel.validate();
    if (!(noise_variance >= 0.0) || !std::isfinite(noise_variance)) {
      throw InvalidArgument("noise variance must be >= 0");
    }
    if (x.rows() < 1) throw TooFewPoints("GP fit needs at least one training point");
    if (x.rows() != y.size()) throw DimensionMismatch("GP inputs and targets differ in length");

    GpModel m;
    m.kernel_ = kernel;
    m.noise_variance_ = noise_variance;
    m.x_ = x;
    m.y_mean_ = y.mean();
    m.y_centered_ = y.array() - m.y_mean_;

    MatrixXd k = gram_matrix(kernel, x);
    k.diagonal().array() += noise_variance;
    JitteredCholesky chol = cholesky_with_jitter(k);
    m.jitter_ = chol.jitter;
    m.chol_ = std::move(chol.llt);
    m.weights_ = m.chol_.solve(m.y_centered_);
    m.fitted_ = true;
    return m;
  }

  /// Fits on the train-role points of `data`.
  static GpModel fit(const KernelSpec& kernel, double noise_variance, const Dataset& data) {
    const Dataset train = data.subset(Role::train);
    return fit(kernel, noise_variance, train.inputs(), train.targets());
  }

  GaussianPrediction predict(std::span<const double> x) const {
    require_fitted();
    check_dim(x, input_dim());
    const VectorXd ks = cross_covariance(kernel_, x_, x);
    const double mean = y_mean_ + ks.dot(weights_);
    const VectorXd v = chol_.matrixL().solve(ks);
    const double prior = kernel_.variance + noise_variance_;
    const double variance = std::max(prior - v.squaredNorm(), 1e-12);
    return {mean, std::sqrt(variance)};
  }

  /// log p(y | X, theta) of the centred targets.
  double log_marginal_likelihood() const {
    require_fitted();
    const double n = static_cast<double>(x_.rows());
    const double log_det_half = chol_.matrixLLT().diagonal().array().log().sum();
    return -0.5 * y_centered_.dot(weights_) - log_det_half - 0.5 * n * std::log(2.0 * std::numbers::pi);
  }

  PredictionInterval predict_interval(std::span<const double> x, ConfidenceLevel level) const override {
    return gaussian_interval(predict(x), level);
  }
  double predict_point(std::span<const double> x) const override { return predict(x).mean; }
  std::size_t input_dim() const override {
    require_fitted();
    return static_cast<std::size_t>(x_.cols());
  }

  bool fitted() const { return fitted_; }
  const KernelSpec& kernel() const { return kernel_; }
  double noise_variance() const { return noise_variance_; }
  double jitter() const { return jitter_; }
  double target_mean() const { return y_mean_; }
  std::size_t training_size() const { return static_cast<std::size_t>(x_.rows()); }
  const InputMatrix& training_inputs() const { return x_; }
  const VectorXd& weights() const { return weights_; }
  MatrixXd cholesky_factor() const { return chol_.matrixL(); }

 private:
  void require_fitted() const {
    if (!fitted_) throw NotFitted("GP model used before fit");
  }

  KernelSpec kernel_;
  double noise_variance_ = 0.0;
  double jitter_ = 0.0;
  InputMatrix x_;
  double y_mean_ = 0.0;
  VectorXd y_centered_;
  Eigen::LLT<MatrixXd> chol_;
  VectorXd weights_;
  bool fitted_ = false;
};

struct GpCandidate {
  KernelSpec kernel;
  double noise_variance = 0.0;
};

inline std::vector<double> logspace(double lo, double hi, std::size_t n) {
  if (!(lo > 0.0 && hi >= lo) || n == 0) throw InvalidArgument("logspace needs 0 < lo <= hi and n > 0");
  std::vector<double> out(n);
  const double a = std::log(lo);
  const double b = std::log(hi);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = n == 1 ? lo : std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1));
  }
  return out;
}

inline std::vector<GpCandidate> make_grid(KernelFamily family, const std::vector<double>& length_scales,
                                          const std::vector<double>& variances,
                                          const std::vector<double>& noise_variances) {
  std::vector<GpCandidate> grid;
  for (double l : length_scales)
    for (double s2 : variances)
      for (double n2 : noise_variances) grid.push_back({{family, l, s2}, n2});
  return grid;
}

/// Log-spaced grid scaled to the data: length-scales relative to the input
/// span, variances and noise relative to the target variance.
inline std::vector<GpCandidate> default_grid(KernelFamily family, const InputMatrix& x, const VectorXd& y) {
  double span = 0.0;
  for (Eigen::Index j = 0; j < x.cols(); ++j) span = std::max(span, x.col(j).maxCoeff() - x.col(j).minCoeff());
  if (!(span > 0.0)) span = 1.0;
  double var = (y.array() - y.mean()).square().mean();
  if (!(var > 0.0)) var = 1.0;
  return make_grid(family, logspace(0.01 * span, 0.5 * span, 10), logspace(0.25 * var, 4.0 * var, 3),
                   logspace(1e-3 * var, 1.0 * var, 10));
}

/// Fit every candidate and keep the one with the largest log marginal
/// likelihood. Exact ties go to the smaller length-scale, then smaller noise.
/// Candidates whose factorization fails are skipped.
inline GpModel select_hyperparameters(const InputMatrix& x, const VectorXd& y, const std::vector<GpCandidate>& grid) {
  if (grid.empty()) throw InvalidArgument("hyperparameter grid is empty");
  std::optional<GpModel> best;
  double best_lml = -std::numeric_limits<double>::infinity();
  for (const GpCandidate& c : grid) {
    GpModel m;
    try {
      m = GpModel::fit(c.kernel, c.noise_variance, x, y);
    } catch (const CholeskyFailure&) {
      continue;
    }
    const double lml = m.log_marginal_likelihood();
    if (!std::isfinite(lml)) continue;
    bool better = !best || lml > best_lml;
    if (best && lml == best_lml) {
      better = std::pair(c.kernel.length_scale, c.noise_variance) <
               std::pair(best->kernel().length_scale, best->noise_variance());
    }
    if (better) {
      best_lml = lml;
      best = std::move(m);
    }
  }
  if (!best) throw CholeskyFailure("every hyperparameter candidate failed to factorize");
  return std::move(*best);
}

inline GpModel select_hyperparameters(const Dataset& data, const std::vector<GpCandidate>& grid) {
  const Dataset train = data.subset(Role::train);
  return select_hyperparameters(train.inputs(), train.targets(), grid);
}

/// Multiplicative pattern search around a fitted model: each of length-scale,
/// variance and noise is scaled up and down by `factor`, and the factor
/// shrinks to its square root once no move raises the evidence. A zero noise
/// variance stays zero.
inline GpModel refine_hyperparameters(const InputMatrix& x, const VectorXd& y, GpModel start, double factor = 2.0,
                                      double min_factor = 1.01) {
  if (!(factor > 1.0 && min_factor > 1.0)) throw InvalidArgument("refinement factors must exceed 1");
  GpModel best = std::move(start);
  double best_lml = best.log_marginal_likelihood();
  while (factor > min_factor) {
    bool moved = false;
    for (int coord = 0; coord < 3; ++coord) {
      for (double step : {factor, 1.0 / factor}) {
        KernelSpec k = best.kernel();
        double noise = best.noise_variance();
        if (coord == 0) k.length_scale *= step;
        if (coord == 1) k.variance *= step;
        if (coord == 2) {
          if (noise == 0.0) continue;
          noise *= step;
        }
        GpModel m;
        try {
          m = GpModel::fit(k, noise, x, y);
        } catch (const CholeskyFailure&) {
          continue;
        }
        const double lml = m.log_marginal_likelihood();
        if (std::isfinite(lml) && lml > best_lml) {
          best_lml = lml;
          best = std::move(m);
          moved = true;
        }
      }
    }
    if (!moved) factor = std::sqrt(factor);
  }
  return best;
}

}  // namespace uqbench
