#pragma once

#include "uqbench/core.hpp"
#include "uqbench/kernel.hpp"
#include "uqbench/linalg.hpp"

#include <cstdio>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <utility>

namespace uqbench {

/// How the sigma(x) profile enters the sampled realizations.
enum class NoiseMode {
  scaled,    // covariance D K D with D = diag(sigma(x)): smooth realizations
  additive,  // independent N(0, sigma(x)^2) per point, no kernel correlation
};

struct NoiseKnot {
  double x;
  double std;
};

/// Heteroscedastic GP benchmark: mean a*x + b*x^2 + c*sin(x) on [x_lo, x_hi],
/// Matern 5/2 correlation, piecewise-linear std profile.
struct AnalyticalGpSpec {
  double x_lo = 0.0;
  double x_hi = 10.0;
  double a = 1.0;
  double b = 0.02;
  double c = 5.0;
  KernelSpec kernel{KernelFamily::matern52, 0.2, 1.0};
  std::vector<NoiseKnot> knots{{0.0, 0.1}, {5.0, 1.0}, {10.0, 0.1}};
  std::size_t points_per_realization = 100;
  std::size_t realizations = 10;
  NoiseMode noise_mode = NoiseMode::scaled;

  void validate() const {
    if (!(x_lo < x_hi)) throw InvalidArgument("domain needs x_lo < x_hi");
    kernel.validate();
    if (knots.size() < 2) throw InvalidArgument("noise profile needs at least two knots");
    for (std::size_t i = 0; i < knots.size(); ++i) {
      if (!(knots[i].std > 0.0)) throw InvalidArgument("noise knots must be positive");
      if (i > 0 && !(knots[i].x > knots[i - 1].x)) throw InvalidArgument("knot x-values must increase strictly");
    }
    if (points_per_realization < 2 || realizations < 1) throw InvalidArgument("need >= 2 points and >= 1 realization");
  }

  bool in_domain(double x) const { return x >= x_lo && x <= x_hi; }
};

inline double mean_function(const AnalyticalGpSpec& spec, double x) {
  return spec.a * x + spec.b * x * x + spec.c * std::sin(x);
}

/// Linear interpolation through the std knots; knots are clamped flat outside
/// their own range but queries must stay inside the domain.
inline double noise_std(const AnalyticalGpSpec& spec, double x) {
  if (!spec.in_domain(x)) throw OutOfDomain("x = " + std::to_string(x) + " is outside the benchmark domain");
  const auto& k = spec.knots;
  if (x <= k.front().x) return k.front().std;
  if (x >= k.back().x) return k.back().std;
  for (std::size_t i = 1; i < k.size(); ++i) {
    if (x <= k[i].x) {
      const double t = (x - k[i - 1].x) / (k[i].x - k[i - 1].x);
      return k[i - 1].std + t * (k[i].std - k[i - 1].std);
    }
  }
  return k.back().std;
}

inline std::vector<double> linspace(double lo, double hi, std::size_t n) {
  std::vector<double> out(n);
  if (n == 1) {
    out[0] = lo;
    return out;
  }
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  return out;
}

inline std::vector<double> analytical_grid(const AnalyticalGpSpec& spec) {
  return linspace(spec.x_lo, spec.x_hi, spec.points_per_realization);
}

/// Draw every realization on the equidistant grid and stack them; all points
/// get the train role (use split_dataset afterwards).
inline Dataset sample_realizations(const AnalyticalGpSpec& spec, RngStream& rng) {
  spec.validate();
  const std::vector<double> grid = analytical_grid(spec);
  const auto n = static_cast<Eigen::Index>(grid.size());

  VectorXd mu(n), sigma(n);
  InputMatrix grid_x(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    grid_x(i, 0) = grid[static_cast<std::size_t>(i)];
    mu[i] = mean_function(spec, grid_x(i, 0));
    sigma[i] = noise_std(spec, grid_x(i, 0));
  }

  MatrixXd factor;
  if (spec.noise_mode == NoiseMode::scaled) {
    // D K D = (D L)(D L)^T
    const JitteredCholesky chol = cholesky_with_jitter(gram_matrix(spec.kernel, grid_x));
    factor = sigma.asDiagonal() * MatrixXd(chol.llt.matrixL());
  }

  const Eigen::Index total = n * static_cast<Eigen::Index>(spec.realizations);
  InputMatrix x(total, 1);
  VectorXd y(total);
  VectorXd z(n);
  for (std::size_t r = 0; r < spec.realizations; ++r) {
    for (Eigen::Index i = 0; i < n; ++i) z[i] = rng.normal();
    const VectorXd draw = spec.noise_mode == NoiseMode::scaled ? VectorXd(mu + factor * z)
                                                               : VectorXd(mu + sigma.cwiseProduct(z));
    const Eigen::Index offset = static_cast<Eigen::Index>(r) * n;
    x.block(offset, 0, n, 1) = grid_x;
    y.segment(offset, n) = draw;
  }
  return Dataset(std::move(x), std::move(y));
}

/// Exact interval of the generating process at x.
inline PredictionInterval true_interval(const AnalyticalGpSpec& spec, double x, ConfidenceLevel level) {
  return PredictionInterval::symmetric(mean_function(spec, x), level.z_value() * noise_std(spec, x));
}

// ---------------------------------------------------------------------------
// Synthetic axial flux-like surrogate. Not measurement data.
//
// Inputs are (axial position z in mm, control-bank position b in mm). The
// profile is a damped cosine over the active length with a ripple and a
// depression near the bank tip; noise is multiplicative.

struct FluxSurrogateSpec {
  double active_length = 600.0;   // mm
  double amplitude = 1000.0;      // counts at the profile peak
  double damping = 0.8;           // exp(-damping * z / H)
  double cosine_stretch = 1.2;    // cos(pi (z/H - 0.5) / stretch)
  double ripple_amplitude = 0.05;
  double ripple_period = 60.0;    // mm
  double bank_depression = 0.3;
  double bank_width = 40.0;       // mm
  double bank_lo = 250.0;         // bank positions seen in training cycles
  double bank_hi = 350.0;
  double relative_noise = 0.07;
  std::size_t cycles = 8;
  std::size_t points_per_cycle = 60;

  void validate() const {
    if (!(active_length > 0.0 && amplitude > 0.0 && cosine_stretch > 0.0 && bank_width > 0.0)) {
      throw InvalidArgument("flux surrogate lengths and amplitude must be positive");
    }
    if (!(bank_lo < bank_hi)) throw InvalidArgument("flux surrogate needs bank_lo < bank_hi");
    if (!(relative_noise >= 0.0)) throw InvalidArgument("relative noise must be >= 0");
    if (cycles < 1 || points_per_cycle < 2) throw InvalidArgument("flux surrogate needs cycles >= 1, points >= 2");
  }
};

inline double flux_profile(const FluxSurrogateSpec& spec, double z, double bank) {
  const double h = spec.active_length;
  const double base = std::cos(std::numbers::pi * (z / h - 0.5) / spec.cosine_stretch);
  const double damping = std::exp(-spec.damping * z / h);
  const double ripple = 1.0 + spec.ripple_amplitude * std::cos(2.0 * std::numbers::pi * z / spec.ripple_period);
  const double u = (z - bank) / spec.bank_width;
  const double depression = 1.0 - spec.bank_depression * std::exp(-u * u);
  return spec.amplitude * base * damping * ripple * depression;
}

inline Dataset sample_flux_surrogate(const FluxSurrogateSpec& spec, RngStream& rng) {
  spec.validate();
  const std::vector<double> z_grid = linspace(0.0, spec.active_length, spec.points_per_cycle);
  const auto total = static_cast<Eigen::Index>(spec.cycles * spec.points_per_cycle);
  InputMatrix x(total, 2);
  VectorXd y(total);
  Eigen::Index row = 0;
  for (std::size_t c = 0; c < spec.cycles; ++c) {
    const double bank = rng.uniform(spec.bank_lo, spec.bank_hi);
    for (double z : z_grid) {
      x(row, 0) = z;
      x(row, 1) = bank;
      y[row] = flux_profile(spec, z, bank) * (1.0 + spec.relative_noise * rng.normal());
      ++row;
    }
  }
  return Dataset(std::move(x), std::move(y));
}

// ---------------------------------------------------------------------------
// CSV with header x_0,...,x_{d-1},y,role

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_dataset_csv(std::ostream& out, const Dataset& data) {
  for (std::size_t j = 0; j < data.dim(); ++j) out << "x_" << j << ',';
  out << "y,role\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (double v : data.input(i)) out << format_double(v) << ',';
    out << format_double(data.target(i)) << ',' << to_string(data.role(i)) << '\n';
  }
}

inline void write_dataset_csv(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot open '" + path + "' for writing");
  write_dataset_csv(out, data);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

inline Dataset read_dataset_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw InvalidArgument("empty dataset CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv_line(line);
  if (header.size() < 3 || header[header.size() - 2] != "y" || header.back() != "role") {
    throw InvalidArgument("dataset CSV header must be x_0,...,x_{d-1},y,role");
  }
  const std::size_t d = header.size() - 2;
  for (std::size_t j = 0; j < d; ++j) {
    if (header[j] != "x_" + std::to_string(j)) throw InvalidArgument("unexpected CSV column '" + header[j] + "'");
  }
  std::vector<double> xs, ys;
  std::vector<Role> roles;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != d + 2) throw InvalidArgument("CSV line " + std::to_string(line_no) + " has wrong arity");
    try {
      for (std::size_t j = 0; j < d; ++j) xs.push_back(std::stod(fields[j]));
      ys.push_back(std::stod(fields[d]));
    } catch (const std::logic_error&) {
      throw InvalidArgument("CSV line " + std::to_string(line_no) + " has a non-numeric value");
    }
    roles.push_back(role_from_string(fields[d + 1]));
  }
  const auto n = static_cast<Eigen::Index>(ys.size());
  InputMatrix x(n, static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(d); ++j) {
      x(i, j) = xs[static_cast<std::size_t>(i) * d + static_cast<std::size_t>(j)];
    }
  }
  return Dataset(std::move(x), Eigen::Map<const VectorXd>(ys.data(), n), std::move(roles));
}

inline Dataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open dataset '" + path + "'");
  return read_dataset_csv(in);
}

}  // namespace uqbench
