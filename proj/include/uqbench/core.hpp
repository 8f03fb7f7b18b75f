#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>

namespace uqbench {

using InputMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Errors

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define UQBENCH_DEFINE_ERROR(Name)        \
  class Name : public Error {             \
   public:                                \
    using Error::Error;                   \
  }

UQBENCH_DEFINE_ERROR(InvalidArgument);
UQBENCH_DEFINE_ERROR(DimensionMismatch);
UQBENCH_DEFINE_ERROR(NotFitted);
UQBENCH_DEFINE_ERROR(TooFewPoints);
UQBENCH_DEFINE_ERROR(CholeskyFailure);
UQBENCH_DEFINE_ERROR(DivergenceError);
UQBENCH_DEFINE_ERROR(OutOfDomain);
UQBENCH_DEFINE_ERROR(RoleViolation);
UQBENCH_DEFINE_ERROR(ConfigError);

#undef UQBENCH_DEFINE_ERROR

// ---------------------------------------------------------------------------
// Scalar domain types

/// Miscoverage level alpha; the nominal coverage of an interval is 1 - alpha.
class ConfidenceLevel {
 public:
  explicit ConfidenceLevel(double alpha) : alpha_(alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) {
      throw InvalidArgument("alpha must lie in (0, 1), got " + std::to_string(alpha));
    }
  }

  double alpha() const { return alpha_; }
  double coverage() const { return 1.0 - alpha_; }

  /// Two-sided standard-normal quantile z_{1 - alpha/2}.
  double z_value() const {
    static const boost::math::normal_distribution<double> standard;
    return boost::math::quantile(standard, 1.0 - alpha_ / 2.0);
  }

 private:
  double alpha_;
};

struct GaussianPrediction {
  double mean = 0.0;
  double std = 1.0;

  GaussianPrediction() = default;
  GaussianPrediction(double mean_, double std_) : mean(mean_), std(std_) {
    if (!std::isfinite(mean_) || !std::isfinite(std_) || !(std_ > 0.0)) {
      throw InvalidArgument("Gaussian prediction needs finite mean and positive finite std");
    }
  }
  double variance() const { return std * std; }
};

/// Closed interval [lower, upper] with the point prediction it is built around.
///
/// The half-width is stored as produced by the method instead of being
/// recomputed from the bounds, so methods with a constant width report a
/// bit-exact constant.
class PredictionInterval {
 public:
  PredictionInterval() = default;

  static PredictionInterval symmetric(double center, double half_width) {
    if (!(half_width >= 0.0)) throw InvalidArgument("half-width must be non-negative");
    PredictionInterval out;
    out.lower_ = center - half_width;
    out.upper_ = center + half_width;
    out.center_ = center;
    out.half_width_ = half_width;
    return out;
  }

  static PredictionInterval bounds(double lower, double center, double upper) {
    if (!(lower <= center && center <= upper)) {
      throw InvalidArgument("interval must satisfy lower <= center <= upper");
    }
    PredictionInterval out;
    out.lower_ = lower;
    out.upper_ = upper;
    out.center_ = center;
    out.half_width_ = 0.5 * (upper - lower);
    return out;
  }

  double lower() const { return lower_; }
  double upper() const { return upper_; }
  double center() const { return center_; }
  double half_width() const { return half_width_; }
  bool contains(double y) const { return lower_ <= y && y <= upper_; }
  bool is_finite() const { return std::isfinite(lower_) && std::isfinite(upper_); }

 private:
  double lower_ = 0.0;
  double upper_ = 0.0;
  double center_ = 0.0;
  double half_width_ = 0.0;
};

/// Center +/- z_{1-alpha/2} * sigma.
inline PredictionInterval gaussian_interval(const GaussianPrediction& pred, ConfidenceLevel level) {
  return PredictionInterval::symmetric(pred.mean, level.z_value() * pred.std);
}

// ---------------------------------------------------------------------------
// Random streams

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seeded 64-bit random stream. A (seed, stream id) pair fully determines the
/// sequence; child streams are derived by hashing the parent id with a child
/// index so independent replicas never share state.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream_id = 0)
      : seed_(seed), stream_id_(stream_id), engine_(splitmix64(seed ^ splitmix64(stream_id ^ 0xd1b54a32d192ed03ULL))) {
    engine_.discard(16);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

  RngStream derive(std::uint64_t child) const {
    return RngStream(seed_, splitmix64(stream_id_ ^ splitmix64(child + 0x632be59bd9b4e019ULL)));
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n).
  std::size_t below(std::size_t n) {
    if (n == 0) throw InvalidArgument("below(0)");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t r = engine_();
    while (r >= limit) r = engine_();
    return static_cast<std::size_t>(r % n);
  }

  /// Standard normal draw (Marsaglia polar method, spare value cached).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u = 0.0, v = 0.0, s = 0.0;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double factor = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * factor;
    has_spare_ = true;
    return u * factor;
  }

  /// Fisher-Yates shuffle driven by this stream.
  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::swap(values[i - 1], values[below(i)]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline double standard_normal(RngStream& rng) { return rng.normal(); }

// ---------------------------------------------------------------------------
// Dataset

enum class Role : std::uint8_t { train, calibration, test };

inline const char* to_string(Role role) {
  switch (role) {
    case Role::train: return "train";
    case Role::calibration: return "calibration";
    case Role::test: return "test";
  }
  return "?";
}

inline Role role_from_string(const std::string& text) {
  if (text == "train") return Role::train;
  if (text == "calibration") return Role::calibration;
  if (text == "test") return Role::test;
  throw InvalidArgument("unknown role '" + text + "'");
}

/// Inputs (one row per point), scalar targets and a role per point.
class Dataset {
 public:
  Dataset() = default;

  Dataset(InputMatrix inputs, VectorXd targets, std::vector<Role> roles)
      : inputs_(std::move(inputs)), targets_(std::move(targets)), roles_(std::move(roles)) {
    validate();
  }

  /// All points assigned to the train role.
  Dataset(InputMatrix inputs, VectorXd targets)
      : Dataset(std::move(inputs), targets, std::vector<Role>(static_cast<std::size_t>(targets.size()), Role::train)) {}

  std::size_t size() const { return static_cast<std::size_t>(targets_.size()); }
  std::size_t dim() const { return static_cast<std::size_t>(inputs_.cols()); }
  const InputMatrix& inputs() const { return inputs_; }
  const VectorXd& targets() const { return targets_; }
  const std::vector<Role>& roles() const { return roles_; }

  std::span<const double> input(std::size_t i) const {
    return {inputs_.row(static_cast<Eigen::Index>(i)).data(), dim()};
  }
  double target(std::size_t i) const { return targets_[static_cast<Eigen::Index>(i)]; }
  Role role(std::size_t i) const { return roles_[i]; }

  std::size_t count(Role role) const {
    return static_cast<std::size_t>(std::count(roles_.begin(), roles_.end(), role));
  }

  std::vector<std::size_t> indices(Role role) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < roles_.size(); ++i) {
      if (roles_[i] == role) out.push_back(i);
    }
    return out;
  }

  /// Rows and targets of one role, all re-labelled with that role.
  Dataset subset(Role role) const { return select(indices(role), role); }

  Dataset select(const std::vector<std::size_t>& rows, Role role) const {
    InputMatrix x(static_cast<Eigen::Index>(rows.size()), inputs_.cols());
    VectorXd y(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) {
      x.row(static_cast<Eigen::Index>(k)) = inputs_.row(static_cast<Eigen::Index>(rows[k]));
      y[static_cast<Eigen::Index>(k)] = targets_[static_cast<Eigen::Index>(rows[k])];
    }
    return Dataset(std::move(x), std::move(y), std::vector<Role>(rows.size(), role));
  }

  Dataset with_roles(std::vector<Role> roles) const { return Dataset(inputs_, targets_, std::move(roles)); }

 private:
  void validate() const {
    if (inputs_.cols() < 1) throw InvalidArgument("dataset inputs need dimension >= 1");
    if (inputs_.rows() != targets_.size() || static_cast<std::size_t>(targets_.size()) != roles_.size()) {
      throw DimensionMismatch("dataset inputs, targets and roles differ in length");
    }
    if (!inputs_.allFinite() || !targets_.allFinite()) {
      throw InvalidArgument("dataset contains non-finite values");
    }
  }

  InputMatrix inputs_;
  VectorXd targets_;
  std::vector<Role> roles_;
};

struct SplitFractions {
  double train = 0.5;
  double calibration = 0.25;
  double test = 0.25;
};

/// Reassign roles by a seeded shuffle. Calibration and test receive
/// floor(fraction * n) points each; train takes the remainder.
inline Dataset split_dataset(const Dataset& data, SplitFractions fractions, RngStream& rng) {
  const double sum = fractions.train + fractions.calibration + fractions.test;
  if (!(fractions.train > 0.0 && fractions.calibration > 0.0 && fractions.test > 0.0) ||
      std::abs(sum - 1.0) > 1e-9) {
    throw InvalidArgument("split fractions must be positive and sum to 1");
  }
  const std::size_t n = data.size();
  if (n < 3) throw TooFewPoints("splitting needs at least 3 points");
  // The guard keeps e.g. 0.25 * 1000 from landing on 249.99999999999997.
  const auto part = [n](double f) {
    return static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9));
  };
  const std::size_t n_cal = part(fractions.calibration);
  const std::size_t n_test = part(fractions.test);
  if (n_cal == 0 || n_test == 0 || n_cal + n_test >= n) {
    throw TooFewPoints("split would leave an empty partition");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  std::vector<Role> roles(n, Role::train);
  for (std::size_t k = 0; k < n_cal; ++k) roles[order[k]] = Role::calibration;
  for (std::size_t k = n_cal; k < n_cal + n_test; ++k) roles[order[k]] = Role::test;
  return data.with_roles(std::move(roles));
}

// ---------------------------------------------------------------------------
// Predictor interfaces

/// Point regressor used as the mean model for conformal methods.
class Regressor {
 public:
  virtual ~Regressor() = default;
  virtual double predict_point(std::span<const double> x) const = 0;
  virtual std::size_t input_dim() const = 0;

  virtual VectorXd predict_points(const InputMatrix& x) const {
    VectorXd out(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      out[i] = predict_point(std::span<const double>(x.row(i).data(), static_cast<std::size_t>(x.cols())));
    }
    return out;
  }
};

/// Anything that turns an input into a prediction interval.
class IntervalPredictor {
 public:
  virtual ~IntervalPredictor() = default;
  virtual PredictionInterval predict_interval(std::span<const double> x, ConfidenceLevel level) const = 0;
  virtual std::size_t input_dim() const = 0;

  /// One interval per row. Sampling-based predictors override this to share
  /// their draws across the batch.
  virtual std::vector<PredictionInterval> predict_intervals(const InputMatrix& x, ConfidenceLevel level) const {
    std::vector<PredictionInterval> out;
    out.reserve(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      out.push_back(predict_interval(std::span<const double>(x.row(i).data(), static_cast<std::size_t>(x.cols())), level));
    }
    return out;
  }
};

inline void check_dim(std::span<const double> x, std::size_t expected) {
  if (x.size() != expected) {
    throw DimensionMismatch("input has dimension " + std::to_string(x.size()) + ", model expects " +
                            std::to_string(expected));
  }
}

// ---------------------------------------------------------------------------
// Small numerics shared by several modules

inline double softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Inverse of softplus for y > 0.
inline double inverse_softplus(double y) {
  if (y > 30.0) return y;
  return std::log(std::expm1(y));
}

/// Mean accumulated in extended precision; a constant sequence returns its
/// value exactly.
inline double mean_of(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("mean of an empty sequence");
  long double sum = 0.0L;
  for (double v : values) sum += v;
  return static_cast<double>(sum / static_cast<long double>(values.size()));
}

inline double median_of(std::vector<double> values) {
  if (values.empty()) throw InvalidArgument("median of an empty sequence");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace uqbench
