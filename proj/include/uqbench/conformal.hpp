#pragma once

#include "uqbench/core.hpp"
#include "uqbench/gp.hpp"
#include "uqbench/neural.hpp"

#include <algorithm>
#include <functional>
#include <memory>

namespace uqbench {

/// Rank u = ceil((1 - alpha)(n + 1)), in [1, n + 1]. u = n + 1 means the
/// requested coverage is out of reach with n scores.
inline std::size_t conformal_rank(std::size_t n, ConfidenceLevel level) {
  if (n == 0) throw InvalidArgument("conformal rank needs at least one score");
  const double target = level.coverage() * static_cast<double>(n + 1);
  const auto u = static_cast<std::size_t>(std::max(1.0, std::ceil(target - 1e-9)));
  return std::min(u, n + 1);
}

/// u-th smallest value (duplicates counted), or +inf when u > n.
inline double adjusted_quantile(std::vector<double> values, ConfidenceLevel level) {
  if (values.empty()) throw InvalidArgument("adjusted quantile of an empty list");
  const std::size_t u = conformal_rank(values.size(), level);
  if (u > values.size()) return std::numeric_limits<double>::infinity();
  auto nth = values.begin() + static_cast<std::ptrdiff_t>(u - 1);
  std::nth_element(values.begin(), nth, values.end());
  return *nth;
}

/// Always predicts the same value.
class ConstantRegressor final : public Regressor {
 public:
  ConstantRegressor(double value, std::size_t dim) : value_(value), dim_(dim) {}
  double predict_point(std::span<const double> x) const override {
    check_dim(x, dim_);
    return value_;
  }
  std::size_t input_dim() const override { return dim_; }

 private:
  double value_;
  std::size_t dim_;
};

/// Sorted calibration scores; quantiles are taken per requested level.
class CalibrationScores {
 public:
  CalibrationScores() = default;
  explicit CalibrationScores(std::vector<double> scores) : sorted_(std::move(scores)) {
    if (sorted_.empty()) throw RoleViolation("calibration set is empty");
    for (double s : sorted_) {
      if (!(s >= 0.0) || !std::isfinite(s)) throw InvalidArgument("nonconformity scores must be finite and >= 0");
    }
    std::sort(sorted_.begin(), sorted_.end());
  }

  double quantile(ConfidenceLevel level) const {
    const std::size_t u = conformal_rank(sorted_.size(), level);
    return u > sorted_.size() ? std::numeric_limits<double>::infinity() : sorted_[u - 1];
  }

  std::size_t size() const { return sorted_.size(); }
  const std::vector<double>& sorted() const { return sorted_; }

 private:
  std::vector<double> sorted_;
};

/// Split CP: center f(x), half-width the adjusted quantile of absolute
/// calibration residuals.
class SplitCpModel final : public IntervalPredictor {
 public:
  SplitCpModel() = default;
  SplitCpModel(std::shared_ptr<const Regressor> point, CalibrationScores scores, ConfidenceLevel level)
      : point_(std::move(point)), scores_(std::move(scores)), level_(level) {}

  double half_width(ConfidenceLevel level) const {
    require_fitted();
    return scores_.quantile(level);
  }
  double half_width() const { return half_width(level_); }
  bool unattainable(ConfidenceLevel level) const { return std::isinf(half_width(level)); }

  PredictionInterval predict_interval(std::span<const double> x, ConfidenceLevel level) const override {
    require_fitted();
    return PredictionInterval::symmetric(point_->predict_point(x), half_width(level));
  }

  std::vector<PredictionInterval> predict_intervals(const InputMatrix& x, ConfidenceLevel level) const override {
    require_fitted();
    const VectorXd centers = point_->predict_points(x);
    const double hw = half_width(level);
    std::vector<PredictionInterval> out;
    out.reserve(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < centers.size(); ++i) out.push_back(PredictionInterval::symmetric(centers[i], hw));
    return out;
  }

  std::size_t input_dim() const override {
    require_fitted();
    return point_->input_dim();
  }

  const CalibrationScores& scores() const { return scores_; }
  ConfidenceLevel level() const { return level_; }
  std::size_t calibration_size() const { return scores_.size(); }

 private:
  void require_fitted() const {
    if (!point_) throw NotFitted("split CP model used before fit");
  }

  std::shared_ptr<const Regressor> point_;
  CalibrationScores scores_;
  ConfidenceLevel level_{0.05};
};

/// Calibrates on the calibration-role points of `data`; the point model must
/// have been fitted on the train role only.
inline SplitCpModel fit_split_cp(std::shared_ptr<const Regressor> point, const Dataset& data, ConfidenceLevel level) {
  if (!point) throw InvalidArgument("split CP needs a point model");
  const Dataset cal = data.subset(Role::calibration);
  if (cal.size() == 0) throw RoleViolation("split CP needs calibration-role points");
  const VectorXd pred = point->predict_points(cal.inputs());
  std::vector<double> scores(cal.size());
  for (std::size_t i = 0; i < cal.size(); ++i) scores[i] = std::abs(cal.target(i) - pred[static_cast<Eigen::Index>(i)]);
  return {std::move(point), CalibrationScores(std::move(scores)), level};
}

// ---------------------------------------------------------------------------
// Residual-scale models

class ScaleModel {
 public:
  virtual ~ScaleModel() = default;
  /// Raw (unfloored) scale estimates, one per row.
  virtual VectorXd scales(const InputMatrix& x) const = 0;
};

enum class ScaleModelKind { gp, mlp, knn };

inline const char* to_string(ScaleModelKind k) {
  switch (k) {
    case ScaleModelKind::gp: return "gp";
    case ScaleModelKind::mlp: return "mlp";
    case ScaleModelKind::knn: return "knn";
  }
  return "?";
}

inline ScaleModelKind scale_model_from_string(const std::string& s) {
  if (s == "gp") return ScaleModelKind::gp;
  if (s == "mlp") return ScaleModelKind::mlp;
  if (s == "knn") return ScaleModelKind::knn;
  throw InvalidArgument("unknown residual model '" + s + "'");
}

/// GP regression of absolute residuals; the predictive mean is the scale.
class GpScaleModel final : public ScaleModel {
 public:
  explicit GpScaleModel(GpModel gp) : gp_(std::move(gp)) {}
  VectorXd scales(const InputMatrix& x) const override { return gp_.predict_points(x); }
  const GpModel& gp() const { return gp_; }

 private:
  GpModel gp_;
};

/// Mean absolute residual of the k nearest training inputs (Euclidean; ties
/// resolved by training order).
class KnnScaleModel final : public ScaleModel {
 public:
  KnnScaleModel(InputMatrix x, VectorXd abs_residuals, std::size_t k)
      : x_(std::move(x)), r_(std::move(abs_residuals)), k_(std::min<std::size_t>(k, static_cast<std::size_t>(x_.rows()))) {
    if (k == 0) throw InvalidArgument("k-NN scale model needs k >= 1");
    if (x_.rows() == 0 || x_.rows() != r_.size()) throw TooFewPoints("k-NN scale model needs residuals");
  }

  VectorXd scales(const InputMatrix& q) const override {
    if (q.cols() != x_.cols()) throw DimensionMismatch("query width differs from k-NN inputs");
    VectorXd out(q.rows());
    std::vector<std::pair<double, Eigen::Index>> d(static_cast<std::size_t>(x_.rows()));
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
      for (Eigen::Index j = 0; j < x_.rows(); ++j) d[static_cast<std::size_t>(j)] = {(x_.row(j) - q.row(i)).squaredNorm(), j};
      std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k_), d.end());
      double s = 0.0;
      for (std::size_t n = 0; n < k_; ++n) s += r_[d[n].second];
      out[i] = s / static_cast<double>(k_);
    }
    return out;
  }

 private:
  InputMatrix x_;
  VectorXd r_;
  std::size_t k_;
};

/// MLP fitted to absolute residuals with squared error, read through a
/// smooth positive map tau * softplus(z / tau).
class MlpScaleModel final : public ScaleModel {
 public:
  MlpScaleModel(MlpModel model, double tau) : model_(std::move(model)), tau_(tau) {
    if (!(tau_ > 0.0)) throw InvalidArgument("MLP scale smoothing must be > 0");
  }
  VectorXd scales(const InputMatrix& x) const override {
    return predict_batch(model_, x).mean.unaryExpr([this](double z) { return tau_ * softplus(z / tau_); });
  }
  const MlpModel& model() const { return model_; }

 private:
  MlpModel model_;
  double tau_;
};

struct ScaleModelConfig {
  ScaleModelKind kind = ScaleModelKind::gp;
  KernelFamily gp_kernel = KernelFamily::squared_exponential;
  std::size_t knn_k = 20;
  std::vector<std::size_t> mlp_hidden{32, 32};
  Activation mlp_activation = Activation::relu;
  TrainConfig mlp_train = [] {
    TrainConfig c;
    c.loss = LossKind::mse;
    c.epochs = 300;
    c.batch_size = 64;
    return c;
  }();
};

inline std::shared_ptr<const ScaleModel> fit_scale_model(const ScaleModelConfig& cfg, const InputMatrix& x,
                                                          const VectorXd& abs_residuals, RngStream& rng) {
  if (x.rows() == 0 || x.rows() != abs_residuals.size()) throw TooFewPoints("residual model needs data");
  switch (cfg.kind) {
    case ScaleModelKind::gp: {
      GpModel gp = select_hyperparameters(x, abs_residuals, default_grid(cfg.gp_kernel, x, abs_residuals));
      return std::make_shared<GpScaleModel>(refine_hyperparameters(x, abs_residuals, std::move(gp)));
    }
    case ScaleModelKind::knn:
      return std::make_shared<KnnScaleModel>(x, abs_residuals, cfg.knn_k);
    case ScaleModelKind::mlp: {
      const MlpSpec spec = MlpSpec::make(static_cast<std::size_t>(x.cols()), cfg.mlp_hidden, cfg.mlp_activation);
      const double tau = std::max(0.05 * abs_residuals.mean(), 1e-12);
      return std::make_shared<MlpScaleModel>(train(spec, cfg.mlp_train, x, abs_residuals, rng), tau);
    }
  }
  throw InvalidArgument("unknown residual model");
}

// ---------------------------------------------------------------------------
// Studentized-residual CP

/// SRCP: scores |y - f(x)| / sigma(x); half-width sigma(x) times their
/// adjusted quantile. sigma(x) is floored at 1e-3 times the median absolute
/// calibration residual.
class SrcpModel final : public IntervalPredictor {
 public:
  SrcpModel() = default;
  SrcpModel(std::shared_ptr<const Regressor> point, std::shared_ptr<const ScaleModel> scale, CalibrationScores scores,
            double scale_floor, ConfidenceLevel level)
      : point_(std::move(point)), scale_(std::move(scale)), scores_(std::move(scores)), floor_(scale_floor),
        level_(level) {}

  VectorXd floored_scales(const InputMatrix& x) const {
    require_fitted();
    return scale_->scales(x).cwiseMax(floor_);
  }

  double quantile(ConfidenceLevel level) const {
    require_fitted();
    return scores_.quantile(level);
  }
  bool unattainable(ConfidenceLevel level) const { return std::isinf(quantile(level)); }

  PredictionInterval predict_interval(std::span<const double> x, ConfidenceLevel level) const override {
    check_dim(x, input_dim());
    const InputMatrix row = Eigen::Map<const InputMatrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
    return predict_intervals(row, level).front();
  }

  std::vector<PredictionInterval> predict_intervals(const InputMatrix& x, ConfidenceLevel level) const override {
    require_fitted();
    const VectorXd centers = point_->predict_points(x);
    const VectorXd s = floored_scales(x);
    const double q = quantile(level);
    std::vector<PredictionInterval> out;
    out.reserve(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index i = 0; i < centers.size(); ++i) {
      out.push_back(PredictionInterval::symmetric(centers[i], std::isinf(q) ? q : s[i] * q));
    }
    return out;
  }

  std::size_t input_dim() const override {
    require_fitted();
    return point_->input_dim();
  }

  const CalibrationScores& scores() const { return scores_; }
  double scale_floor() const { return floor_; }
  ConfidenceLevel level() const { return level_; }

 private:
  void require_fitted() const {
    if (!point_) throw NotFitted("SRCP model used before fit");
  }

  std::shared_ptr<const Regressor> point_;
  std::shared_ptr<const ScaleModel> scale_;
  CalibrationScores scores_;
  double floor_ = 0.0;
  ConfidenceLevel level_{0.05};
};

/// Calibrates a fitted point model and residual-scale model on the
/// calibration role of `data`.
inline SrcpModel calibrate_srcp(std::shared_ptr<const Regressor> point, std::shared_ptr<const ScaleModel> scale,
                                const Dataset& data, ConfidenceLevel level) {
  if (!point || !scale) throw InvalidArgument("SRCP needs a point model and a scale model");
  const Dataset cal = data.subset(Role::calibration);
  if (cal.size() == 0) throw RoleViolation("SRCP needs calibration-role points");
  const VectorXd pred = point->predict_points(cal.inputs());
  const VectorXd raw = scale->scales(cal.inputs());
  std::vector<double> abs_res(cal.size());
  for (std::size_t i = 0; i < cal.size(); ++i) abs_res[i] = std::abs(cal.target(i) - pred[static_cast<Eigen::Index>(i)]);
  const double floor = std::max(1e-3 * median_of(abs_res), std::numeric_limits<double>::min());
  std::vector<double> scores(cal.size());
  for (std::size_t i = 0; i < cal.size(); ++i) scores[i] = abs_res[i] / std::max(raw[static_cast<Eigen::Index>(i)], floor);
  return {std::move(point), std::move(scale), CalibrationScores(std::move(scores)), floor, level};
}

/// Fits the residual-scale model on |y - f(x)| over the train role of
/// `data`, then calibrates on its calibration role.
inline SrcpModel fit_srcp(std::shared_ptr<const Regressor> point, const ScaleModelConfig& cfg, const Dataset& data,
                          ConfidenceLevel level, RngStream& rng) {
  if (!point) throw InvalidArgument("SRCP needs a point model");
  const Dataset train = data.subset(Role::train);
  if (train.size() == 0) throw RoleViolation("SRCP residual model needs train-role points");
  if (data.count(Role::calibration) == 0) throw RoleViolation("SRCP needs calibration-role points");
  const VectorXd abs_res = (train.targets() - point->predict_points(train.inputs())).cwiseAbs();
  auto scale = fit_scale_model(cfg, train.inputs(), abs_res, rng);
  return calibrate_srcp(std::move(point), std::move(scale), data, level);
}

}  // namespace uqbench
