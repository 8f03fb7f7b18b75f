#pragma once

#include "uqbench/core.hpp"

#include <nlohmann/json.hpp>

#include <numbers>
#include <string>

namespace uqbench {

enum class Activation { relu, tanh };
enum class LossKind { gaussian_nll, mse };
enum class InitScheme { automatic, he_uniform, glorot_uniform };

inline const char* to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }
inline const char* to_string(LossKind l) { return l == LossKind::gaussian_nll ? "nll" : "mse"; }

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw InvalidArgument("unknown activation '" + s + "'");
}

inline LossKind loss_from_string(const std::string& s) {
  if (s == "nll" || s == "gaussian-nll") return LossKind::gaussian_nll;
  if (s == "mse") return LossKind::mse;
  throw InvalidArgument("unknown loss '" + s + "'");
}

/// Floor added to the softplus std head.
inline constexpr double kStdFloor = 1e-6;

/// Dense network shape. widths = {input, hidden..., 2}; the two outputs are
/// the mean and the raw (pre-softplus) std.
struct MlpSpec {
  std::vector<std::size_t> widths;
  Activation activation = Activation::relu;
  double dropout = 0.0;
  InitScheme init = InitScheme::automatic;

  /// Convenience: input width, hidden widths, two-output head.
  static MlpSpec make(std::size_t input_dim, const std::vector<std::size_t>& hidden, Activation act,
                      double dropout = 0.0) {
    MlpSpec s;
    s.widths.push_back(input_dim);
    s.widths.insert(s.widths.end(), hidden.begin(), hidden.end());
    s.widths.push_back(2);
    s.activation = act;
    s.dropout = dropout;
    return s;
  }

  void validate() const {
    if (widths.size() < 3) throw InvalidArgument("MLP needs at least one hidden layer");
    for (std::size_t w : widths) {
      if (w == 0) throw InvalidArgument("MLP layer widths must be positive");
    }
    if (widths.back() != 2) throw InvalidArgument("MLP output layer must have width 2 (mean, std)");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidArgument("dropout rate must be in [0, 1)");
  }

  std::size_t layer_count() const { return widths.size() - 1; }
  std::size_t input_dim() const { return widths.front(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) n += widths[l + 1] * (widths[l] + 1);
    return n;
  }

  /// Offset of layer l's weight block; its bias follows the weights.
  std::size_t weight_offset(std::size_t l) const {
    std::size_t n = 0;
    for (std::size_t k = 0; k < l; ++k) n += widths[k + 1] * (widths[k] + 1);
    return n;
  }
};

/// Per-feature affine standardization fitted on training data.
struct Standardizer {
  VectorXd x_mean;
  VectorXd x_scale;
  double y_mean = 0.0;
  double y_scale = 1.0;

  static Standardizer identity(std::size_t dim) {
    return {VectorXd::Zero(static_cast<Eigen::Index>(dim)), VectorXd::Ones(static_cast<Eigen::Index>(dim)), 0.0, 1.0};
  }

  /// z-scores; a constant column keeps scale 1.
  static Standardizer fit(const InputMatrix& x, const VectorXd& y) {
    Standardizer s;
    s.x_mean = x.colwise().mean().transpose();
    s.x_scale.resize(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double var = (x.col(j).array() - s.x_mean[j]).square().mean();
      s.x_scale[j] = var > 1e-24 ? std::sqrt(var) : 1.0;
    }
    s.y_mean = y.mean();
    const double yvar = (y.array() - s.y_mean).square().mean();
    s.y_scale = yvar > 1e-24 ? std::sqrt(yvar) : 1.0;
    return s;
  }

  /// Rows of `x` as standardized columns (features x batch).
  MatrixXd inputs(const InputMatrix& x) const {
    MatrixXd out = x.transpose();
    out.colwise() -= x_mean;
    out.array().colwise() /= x_scale.array();
    return out;
  }

  VectorXd input(std::span<const double> x) const {
    VectorXd out(static_cast<Eigen::Index>(x.size()));
    for (Eigen::Index j = 0; j < out.size(); ++j) out[j] = (x[static_cast<std::size_t>(j)] - x_mean[j]) / x_scale[j];
    return out;
  }

  double target(double y) const { return (y - y_mean) / y_scale; }
  VectorXd targets(const VectorXd& y) const { return (y.array() - y_mean) / y_scale; }
  double mean_to_units(double m) const { return m * y_scale + y_mean; }
  double std_to_units(double s) const { return s * y_scale; }
};

/// Parameters of a dense network stored in one flat vector. Layer l's weight
/// matrix (widths[l+1] x widths[l], column-major) is followed by its bias.
class MlpModel {
 public:
  MlpModel() = default;

  MlpModel(MlpSpec spec, VectorXd params, Standardizer scaler)
      : spec_(std::move(spec)), params_(std::move(params)), scaler_(std::move(scaler)) {
    spec_.validate();
    if (static_cast<std::size_t>(params_.size()) != spec_.parameter_count()) {
      throw DimensionMismatch("parameter vector does not match the MLP shape");
    }
    if (static_cast<std::size_t>(scaler_.x_mean.size()) != spec_.input_dim()) {
      throw DimensionMismatch("standardizer does not match the MLP input width");
    }
    if (!params_.allFinite()) throw InvalidArgument("MLP parameters must be finite");
  }

  static MlpModel zeros(const MlpSpec& spec) {
    spec.validate();
    return {spec, VectorXd::Zero(static_cast<Eigen::Index>(spec.parameter_count())),
            Standardizer::identity(spec.input_dim())};
  }

  /// He-uniform weights for ReLU, Glorot-uniform for tanh, zero biases.
  static MlpModel initialize(const MlpSpec& spec, RngStream& rng) {
    MlpModel m = zeros(spec);
    for (std::size_t l = 0; l < spec.layer_count(); ++l) {
      const double fan_in = static_cast<double>(spec.widths[l]);
      const double fan_out = static_cast<double>(spec.widths[l + 1]);
      InitScheme scheme = spec.init;
      if (scheme == InitScheme::automatic) {
        scheme = spec.activation == Activation::relu ? InitScheme::he_uniform : InitScheme::glorot_uniform;
      }
      const double limit =
          scheme == InitScheme::he_uniform ? std::sqrt(6.0 / fan_in) : std::sqrt(6.0 / (fan_in + fan_out));
      auto w = m.weight(l);
      for (Eigen::Index j = 0; j < w.cols(); ++j)
        for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = rng.uniform(-limit, limit);
    }
    return m;
  }

  const MlpSpec& spec() const { return spec_; }
  const VectorXd& parameters() const { return params_; }
  VectorXd& parameters() { return params_; }
  const Standardizer& standardizer() const { return scaler_; }
  void set_standardizer(Standardizer s) { scaler_ = std::move(s); }
  std::size_t input_dim() const { return spec_.input_dim(); }

  Eigen::Map<MatrixXd> weight(std::size_t l) {
    return {params_.data() + spec_.weight_offset(l), rows(l), cols(l)};
  }
  Eigen::Map<const MatrixXd> weight(std::size_t l) const {
    return {params_.data() + spec_.weight_offset(l), rows(l), cols(l)};
  }
  Eigen::Map<VectorXd> bias(std::size_t l) {
    return {params_.data() + spec_.weight_offset(l) + rows(l) * cols(l), rows(l)};
  }
  Eigen::Map<const VectorXd> bias(std::size_t l) const {
    return {params_.data() + spec_.weight_offset(l) + rows(l) * cols(l), rows(l)};
  }

 private:
  Eigen::Index rows(std::size_t l) const { return static_cast<Eigen::Index>(spec_.widths[l + 1]); }
  Eigen::Index cols(std::size_t l) const { return static_cast<Eigen::Index>(spec_.widths[l]); }

  MlpSpec spec_;
  VectorXd params_;
  Standardizer scaler_;
};

// ---------------------------------------------------------------------------
// Forward / backward in standardized space

namespace detail {

inline void activate(Activation a, MatrixXd& z) {
  if (a == Activation::relu) {
    z = z.cwiseMax(0.0);
  } else {
    z = z.array().tanh().matrix();
  }
}

/// Derivative of the activation, expressed through its output.
inline MatrixXd activation_slope(Activation a, const MatrixXd& out) {
  if (a == Activation::relu) return (out.array() > 0.0).cast<double>().matrix();
  return (1.0 - out.array().square()).matrix();
}

/// Layer outputs of one pass. hidden[l] is the post-activation output of
/// hidden layer l before dropout; inputs[l] is what layer l consumed.
struct ForwardTrace {
  std::vector<MatrixXd> inputs;
  std::vector<MatrixXd> hidden;
  MatrixXd out;  // 2 x batch
};

/// `masks`, when given, holds one (units x batch) matrix per hidden layer with
/// entries 0 or 1/(1-p).
inline ForwardTrace forward_trace(const MlpModel& m, const MatrixXd& input, const std::vector<MatrixXd>* masks) {
  const MlpSpec& spec = m.spec();
  const std::size_t layers = spec.layer_count();
  ForwardTrace t;
  t.inputs.reserve(layers);
  t.hidden.reserve(layers - 1);
  MatrixXd a = input;
  for (std::size_t l = 0; l < layers; ++l) {
    t.inputs.push_back(a);
    MatrixXd z = m.weight(l) * a;
    z.colwise() += m.bias(l);
    if (l + 1 == layers) {
      t.out = std::move(z);
      break;
    }
    activate(spec.activation, z);
    t.hidden.push_back(z);
    a = masks ? MatrixXd(z.cwiseProduct((*masks)[l])) : z;
  }
  return t;
}

/// Per-column loss and d(loss)/d(out) for the two-output head.
inline double head_loss(LossKind kind, const MatrixXd& out, const VectorXd& y, MatrixXd* grad) {
  const Eigen::Index b = out.cols();
  double total = 0.0;
  if (grad) grad->setZero(2, b);
  for (Eigen::Index j = 0; j < b; ++j) {
    const double mu = out(0, j);
    const double r = y[j] - mu;
    if (kind == LossKind::mse) {
      total += r * r;
      if (grad) (*grad)(0, j) = -2.0 * r;
    } else {
      const double raw = out(1, j);
      const double s = softplus(raw) + kStdFloor;
      total += 0.5 * std::log(2.0 * std::numbers::pi) + std::log(s) + r * r / (2.0 * s * s);
      if (grad) {
        (*grad)(0, j) = -r / (s * s);
        (*grad)(1, j) = (1.0 / s - r * r / (s * s * s)) * sigmoid(raw);
      }
    }
  }
  return total / static_cast<double>(b);
}

inline double l2_penalty(const MlpModel& m) {
  double s = 0.0;
  for (std::size_t l = 0; l < m.spec().layer_count(); ++l) s += m.weight(l).squaredNorm();
  return s;
}

}  // namespace detail

struct LossAndGradient {
  double loss = 0.0;
  VectorXd gradient;
};

/// Mean loss over a standardized batch (features x batch) plus l2 * sum(W^2),
/// and its exact gradient with respect to every parameter.
inline LossAndGradient loss_and_gradient(const MlpModel& m, const MatrixXd& input, const VectorXd& target,
                                         LossKind kind, double l2 = 0.0, const std::vector<MatrixXd>* masks = nullptr) {
  const MlpSpec& spec = m.spec();
  const detail::ForwardTrace t = detail::forward_trace(m, input, masks);
  MatrixXd delta;
  LossAndGradient out;
  out.loss = detail::head_loss(kind, t.out, target, &delta);
  delta /= static_cast<double>(input.cols());
  if (l2 > 0.0) out.loss += l2 * detail::l2_penalty(m);
  if (!std::isfinite(out.loss)) throw DivergenceError("non-finite training loss");

  out.gradient = VectorXd::Zero(m.parameters().size());
  MlpModel grad_view(spec, VectorXd::Zero(m.parameters().size()), m.standardizer());
  for (std::size_t l = spec.layer_count(); l-- > 0;) {
    grad_view.weight(l) = delta * t.inputs[l].transpose();
    if (l2 > 0.0) grad_view.weight(l) += 2.0 * l2 * m.weight(l);
    grad_view.bias(l) = delta.rowwise().sum();
    if (l == 0) break;
    MatrixXd back = m.weight(l).transpose() * delta;
    if (masks) back = back.cwiseProduct((*masks)[l - 1]);
    delta = back.cwiseProduct(detail::activation_slope(spec.activation, t.hidden[l - 1]));
  }
  out.gradient = std::move(grad_view.parameters());
  return out;
}

/// Gradient of the mean batch loss for raw-unit inputs and targets; the
/// model's standardizer is applied first.
inline LossAndGradient backward(const MlpModel& m, const InputMatrix& x, const VectorXd& y, LossKind kind,
                                double l2 = 0.0) {
  if (static_cast<std::size_t>(x.cols()) != m.input_dim()) throw DimensionMismatch("batch width differs from MLP input");
  if (x.rows() == 0 || x.rows() != y.size()) throw DimensionMismatch("batch is empty or ragged");
  if (!x.allFinite() || !y.allFinite() || !m.parameters().allFinite()) {
    throw InvalidArgument("backward needs finite inputs and parameters");
  }
  return loss_and_gradient(m, m.standardizer().inputs(x), m.standardizer().targets(y), kind, l2);
}

/// Same objective as `backward`, without the gradient.
inline double batch_loss(const MlpModel& m, const InputMatrix& x, const VectorXd& y, LossKind kind, double l2 = 0.0) {
  const detail::ForwardTrace t = detail::forward_trace(m, m.standardizer().inputs(x), nullptr);
  double loss = detail::head_loss(kind, t.out, m.standardizer().targets(y), nullptr);
  if (l2 > 0.0) loss += l2 * detail::l2_penalty(m);
  return loss;
}

/// Inverted-dropout masks: each entry is 0 with probability p, else 1/(1-p).
/// With `shared` every column of a layer uses the same unit pattern.
inline std::vector<MatrixXd> sample_masks(const MlpSpec& spec, Eigen::Index batch, RngStream& rng, bool shared) {
  std::vector<MatrixXd> masks;
  const double p = spec.dropout;
  const double keep_scale = 1.0 / (1.0 - p);
  for (std::size_t l = 1; l + 1 < spec.widths.size(); ++l) {
    const auto units = static_cast<Eigen::Index>(spec.widths[l]);
    MatrixXd mask(units, batch);
    if (shared) {
      VectorXd col(units);
      for (Eigen::Index i = 0; i < units; ++i) col[i] = rng.uniform() < p ? 0.0 : keep_scale;
      mask = col.replicate(1, batch);
    } else {
      for (Eigen::Index j = 0; j < batch; ++j)
        for (Eigen::Index i = 0; i < units; ++i) mask(i, j) = rng.uniform() < p ? 0.0 : keep_scale;
    }
    masks.push_back(std::move(mask));
  }
  return masks;
}

/// Raw-unit means and stds for a batch of raw inputs (one row each).
struct BatchPrediction {
  VectorXd mean;
  VectorXd std;
};

inline BatchPrediction predict_batch(const MlpModel& m, const InputMatrix& x, const std::vector<MatrixXd>* masks = nullptr) {
  if (static_cast<std::size_t>(x.cols()) != m.input_dim()) throw DimensionMismatch("input width differs from MLP input");
  const detail::ForwardTrace t = detail::forward_trace(m, m.standardizer().inputs(x), masks);
  BatchPrediction out{VectorXd(x.rows()), VectorXd(x.rows())};
  const Standardizer& s = m.standardizer();
  for (Eigen::Index j = 0; j < x.rows(); ++j) {
    out.mean[j] = s.mean_to_units(t.out(0, j));
    out.std[j] = s.std_to_units(softplus(t.out(1, j)) + kStdFloor);
  }
  return out;
}

/// Deterministic pass (dropout off).
inline GaussianPrediction forward(const MlpModel& m, std::span<const double> x) {
  check_dim(x, m.input_dim());
  const InputMatrix row = Eigen::Map<const InputMatrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
  const BatchPrediction p = predict_batch(m, row);
  return {p.mean[0], p.std[0]};
}

/// Stochastic pass: every hidden unit dropped with the spec's rate.
inline GaussianPrediction forward(const MlpModel& m, std::span<const double> x, RngStream& rng) {
  check_dim(x, m.input_dim());
  if (m.spec().dropout == 0.0) return forward(m, x);
  const InputMatrix row = Eigen::Map<const InputMatrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
  const auto masks = sample_masks(m.spec(), 1, rng, false);
  const BatchPrediction p = predict_batch(m, row, &masks);
  return {p.mean[0], p.std[0]};
}

/// Point predictions from the mean head with dropout off.
class MlpRegressor final : public Regressor {
 public:
  explicit MlpRegressor(MlpModel model) : model_(std::move(model)) {}

  double predict_point(std::span<const double> x) const override { return forward(model_, x).mean; }
  VectorXd predict_points(const InputMatrix& x) const override { return predict_batch(model_, x).mean; }
  std::size_t input_dim() const override { return model_.input_dim(); }
  const MlpModel& model() const { return model_; }

 private:
  MlpModel model_;
};

inline double gaussian_nll(const GaussianPrediction& pred, double y) {
  const double r = y - pred.mean;
  return 0.5 * std::log(2.0 * std::numbers::pi * pred.variance()) + r * r / (2.0 * pred.variance());
}

// ---------------------------------------------------------------------------
// Optimization

class Adam {
 public:
  Adam(Eigen::Index n, double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(learning_rate), b1_(beta1), b2_(beta2), eps_(eps), m_(VectorXd::Zero(n)), v_(VectorXd::Zero(n)) {}

  void step(VectorXd& params, const VectorXd& grad) {
    ++t_;
    m_ = b1_ * m_ + (1.0 - b1_) * grad;
    v_ = b2_ * v_ + (1.0 - b2_) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
  }

 private:
  double lr_, b1_, b2_, eps_;
  VectorXd m_, v_;
  long t_ = 0;
};

struct TrainConfig {
  double learning_rate = 1.9e-3;
  std::size_t batch_size = 128;
  std::size_t epochs = 1000;
  LossKind loss = LossKind::gaussian_nll;
  double l2 = 0.0;
  std::size_t k_folds = 5;

  void validate() const {
    if (!(learning_rate > 0.0)) throw InvalidArgument("learning rate must be > 0");
    if (batch_size == 0) throw InvalidArgument("batch size must be >= 1");
    if (!(l2 >= 0.0)) throw InvalidArgument("l2 penalty must be >= 0");
  }
};

struct TrainHistory {
  std::vector<double> epoch_loss;  // sample-weighted mean batch loss per epoch
};

/// Visits shuffled mini-batches of column indices; the last batch may be short.
template <typename Fn>
void for_each_batch(std::size_t n, std::size_t batch_size, RngStream& rng, Fn&& fn) {
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  rng.shuffle(order);
  const std::size_t b = std::min(batch_size, n);
  for (std::size_t start = 0; start < n; start += b) {
    const std::size_t len = std::min(b, n - start);
    fn(std::span<const Eigen::Index>(order.data() + start, len));
  }
}

/// Train with Adam on z-scored inputs and targets; the fitted standardizer is
/// stored in the returned model so predictions come back in raw units.
inline MlpModel train(const MlpSpec& spec, const TrainConfig& config, const InputMatrix& x, const VectorXd& y,
                      RngStream& rng, TrainHistory* history = nullptr) {
  spec.validate();
  config.validate();
  if (x.rows() == 0 || x.rows() != y.size()) throw TooFewPoints("training needs a non-empty, aligned dataset");
  if (static_cast<std::size_t>(x.cols()) != spec.input_dim()) throw DimensionMismatch("data width differs from MLP input");

  MlpModel model = MlpModel::initialize(spec, rng);
  model.set_standardizer(Standardizer::fit(x, y));
  const MatrixXd xs = model.standardizer().inputs(x);
  const VectorXd ys = model.standardizer().targets(y);
  const auto n = static_cast<std::size_t>(y.size());

  Adam adam(model.parameters().size(), config.learning_rate);
  MatrixXd bx;
  VectorXd by;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for_each_batch(n, config.batch_size, rng, [&](std::span<const Eigen::Index> idx) {
      const auto len = static_cast<Eigen::Index>(idx.size());
      bx.resize(xs.rows(), len);
      by.resize(len);
      for (Eigen::Index k = 0; k < len; ++k) {
        bx.col(k) = xs.col(idx[static_cast<std::size_t>(k)]);
        by[k] = ys[idx[static_cast<std::size_t>(k)]];
      }
      LossAndGradient lg;
      if (spec.dropout > 0.0) {
        const auto masks = sample_masks(spec, len, rng, false);
        lg = loss_and_gradient(model, bx, by, config.loss, config.l2, &masks);
      } else {
        lg = loss_and_gradient(model, bx, by, config.loss, config.l2);
      }
      epoch_loss += lg.loss * static_cast<double>(len);
      adam.step(model.parameters(), lg.gradient);
    });
    if (!model.parameters().allFinite()) throw DivergenceError("parameters became non-finite during training");
    if (history) history->epoch_loss.push_back(epoch_loss / static_cast<double>(n));
  }
  return model;
}

/// Trains on the train-role points of `data`.
inline MlpModel train(const MlpSpec& spec, const TrainConfig& config, const Dataset& data, RngStream& rng,
                      TrainHistory* history = nullptr) {
  const Dataset t = data.subset(Role::train);
  return train(spec, config, t.inputs(), t.targets(), rng, history);
}

/// Mean validation loss in raw units (Gaussian NLL or squared error).
inline double evaluate_loss(const MlpModel& m, const InputMatrix& x, const VectorXd& y, LossKind kind) {
  const BatchPrediction p = predict_batch(m, x);
  double total = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (kind == LossKind::mse) {
      total += (y[i] - p.mean[i]) * (y[i] - p.mean[i]);
    } else {
      total += gaussian_nll({p.mean[i], p.std[i]}, y[i]);
    }
  }
  return total / static_cast<double>(y.size());
}

// ---------------------------------------------------------------------------
// Cross-validation

/// k disjoint folds from a seeded shuffle; the first n mod k folds get one
/// extra point.
inline std::vector<std::vector<std::size_t>> make_folds(std::size_t n, std::size_t k, RngStream& rng) {
  if (k < 2) throw InvalidArgument("cross-validation needs k >= 2");
  if (n < k) throw TooFewPoints("fewer points than folds");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> folds(k);
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t len = n / k + (f < n % k ? 1 : 0);
    folds[f].assign(order.begin() + static_cast<std::ptrdiff_t>(pos), order.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  }
  return folds;
}

struct CrossValidationResult {
  std::vector<std::vector<std::size_t>> folds;
  std::vector<double> fold_losses;
  double mean_loss = 0.0;
  double loss_variance = 0.0;  // unbiased, across folds
  MlpModel model;              // refit on all points
};

/// Every fold and the final refit start from the same training stream, so
/// fold-to-fold differences come from the data alone.
inline CrossValidationResult kfold_cross_validate(const MlpSpec& spec, const TrainConfig& config, const InputMatrix& x,
                                                  const VectorXd& y, std::size_t k, RngStream& rng) {
  CrossValidationResult out;
  RngStream fold_rng = rng.derive(0);
  const RngStream train_rng = rng.derive(1);
  out.folds = make_folds(static_cast<std::size_t>(y.size()), k, fold_rng);

  for (std::size_t f = 0; f < k; ++f) {
    std::vector<bool> held(static_cast<std::size_t>(y.size()), false);
    for (std::size_t i : out.folds[f]) held[i] = true;
    const auto n_train = static_cast<Eigen::Index>(y.size()) - static_cast<Eigen::Index>(out.folds[f].size());
    InputMatrix xt(n_train, x.cols()), xv(static_cast<Eigen::Index>(out.folds[f].size()), x.cols());
    VectorXd yt(n_train), yv(xv.rows());
    Eigen::Index it = 0, iv = 0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      if (held[static_cast<std::size_t>(i)]) {
        xv.row(iv) = x.row(i);
        yv[iv++] = y[i];
      } else {
        xt.row(it) = x.row(i);
        yt[it++] = y[i];
      }
    }
    RngStream fold_train = train_rng;
    const MlpModel m = train(spec, config, xt, yt, fold_train);
    out.fold_losses.push_back(evaluate_loss(m, xv, yv, config.loss));
  }
  out.mean_loss = mean_of(out.fold_losses);
  double ss = 0.0;
  for (double l : out.fold_losses) ss += (l - out.mean_loss) * (l - out.mean_loss);
  out.loss_variance = ss / static_cast<double>(k - 1);
  RngStream refit_rng = train_rng;
  out.model = train(spec, config, x, y, refit_rng);
  return out;
}

// ---------------------------------------------------------------------------
// Serialization: layer shapes plus row-major parameter arrays.

inline constexpr int kMlpFormatVersion = 1;

inline nlohmann::json to_json(const MlpModel& m) {
  using nlohmann::json;
  const MlpSpec& s = m.spec();
  json layers = json::array();
  for (std::size_t l = 0; l < s.layer_count(); ++l) {
    const auto w = m.weight(l);
    std::vector<double> row_major;
    row_major.reserve(static_cast<std::size_t>(w.size()));
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) row_major.push_back(w(i, j));
    const auto b = m.bias(l);
    layers.push_back({{"shape", {w.rows(), w.cols()}},
                      {"weights", row_major},
                      {"bias", std::vector<double>(b.data(), b.data() + b.size())}});
  }
  const Standardizer& st = m.standardizer();
  return {{"format", "uqbench.mlp"},
          {"version", kMlpFormatVersion},
          {"widths", s.widths},
          {"activation", to_string(s.activation)},
          {"dropout", s.dropout},
          {"standardizer",
           {{"x_mean", std::vector<double>(st.x_mean.data(), st.x_mean.data() + st.x_mean.size())},
            {"x_scale", std::vector<double>(st.x_scale.data(), st.x_scale.data() + st.x_scale.size())},
            {"y_mean", st.y_mean},
            {"y_scale", st.y_scale}}},
          {"layers", layers}};
}

inline MlpModel mlp_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "uqbench.mlp") throw InvalidArgument("not an MLP document");
    if (j.at("version").get<int>() != kMlpFormatVersion) throw InvalidArgument("unsupported MLP format version");
    MlpSpec spec;
    spec.widths = j.at("widths").get<std::vector<std::size_t>>();
    spec.activation = activation_from_string(j.at("activation").get<std::string>());
    spec.dropout = j.at("dropout").get<double>();
    MlpModel m = MlpModel::zeros(spec);
    const auto& st = j.at("standardizer");
    const auto xm = st.at("x_mean").get<std::vector<double>>();
    const auto xsc = st.at("x_scale").get<std::vector<double>>();
    if (xm.size() != spec.input_dim() || xsc.size() != spec.input_dim()) {
      throw DimensionMismatch("standardizer width mismatch");
    }
    Standardizer s;
    s.x_mean = Eigen::Map<const VectorXd>(xm.data(), static_cast<Eigen::Index>(xm.size()));
    s.x_scale = Eigen::Map<const VectorXd>(xsc.data(), static_cast<Eigen::Index>(xsc.size()));
    s.y_mean = st.at("y_mean").get<double>();
    s.y_scale = st.at("y_scale").get<double>();
    const auto& layers = j.at("layers");
    if (layers.size() != spec.layer_count()) throw DimensionMismatch("layer count mismatch");
    for (std::size_t l = 0; l < spec.layer_count(); ++l) {
      auto w = m.weight(l);
      const auto shape = layers[l].at("shape").get<std::vector<Eigen::Index>>();
      const auto weights = layers[l].at("weights").get<std::vector<double>>();
      const auto bias = layers[l].at("bias").get<std::vector<double>>();
      if (shape.size() != 2 || shape[0] != w.rows() || shape[1] != w.cols() ||
          weights.size() != static_cast<std::size_t>(w.size()) || bias.size() != static_cast<std::size_t>(w.rows())) {
        throw DimensionMismatch("layer " + std::to_string(l) + " shape mismatch");
      }
      for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index c = 0; c < w.cols(); ++c) w(i, c) = weights[static_cast<std::size_t>(i * w.cols() + c)];
      m.bias(l) = Eigen::Map<const VectorXd>(bias.data(), static_cast<Eigen::Index>(bias.size()));
    }
    return MlpModel(spec, m.parameters(), s);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed MLP document: ") + e.what());
  }
}

}  // namespace uqbench
