#pragma once

#include "uqbench/neural.hpp"

#include <algorithm>
#include <optional>

namespace uqbench {

/// Predictive moments pooled over a sample set: total variance is the mean
/// head variance (aleatoric) plus the spread of the means (epistemic).
struct PooledPrediction {
  double mean = 0.0;
  double aleatoric = 0.0;
  double epistemic = 0.0;

  double variance() const { return aleatoric + epistemic; }
  GaussianPrediction gaussian() const { return {mean, std::sqrt(variance())}; }
};

/// Moments of the uniform mixture of N(mu_i, sigma_i^2).
inline PooledPrediction pool_moments(std::span<const double> mu, std::span<const double> sigma) {
  if (mu.empty() || mu.size() != sigma.size()) throw InvalidArgument("pooling needs matching, non-empty samples");
  PooledPrediction p;
  const double n = static_cast<double>(mu.size());
  long double m = 0.0L, a = 0.0L;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    m += mu[i];
    a += static_cast<long double>(sigma[i]) * sigma[i];
  }
  p.mean = static_cast<double>(m / n);
  p.aleatoric = static_cast<double>(a / n);
  long double e = 0.0L;
  for (double v : mu) e += (static_cast<long double>(v) - p.mean) * (v - p.mean);
  p.epistemic = static_cast<double>(e / n);
  return p;
}

inline PooledPrediction pool_moments(std::span<const GaussianPrediction> members) {
  std::vector<double> mu, sigma;
  for (const auto& g : members) {
    mu.push_back(g.mean);
    sigma.push_back(g.std);
  }
  return pool_moments(mu, sigma);
}

enum class IntervalKind { gaussian, empirical };

inline IntervalKind interval_kind_from_string(const std::string& s) {
  if (s == "gaussian") return IntervalKind::gaussian;
  if (s == "empirical") return IntervalKind::empirical;
  throw InvalidArgument("unknown interval kind '" + s + "'");
}

/// Per-sample head outputs: row t holds sample t, column j query point j.
struct SampleSet {
  MatrixXd mean;
  MatrixXd std;
};

/// Linear-interpolation quantile of a sorted sample.
inline double sorted_quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Shared plumbing for predictors whose output is a set of Gaussian samples.
/// All randomness derives from `seed()`, so predictions are a pure function
/// of the query.
class SamplingPredictor : public IntervalPredictor, public Regressor {
 public:
  virtual SampleSet samples(const InputMatrix& x) const = 0;
  virtual std::uint64_t seed() const = 0;
  std::size_t input_dim() const override = 0;

  std::vector<PooledPrediction> predict_pooled(const InputMatrix& x) const {
    const SampleSet s = samples(x);
    std::vector<PooledPrediction> out;
    out.reserve(static_cast<std::size_t>(x.rows()));
    std::vector<double> mu(static_cast<std::size_t>(s.mean.rows())), sd(mu.size());
    for (Eigen::Index j = 0; j < s.mean.cols(); ++j) {
      for (Eigen::Index t = 0; t < s.mean.rows(); ++t) {
        mu[static_cast<std::size_t>(t)] = s.mean(t, j);
        sd[static_cast<std::size_t>(t)] = s.std(t, j);
      }
      out.push_back(pool_moments(mu, sd));
    }
    return out;
  }

  PooledPrediction predict_pooled(std::span<const double> x) const { return predict_pooled(as_row(x)).front(); }
  GaussianPrediction predict(std::span<const double> x) const { return predict_pooled(x).gaussian(); }
  double predict_point(std::span<const double> x) const override { return predict_pooled(x).mean; }
  VectorXd predict_points(const InputMatrix& x) const override {
    const auto pooled = predict_pooled(x);
    VectorXd out(x.rows());
    for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = pooled[static_cast<std::size_t>(i)].mean;
    return out;
  }

  PredictionInterval predict_interval(std::span<const double> x, ConfidenceLevel level) const override {
    return predict_intervals(as_row(x), level).front();
  }

  std::vector<PredictionInterval> predict_intervals(const InputMatrix& x, ConfidenceLevel level) const override {
    std::vector<PredictionInterval> out;
    out.reserve(static_cast<std::size_t>(x.rows()));
    if (kind_ == IntervalKind::gaussian) {
      for (const PooledPrediction& p : predict_pooled(x)) out.push_back(gaussian_interval(p.gaussian(), level));
      return out;
    }
    // Quantiles of one predictive draw per sample.
    const SampleSet s = samples(x);
    RngStream noise = RngStream(seed()).derive(0x6e6f697365ULL);
    std::vector<double> draws(static_cast<std::size_t>(s.mean.rows()));
    for (Eigen::Index j = 0; j < s.mean.cols(); ++j) {
      for (Eigen::Index t = 0; t < s.mean.rows(); ++t) {
        draws[static_cast<std::size_t>(t)] = s.mean(t, j) + s.std(t, j) * noise.normal();
      }
      std::sort(draws.begin(), draws.end());
      const double lo = sorted_quantile(draws, level.alpha() / 2.0);
      const double hi = sorted_quantile(draws, 1.0 - level.alpha() / 2.0);
      out.push_back(PredictionInterval::bounds(lo, 0.5 * (lo + hi), hi));
    }
    return out;
  }

  IntervalKind interval_kind() const { return kind_; }
  void set_interval_kind(IntervalKind k) { kind_ = k; }

 protected:
  InputMatrix as_row(std::span<const double> x) const {
    check_dim(x, input_dim());
    return Eigen::Map<const InputMatrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
  }

 private:
  IntervalKind kind_ = IntervalKind::gaussian;
};

// ---------------------------------------------------------------------------
// Monte Carlo dropout

class McdPredictor final : public SamplingPredictor {
 public:
  McdPredictor(MlpModel model, std::size_t passes = 100, std::uint64_t seed = 0)
      : model_(std::move(model)), passes_(passes), seed_(seed) {
    if (passes_ < 2) throw InvalidArgument("MC dropout needs at least 2 passes");
    if (!(model_.spec().dropout > 0.0)) throw InvalidArgument("MC dropout needs a dropout rate in (0, 1)");
  }

  /// Pass t uses one mask per layer, shared by every query point.
  SampleSet samples(const InputMatrix& x) const override {
    const RngStream base(seed_);
    return run([&](std::size_t t) { return base.derive(t); }, x);
  }

  /// Same passes with masks drawn from a caller-owned stream.
  SampleSet samples(const InputMatrix& x, RngStream& rng) const {
    return run([&](std::size_t) { return rng.derive(rng.next_u64()); }, x);
  }

  std::size_t input_dim() const override { return model_.input_dim(); }
  std::uint64_t seed() const override { return seed_; }
  std::size_t passes() const { return passes_; }
  const MlpModel& model() const { return model_; }

 private:
  template <typename StreamFor>
  SampleSet run(StreamFor&& stream_for, const InputMatrix& x) const {
    if (static_cast<std::size_t>(x.cols()) != input_dim()) throw DimensionMismatch("query width differs from model input");
    SampleSet s{MatrixXd(static_cast<Eigen::Index>(passes_), x.rows()), MatrixXd(static_cast<Eigen::Index>(passes_), x.rows())};
    for (std::size_t t = 0; t < passes_; ++t) {
      RngStream r = stream_for(t);
      const auto masks = sample_masks(model_.spec(), x.rows(), r, true);
      const BatchPrediction p = predict_batch(model_, x, &masks);
      s.mean.row(static_cast<Eigen::Index>(t)) = p.mean.transpose();
      s.std.row(static_cast<Eigen::Index>(t)) = p.std.transpose();
    }
    return s;
  }

  MlpModel model_;
  std::size_t passes_;
  std::uint64_t seed_;
};

inline GaussianPrediction mcd_predict(const McdPredictor& p, std::span<const double> x, RngStream& rng) {
  check_dim(x, p.input_dim());
  const InputMatrix row = Eigen::Map<const InputMatrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
  const SampleSet s = p.samples(row, rng);
  return pool_moments(std::span<const double>(s.mean.data(), static_cast<std::size_t>(s.mean.size())),
                      std::span<const double>(s.std.data(), static_cast<std::size_t>(s.std.size())))
      .gaussian();
}

// ---------------------------------------------------------------------------
// Deep ensemble

class EnsemblePredictor final : public SamplingPredictor {
 public:
  explicit EnsemblePredictor(std::vector<MlpModel> members, std::uint64_t seed = 0)
      : members_(std::move(members)), seed_(seed) {
    if (members_.empty()) throw InvalidArgument("ensemble is empty");
    for (const MlpModel& m : members_) {
      if (m.spec().widths != members_.front().spec().widths) throw DimensionMismatch("ensemble members differ in shape");
    }
  }

  SampleSet samples(const InputMatrix& x) const override {
    if (static_cast<std::size_t>(x.cols()) != input_dim()) throw DimensionMismatch("query width differs from model input");
    const auto m = static_cast<Eigen::Index>(members_.size());
    SampleSet s{MatrixXd(m, x.rows()), MatrixXd(m, x.rows())};
    for (Eigen::Index k = 0; k < m; ++k) {
      const BatchPrediction p = predict_batch(members_[static_cast<std::size_t>(k)], x);
      s.mean.row(k) = p.mean.transpose();
      s.std.row(k) = p.std.transpose();
    }
    return s;
  }

  std::size_t input_dim() const override { return members_.front().input_dim(); }
  std::uint64_t seed() const override { return seed_; }
  const std::vector<MlpModel>& members() const { return members_; }

 private:
  std::vector<MlpModel> members_;
  std::uint64_t seed_;
};

inline GaussianPrediction ensemble_predict(const EnsemblePredictor& p, std::span<const double> x) {
  return p.predict(x);
}

/// One train() call per member stream.
inline EnsemblePredictor fit_ensemble(const MlpSpec& spec, const TrainConfig& config, const InputMatrix& x,
                                      const VectorXd& y, std::vector<RngStream> member_streams, std::uint64_t seed = 0) {
  if (member_streams.size() < 2) throw InvalidArgument("ensemble needs at least 2 members");
  std::vector<MlpModel> members;
  for (std::size_t k = 0; k < member_streams.size(); ++k) {
    try {
      members.push_back(train(spec, config, x, y, member_streams[k]));
    } catch (const DivergenceError& e) {
      throw DivergenceError("ensemble member " + std::to_string(k) + ": " + e.what());
    }
  }
  return EnsemblePredictor(std::move(members), seed);
}

/// Members train on streams derived from `rng`, so each gets its own
/// initialization and batch order.
inline EnsemblePredictor fit_ensemble(const MlpSpec& spec, const TrainConfig& config, const InputMatrix& x,
                                      const VectorXd& y, std::size_t members, RngStream& rng) {
  std::vector<RngStream> streams;
  for (std::size_t k = 0; k < members; ++k) streams.push_back(rng.derive(k));
  return fit_ensemble(spec, config, x, y, std::move(streams), rng.seed());
}

// ---------------------------------------------------------------------------
// Mean-field variational BNN

/// KL(N(mu_q, sigma_q^2) || N(mu_p, sigma_p^2)).
inline double gaussian_kl(double mu_q, double sigma_q, double mu_p, double sigma_p) {
  const double d = mu_q - mu_p;
  return std::log(sigma_p / sigma_q) + (sigma_q * sigma_q + d * d) / (2.0 * sigma_p * sigma_p) - 0.5;
}

struct BnnConfig {
  TrainConfig train;
  double prior_std = 1.0;
  double rho_init = -5.0;
  double kl_anneal_fraction = 0.1;
  std::size_t samples = 100;

  void validate() const {
    train.validate();
    if (!(prior_std > 0.0)) throw InvalidArgument("BNN prior std must be > 0");
    if (!std::isfinite(rho_init)) throw InvalidArgument("BNN rho init must be finite");
    if (!(kl_anneal_fraction >= 0.0 && kl_anneal_fraction <= 1.0)) {
      throw InvalidArgument("KL anneal fraction must be in [0, 1]");
    }
    if (samples < 2) throw InvalidArgument("BNN needs at least 2 posterior samples");
  }
};

/// Factorized Gaussian posterior over every weight and bias, sigma =
/// softplus(rho). Parameters use the flat layout of MlpModel.
class BnnPredictor final : public SamplingPredictor {
 public:
  BnnPredictor(MlpSpec spec, VectorXd mu, VectorXd rho, Standardizer scaler, double prior_std = 1.0,
               std::size_t samples = 100, std::uint64_t seed = 0)
      : spec_(std::move(spec)), mu_(std::move(mu)), rho_(std::move(rho)), scaler_(std::move(scaler)),
        prior_std_(prior_std), samples_(samples), seed_(seed) {
    spec_.validate();
    if (spec_.dropout != 0.0) throw InvalidArgument("BNN layers do not use dropout");
    const auto n = static_cast<Eigen::Index>(spec_.parameter_count());
    if (mu_.size() != n || rho_.size() != n) throw DimensionMismatch("posterior does not match the MLP shape");
    if (!(prior_std_ > 0.0)) throw InvalidArgument("BNN prior std must be > 0");
    if (samples_ < 2) throw InvalidArgument("BNN needs at least 2 posterior samples");
  }

  /// Means from the activation-matched initializer, rho constant.
  static BnnPredictor initialize(const MlpSpec& spec, const BnnConfig& config, Standardizer scaler, RngStream& rng,
                                 std::uint64_t seed = 0) {
    const MlpModel init = MlpModel::initialize(spec, rng);
    return {spec,
            init.parameters(),
            VectorXd::Constant(init.parameters().size(), config.rho_init),
            std::move(scaler),
            config.prior_std,
            config.samples,
            seed};
  }

  VectorXd sigma() const { return rho_.unaryExpr([](double r) { return softplus(r); }); }

  /// Network with weights mu + sigma * eps.
  MlpModel sample_network(const VectorXd& eps) const { return {spec_, mu_ + sigma().cwiseProduct(eps), scaler_}; }
  MlpModel mean_network() const { return {spec_, mu_, scaler_}; }

  double kl() const {
    double total = 0.0;
    for (Eigen::Index i = 0; i < mu_.size(); ++i) total += gaussian_kl(mu_[i], softplus(rho_[i]), 0.0, prior_std_);
    return total;
  }

  SampleSet samples(const InputMatrix& x) const override {
    const RngStream base(seed_);
    return run([&](std::size_t s) { return base.derive(s); }, x);
  }

  SampleSet samples(const InputMatrix& x, RngStream& rng) const {
    return run([&](std::size_t) { return rng.derive(rng.next_u64()); }, x);
  }

  std::size_t input_dim() const override { return spec_.input_dim(); }
  std::uint64_t seed() const override { return seed_; }
  const MlpSpec& spec() const { return spec_; }
  const VectorXd& mu() const { return mu_; }
  const VectorXd& rho() const { return rho_; }
  VectorXd& mu() { return mu_; }
  VectorXd& rho() { return rho_; }
  const Standardizer& standardizer() const { return scaler_; }
  double prior_std() const { return prior_std_; }
  std::size_t sample_count() const { return samples_; }

 private:
  template <typename StreamFor>
  SampleSet run(StreamFor&& stream_for, const InputMatrix& x) const {
    if (static_cast<std::size_t>(x.cols()) != input_dim()) throw DimensionMismatch("query width differs from model input");
    const auto n = static_cast<Eigen::Index>(samples_);
    SampleSet out{MatrixXd(n, x.rows()), MatrixXd(n, x.rows())};
    VectorXd eps(mu_.size());
    for (std::size_t s = 0; s < samples_; ++s) {
      RngStream r = stream_for(s);
      for (Eigen::Index i = 0; i < eps.size(); ++i) eps[i] = r.normal();
      const BatchPrediction p = predict_batch(sample_network(eps), x);
      out.mean.row(static_cast<Eigen::Index>(s)) = p.mean.transpose();
      out.std.row(static_cast<Eigen::Index>(s)) = p.std.transpose();
    }
    return out;
  }

  MlpSpec spec_;
  VectorXd mu_;
  VectorXd rho_;
  Standardizer scaler_;
  double prior_std_;
  std::size_t samples_;
  std::uint64_t seed_;
};

inline GaussianPrediction bnn_predict(const BnnPredictor& p, std::span<const double> x, RngStream& rng) {
  check_dim(x, p.input_dim());
  const InputMatrix row = Eigen::Map<const InputMatrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
  const SampleSet s = p.samples(row, rng);
  return pool_moments(std::span<const double>(s.mean.data(), static_cast<std::size_t>(s.mean.size())),
                      std::span<const double>(s.std.data(), static_cast<std::size_t>(s.std.size())))
      .gaussian();
}

struct ElboStep {
  double loss = 0.0;  // nll + kl_weight * kl / n_train
  double nll = 0.0;   // mean batch NLL at the sampled weights
  double kl = 0.0;    // full KL(q || prior)
  VectorXd grad_mu;
  VectorXd grad_rho;
};

/// One reparameterized sample on a standardized batch (features x batch).
inline ElboStep bnn_elbo_step(const BnnPredictor& p, const MatrixXd& x, const VectorXd& y, double kl_weight,
                              std::size_t n_train, RngStream& rng) {
  if (x.cols() == 0 || x.cols() != y.size()) throw InvalidArgument("ELBO step needs a non-empty batch");
  if (n_train == 0) throw InvalidArgument("ELBO step needs the training-set size");
  VectorXd eps(p.mu().size());
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps[i] = rng.normal();
  const VectorXd sigma = p.sigma();
  const MlpModel net(p.spec(), p.mu() + sigma.cwiseProduct(eps), p.standardizer());
  const LossAndGradient lg = loss_and_gradient(net, x, y, LossKind::gaussian_nll);

  ElboStep out;
  out.nll = lg.loss;
  out.kl = p.kl();
  const double c = kl_weight / static_cast<double>(n_train);
  out.loss = out.nll + c * out.kl;
  if (!std::isfinite(out.loss)) throw DivergenceError("non-finite ELBO");
  const double sp2 = p.prior_std() * p.prior_std();
  out.grad_mu = lg.gradient + c * p.mu() / sp2;
  out.grad_rho.resize(eps.size());
  for (Eigen::Index i = 0; i < eps.size(); ++i) {
    const double dkl_dsigma = -1.0 / sigma[i] + sigma[i] / sp2;
    out.grad_rho[i] = (lg.gradient[i] * eps[i] + c * dkl_dsigma) * sigmoid(p.rho()[i]);
  }
  return out;
}

struct BnnHistory {
  std::vector<double> epoch_loss;  // nll + kl / n_train at full KL weight
  std::vector<double> epoch_nll;
  std::vector<double> kl;          // KL at the end of each epoch
};

/// KL weight ramps linearly to 1 over the first `kl_anneal_fraction` of the
/// epochs. The recorded loss always uses weight 1.
inline BnnPredictor train_bnn(const MlpSpec& spec, const BnnConfig& config, const InputMatrix& x, const VectorXd& y,
                              RngStream& rng, BnnHistory* history = nullptr, std::uint64_t predict_seed = 0) {
  spec.validate();
  config.validate();
  if (x.rows() == 0 || x.rows() != y.size()) throw TooFewPoints("BNN training needs a non-empty, aligned dataset");
  if (static_cast<std::size_t>(x.cols()) != spec.input_dim()) throw DimensionMismatch("data width differs from MLP input");

  BnnPredictor p = BnnPredictor::initialize(spec, config, Standardizer::fit(x, y), rng, predict_seed);
  const MatrixXd xs = p.standardizer().inputs(x);
  const VectorXd ys = p.standardizer().targets(y);
  const auto n = static_cast<std::size_t>(y.size());
  const Eigen::Index np = p.mu().size();
  const std::size_t epochs = config.train.epochs;
  const double ramp = std::max(1.0, std::ceil(config.kl_anneal_fraction * static_cast<double>(epochs)));

  VectorXd theta(2 * np);
  theta << p.mu(), p.rho();
  Adam adam(theta.size(), config.train.learning_rate);
  VectorXd grad(2 * np);
  MatrixXd bx;
  VectorXd by;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    const double kl_weight = config.kl_anneal_fraction == 0.0 ? 1.0 : std::min(1.0, (epoch + 1.0) / ramp);
    double loss_sum = 0.0, nll_sum = 0.0;
    for_each_batch(n, config.train.batch_size, rng, [&](std::span<const Eigen::Index> idx) {
      const auto len = static_cast<Eigen::Index>(idx.size());
      bx.resize(xs.rows(), len);
      by.resize(len);
      for (Eigen::Index k = 0; k < len; ++k) {
        bx.col(k) = xs.col(idx[static_cast<std::size_t>(k)]);
        by[k] = ys[idx[static_cast<std::size_t>(k)]];
      }
      const ElboStep step = bnn_elbo_step(p, bx, by, kl_weight, n, rng);
      loss_sum += (step.nll + step.kl / static_cast<double>(n)) * static_cast<double>(len);
      nll_sum += step.nll * static_cast<double>(len);
      grad << step.grad_mu, step.grad_rho;
      adam.step(theta, grad);
      p.mu() = theta.head(np);
      p.rho() = theta.tail(np);
    });
    if (!theta.allFinite()) throw DivergenceError("BNN parameters became non-finite");
    if (history) {
      history->epoch_loss.push_back(loss_sum / static_cast<double>(n));
      history->epoch_nll.push_back(nll_sum / static_cast<double>(n));
      history->kl.push_back(p.kl());
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Serialization envelopes around the MLP format

inline nlohmann::json to_json(const McdPredictor& p) {
  return {{"method", "mcd"}, {"passes", p.passes()}, {"seed", p.seed()}, {"model", to_json(p.model())}};
}

inline nlohmann::json to_json(const EnsemblePredictor& p) {
  nlohmann::json members = nlohmann::json::array();
  for (const MlpModel& m : p.members()) members.push_back(to_json(m));
  return {{"method", "de"}, {"size", p.members().size()}, {"seed", p.seed()}, {"members", members}};
}

inline nlohmann::json to_json(const BnnPredictor& p) {
  return {{"method", "bnn"},
          {"samples", p.sample_count()},
          {"seed", p.seed()},
          {"prior_std", p.prior_std()},
          {"mean", to_json(p.mean_network())},
          {"rho", to_json(MlpModel(p.spec(), p.rho(), p.standardizer()))}};
}

inline McdPredictor mcd_from_json(const nlohmann::json& j) {
  try {
    if (j.at("method") != "mcd") throw InvalidArgument("not an MC dropout document");
    return {mlp_from_json(j.at("model")), j.at("passes").get<std::size_t>(), j.at("seed").get<std::uint64_t>()};
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed MC dropout document: ") + e.what());
  }
}

inline EnsemblePredictor ensemble_from_json(const nlohmann::json& j) {
  try {
    if (j.at("method") != "de") throw InvalidArgument("not an ensemble document");
    std::vector<MlpModel> members;
    for (const auto& m : j.at("members")) members.push_back(mlp_from_json(m));
    return EnsemblePredictor(std::move(members), j.at("seed").get<std::uint64_t>());
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed ensemble document: ") + e.what());
  }
}

inline BnnPredictor bnn_from_json(const nlohmann::json& j) {
  try {
    if (j.at("method") != "bnn") throw InvalidArgument("not a BNN document");
    const MlpModel mean = mlp_from_json(j.at("mean"));
    const MlpModel rho = mlp_from_json(j.at("rho"));
    if (rho.spec().widths != mean.spec().widths) throw DimensionMismatch("BNN mean and rho shapes differ");
    return {mean.spec(),
            mean.parameters(),
            rho.parameters(),
            mean.standardizer(),
            j.at("prior_std").get<double>(),
            j.at("samples").get<std::size_t>(),
            j.at("seed").get<std::uint64_t>()};
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed BNN document: ") + e.what());
  }
}

}  // namespace uqbench
