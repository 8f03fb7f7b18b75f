#include "uqbench/neural.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <numbers>

namespace uqbench {
namespace {

InputMatrix column(const std::vector<double>& xs) {
  InputMatrix x(static_cast<Eigen::Index>(xs.size()), 1);
  for (std::size_t i = 0; i < xs.size(); ++i) x(static_cast<Eigen::Index>(i), 0) = xs[i];
  return x;
}

MlpModel random_model(const MlpSpec& spec, std::uint64_t seed) {
  RngStream rng(seed);
  MlpModel m = MlpModel::initialize(spec, rng);
  for (Eigen::Index i = 0; i < m.parameters().size(); ++i) m.parameters()[i] += 0.1 * rng.normal();
  return m;
}

TEST(GaussianNll, ScalarValues) {
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  EXPECT_NEAR(gaussian_nll({1.5, 1.0}, 1.5), 0.91894, 1e-5);
  EXPECT_NEAR(gaussian_nll({1.5, 1.0}, 1.5), half_log_2pi, 1e-15);
  EXPECT_NEAR(gaussian_nll({0.0, 1.0}, 1.0), 1.41894, 1e-5);
  EXPECT_NEAR(gaussian_nll({0.0, 2.0}, 1.0), half_log_2pi + std::log(2.0) + 1.0 / 8.0, 1e-14);
}

TEST(GaussianNll, ShrinksWithStdWhenMeanIsExact) {
  double prev = gaussian_nll({0.3, 1.0}, 0.3);
  for (double s : {0.5, 0.1, 0.01, 1e-4}) {
    const double v = gaussian_nll({0.3, s}, 0.3);
    EXPECT_LT(v, prev);
    prev = v;
  }
}

TEST(Spec, Validation) {
  EXPECT_THROW(MlpSpec::make(1, {}, Activation::relu).validate(), InvalidArgument);
  EXPECT_THROW(MlpSpec::make(1, {0}, Activation::relu).validate(), InvalidArgument);
  EXPECT_THROW(MlpSpec::make(1, {4}, Activation::relu, 1.0).validate(), InvalidArgument);
  MlpSpec s = MlpSpec::make(3, {4, 5}, Activation::tanh);
  EXPECT_EQ(s.parameter_count(), 4u * 4 + 5 * 5 + 2 * 6);
  s.widths.back() = 3;
  EXPECT_THROW(s.validate(), InvalidArgument);
}

TEST(Forward, ZeroNetwork) {
  const MlpModel m = MlpModel::zeros(MlpSpec::make(2, {8, 8}, Activation::relu));
  const std::vector<double> x{0.7, -3.0};
  const GaussianPrediction p = forward(m, x);
  EXPECT_EQ(p.mean, 0.0);
  EXPECT_NEAR(p.std, 0.69315, 1e-5);
  EXPECT_DOUBLE_EQ(p.std, std::log(2.0) + 1e-6);
}

TEST(Forward, DimensionMismatch) {
  const MlpModel m = MlpModel::zeros(MlpSpec::make(2, {4}, Activation::relu));
  const std::vector<double> x{1.0};
  EXPECT_THROW(forward(m, x), DimensionMismatch);
}

TEST(Forward, NoDropoutSampleModeIsIdentical) {
  const MlpModel m = random_model(MlpSpec::make(1, {6, 6}, Activation::tanh), 3);
  RngStream rng(9);
  const std::vector<double> x{0.4};
  const GaussianPrediction off = forward(m, x);
  const GaussianPrediction on = forward(m, x, rng);
  EXPECT_EQ(off.mean, on.mean);
  EXPECT_EQ(off.std, on.std);
}

TEST(Forward, PureFunctionWithoutDropout) {
  const MlpModel m = random_model(MlpSpec::make(2, {5}, Activation::relu), 4);
  const std::vector<double> x{0.1, 0.2};
  EXPECT_EQ(forward(m, x).mean, forward(m, x).mean);
}

TEST(Forward, InvertedDropoutPreservesExpectation) {
  // Positive inputs and weights keep every ReLU active, so the network is
  // linear in its hidden activations and the mask expectation is exact.
  MlpSpec spec = MlpSpec::make(1, {16}, Activation::relu, 0.5);
  MlpModel m = MlpModel::zeros(spec);
  RngStream init(11);
  for (Eigen::Index i = 0; i < m.weight(0).size(); ++i) m.weight(0).data()[i] = init.uniform(0.1, 1.0);
  for (Eigen::Index i = 0; i < m.weight(1).size(); ++i) m.weight(1).data()[i] = init.uniform(-1.0, 1.0);
  const std::vector<double> x{0.8};
  const double reference = forward(m, x).mean;

  RngStream rng(12);
  std::vector<double> draws;
  for (int t = 0; t < 10'000; ++t) draws.push_back(forward(m, x, rng).mean);
  const auto [mean, var] = oracle::moments(draws);
  EXPECT_GT(var, 0.0);
  EXPECT_LT(std::abs(mean - reference), 3.0 * std::sqrt(var / 1e4));
}

TEST(Forward, DropoutZeroesUnits) {
  const MlpSpec spec = MlpSpec::make(1, {200}, Activation::relu, 0.3);
  RngStream rng(5);
  const auto masks = sample_masks(spec, 50, rng, false);
  ASSERT_EQ(masks.size(), 1u);
  const double dropped = (masks[0].array() == 0.0).cast<double>().mean();
  EXPECT_NEAR(dropped, 0.3, 0.02);
  EXPECT_DOUBLE_EQ(masks[0].maxCoeff(), 1.0 / 0.7);
  const auto shared = sample_masks(spec, 7, rng, true);
  for (Eigen::Index j = 1; j < 7; ++j) EXPECT_EQ(shared[0].col(j), shared[0].col(0));
}

struct GradCase {
  std::size_t hidden_layers;
  Activation activation;
  LossKind loss;
  double l2;
};

class GradientCheck : public ::testing::TestWithParam<GradCase> {};

TEST_P(GradientCheck, MatchesCentralDifferences) {
  const GradCase c = GetParam();
  std::vector<std::size_t> hidden(c.hidden_layers, 5);
  const MlpSpec spec = MlpSpec::make(3, hidden, c.activation);
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    MlpModel m = random_model(spec, 100 * seed + c.hidden_layers);
    RngStream data(seed);
    InputMatrix x(7, 3);
    VectorXd y(7);
    for (Eigen::Index i = 0; i < 7; ++i) {
      for (Eigen::Index j = 0; j < 3; ++j) x(i, j) = data.normal();
      y[i] = data.normal();
    }
    const LossAndGradient lg = backward(m, x, y, c.loss, c.l2);
    EXPECT_DOUBLE_EQ(lg.loss, batch_loss(m, x, y, c.loss, c.l2));
    const double h = 1e-5;
    for (Eigen::Index p = 0; p < m.parameters().size(); ++p) {
      const double orig = m.parameters()[p];
      m.parameters()[p] = orig + h;
      const double up = batch_loss(m, x, y, c.loss, c.l2);
      m.parameters()[p] = orig - h;
      const double down = batch_loss(m, x, y, c.loss, c.l2);
      m.parameters()[p] = orig;
      const double fd = (up - down) / (2.0 * h);
      const double analytic = lg.gradient[p];
      EXPECT_LT(std::abs(analytic - fd) / (std::abs(analytic) + 1e-8), 1e-5)
          << "param " << p << " analytic " << analytic << " fd " << fd;
    }
  }
}

INSTANTIATE_TEST_SUITE_P(
    Layers, GradientCheck,
    ::testing::Values(GradCase{1, Activation::relu, LossKind::gaussian_nll, 0.0},
                      GradCase{2, Activation::relu, LossKind::gaussian_nll, 0.0},
                      GradCase{3, Activation::relu, LossKind::gaussian_nll, 0.0},
                      GradCase{1, Activation::tanh, LossKind::gaussian_nll, 0.0},
                      GradCase{2, Activation::tanh, LossKind::gaussian_nll, 0.0},
                      GradCase{3, Activation::tanh, LossKind::gaussian_nll, 0.0},
                      GradCase{2, Activation::relu, LossKind::mse, 0.0},
                      GradCase{2, Activation::tanh, LossKind::mse, 0.01},
                      GradCase{3, Activation::tanh, LossKind::gaussian_nll, 0.003}));

TEST(Backward, DropoutMasksAreDifferentiated) {
  const MlpSpec spec = MlpSpec::make(2, {6, 6}, Activation::tanh, 0.4);
  MlpModel m = random_model(spec, 21);
  RngStream rng(22);
  MatrixXd x(2, 5);
  VectorXd y(5);
  for (Eigen::Index j = 0; j < 5; ++j) {
    x(0, j) = rng.normal();
    x(1, j) = rng.normal();
    y[j] = rng.normal();
  }
  const auto masks = sample_masks(spec, 5, rng, false);
  const LossAndGradient lg = loss_and_gradient(m, x, y, LossKind::gaussian_nll, 0.0, &masks);
  const double h = 1e-5;
  for (Eigen::Index p = 0; p < m.parameters().size(); ++p) {
    const double orig = m.parameters()[p];
    m.parameters()[p] = orig + h;
    const double up = loss_and_gradient(m, x, y, LossKind::gaussian_nll, 0.0, &masks).loss;
    m.parameters()[p] = orig - h;
    const double down = loss_and_gradient(m, x, y, LossKind::gaussian_nll, 0.0, &masks).loss;
    m.parameters()[p] = orig;
    const double fd = (up - down) / (2.0 * h);
    EXPECT_LT(std::abs(lg.gradient[p] - fd) / (std::abs(lg.gradient[p]) + 1e-8), 1e-5) << p;
  }
}

TEST(Backward, ZeroResidualMseLeavesOutputLayerAtRest) {
  const MlpSpec spec = MlpSpec::make(1, {4, 4}, Activation::tanh);
  const MlpModel m = random_model(spec, 31);
  const InputMatrix x = column({-1.0, 0.0, 0.5, 2.0});
  const VectorXd y = predict_batch(m, x).mean;
  const LossAndGradient lg = backward(m, x, y, LossKind::mse);
  EXPECT_EQ(lg.loss, 0.0);
  MlpModel grads(spec, lg.gradient, m.standardizer());
  EXPECT_EQ(grads.weight(2).norm(), 0.0);
  EXPECT_EQ(grads.bias(2).norm(), 0.0);
}

TEST(Backward, DuplicatedBatchHasSameGradient) {
  const MlpSpec spec = MlpSpec::make(1, {5, 5}, Activation::relu);
  const MlpModel m = random_model(spec, 41);
  const InputMatrix x = column({-0.4, 0.3, 1.1});
  VectorXd y(3);
  y << 0.2, -0.7, 1.3;
  InputMatrix x2(6, 1);
  x2 << x, x;
  VectorXd y2(6);
  y2 << y, y;
  const LossAndGradient a = backward(m, x, y, LossKind::gaussian_nll);
  const LossAndGradient b = backward(m, x2, y2, LossKind::gaussian_nll);
  EXPECT_NEAR(a.loss, b.loss, 1e-14);
  EXPECT_LT((a.gradient - b.gradient).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(Backward, RejectsNonFinite) {
  MlpModel m = random_model(MlpSpec::make(1, {3}, Activation::relu), 1);
  const InputMatrix x = column({0.0});
  VectorXd y(1);
  y << std::nan("");
  EXPECT_THROW(backward(m, x, y, LossKind::mse), InvalidArgument);
  y << 0.0;
  m.parameters()[0] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(backward(m, x, y, LossKind::mse), InvalidArgument);
}

TEST(Standardizer, AffineRoundTrip) {
  RngStream rng(2);
  InputMatrix x(30, 2);
  VectorXd y(30);
  for (Eigen::Index i = 0; i < 30; ++i) {
    x(i, 0) = rng.uniform(0.0, 600.0);
    x(i, 1) = rng.uniform(250.0, 350.0);
    y[i] = 1e3 + 250.0 * rng.normal();
  }
  const Standardizer s = Standardizer::fit(x, y);
  const VectorXd ys = s.targets(y);
  EXPECT_NEAR(ys.mean(), 0.0, 1e-12);
  EXPECT_NEAR(ys.squaredNorm() / 30.0, 1.0, 1e-12);
  for (Eigen::Index i = 0; i < 30; ++i) EXPECT_NEAR(s.mean_to_units(ys[i]), y[i], 1e-12 * std::abs(y[i]));
  const MatrixXd xs = s.inputs(x);
  EXPECT_NEAR(xs.row(0).mean(), 0.0, 1e-12);
  EXPECT_NEAR(xs.row(1).squaredNorm() / 30.0, 1.0, 1e-12);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  VectorXd p = VectorXd::Zero(3);
  VectorXd g(3);
  g << 2.0, -0.5, 1e-3;
  Adam adam(3, 0.01);
  adam.step(p, g);
  EXPECT_NEAR(p[0], -0.01, 1e-8);
  EXPECT_NEAR(p[1], 0.01, 1e-8);
  EXPECT_NEAR(p[2], -0.01, 1e-7);
}

TEST(Train, LearnsLinearMap) {
  std::vector<double> xs;
  for (int i = 0; i < 200; ++i) xs.push_back(-1.0 + 2.0 * i / 199.0);
  const InputMatrix x = column(xs);
  const VectorXd y = 2.0 * x.col(0);
  TrainConfig cfg;
  cfg.loss = LossKind::mse;
  cfg.epochs = 300;
  cfg.batch_size = 32;
  cfg.learning_rate = 5e-3;
  RngStream rng(7);
  const MlpModel m = train(MlpSpec::make(1, {16}, Activation::tanh), cfg, x, y, rng);
  std::vector<double> test;
  for (int i = 0; i < 57; ++i) test.push_back(-0.95 + 1.9 * i / 56.0);
  const InputMatrix xt = column(test);
  const VectorXd pred = predict_batch(m, xt).mean;
  const double mse = (pred - 2.0 * xt.col(0)).squaredNorm() / 57.0;
  EXPECT_LT(mse, 1e-3);
}

TEST(Train, NllRecoversNoiseLevel) {
  RngStream data(8);
  InputMatrix x(600, 1);
  VectorXd y(600);
  for (Eigen::Index i = 0; i < 600; ++i) {
    x(i, 0) = data.uniform(0.0, 4.0);
    y[i] = std::sin(x(i, 0)) + 0.3 * data.normal();
  }
  TrainConfig cfg;
  cfg.epochs = 150;
  cfg.batch_size = 64;
  cfg.learning_rate = 5e-3;
  RngStream rng(9);
  const MlpModel m = train(MlpSpec::make(1, {32, 32}, Activation::tanh), cfg, x, y, rng);
  const BatchPrediction p = predict_batch(m, column({0.5, 1.5, 2.5, 3.5}));
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_NEAR(p.std[i], 0.3, 0.08);
}

TEST(Train, ZeroEpochsReturnsInitialization) {
  const MlpSpec spec = MlpSpec::make(1, {4}, Activation::relu);
  TrainConfig cfg;
  cfg.epochs = 0;
  RngStream a(3), b(3);
  const MlpModel trained = train(spec, cfg, column({1.0, 2.0, 3.0}), VectorXd::LinSpaced(3, 0.0, 1.0), a);
  EXPECT_EQ(trained.parameters(), MlpModel::initialize(spec, b).parameters());
}

TEST(Train, DeterministicForSeed) {
  const MlpSpec spec = MlpSpec::make(1, {8}, Activation::relu, 0.2);
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.batch_size = 8;
  const InputMatrix x = column({0.0, 0.3, 0.9, 1.4, 2.0, 2.2, 3.1, 3.3, 4.0, 4.5});
  const VectorXd y = x.col(0).array().sin();
  RngStream a(5), b(5), c(6);
  const MlpModel ma = train(spec, cfg, x, y, a);
  EXPECT_EQ(ma.parameters(), train(spec, cfg, x, y, b).parameters());
  EXPECT_NE(ma.parameters(), train(spec, cfg, x, y, c).parameters());
}

TEST(Train, BatchLargerThanDataIsClipped) {
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 1000;
  RngStream rng(1);
  TrainHistory h;
  train(MlpSpec::make(1, {4}, Activation::relu), cfg, column({0.0, 1.0, 2.0}), VectorXd::Ones(3), rng, &h);
  EXPECT_EQ(h.epoch_loss.size(), 3u);
}

TEST(Train, DivergenceIsReported) {
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.learning_rate = 1e200;
  cfg.batch_size = 2;
  RngStream rng(1);
  const InputMatrix x = column({0.0, 1.0, 2.0, 3.0});
  VectorXd y(4);
  y << 0.0, 5.0, -3.0, 8.0;
  EXPECT_THROW(train(MlpSpec::make(1, {64, 64}, Activation::relu), cfg, x, y, rng), DivergenceError);
}

TEST(Train, ConfigValidation) {
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  RngStream rng(1);
  EXPECT_THROW(train(MlpSpec::make(1, {4}, Activation::relu), cfg, column({0.0}), VectorXd::Zero(1), rng),
               InvalidArgument);
}

TEST(Folds, PartitionSizes) {
  RngStream rng(1);
  const auto five = make_folds(1000, 5, rng);
  std::vector<int> seen(1000, 0);
  for (const auto& f : five) {
    EXPECT_EQ(f.size(), 200u);
    for (std::size_t i : f) ++seen[i];
  }
  for (int s : seen) EXPECT_EQ(s, 1);
  const auto loo = make_folds(7, 7, rng);
  for (const auto& f : loo) EXPECT_EQ(f.size(), 1u);
  const auto uneven = make_folds(11, 3, rng);
  EXPECT_EQ(uneven[0].size(), 4u);
  EXPECT_EQ(uneven[1].size(), 4u);
  EXPECT_EQ(uneven[2].size(), 3u);
  EXPECT_THROW(make_folds(3, 4, rng), TooFewPoints);
  EXPECT_THROW(make_folds(3, 1, rng), InvalidArgument);
}

TEST(CrossValidation, IdenticalPointsGiveEqualFoldLosses) {
  InputMatrix x = InputMatrix::Constant(20, 1, 1.5);
  const VectorXd y = VectorXd::Constant(20, 4.0);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 4;
  RngStream rng(3);
  const auto cv = kfold_cross_validate(MlpSpec::make(1, {6}, Activation::tanh), cfg, x, y, 5, rng);
  ASSERT_EQ(cv.fold_losses.size(), 5u);
  for (double l : cv.fold_losses) EXPECT_NEAR(l, cv.fold_losses[0], 1e-9);
  EXPECT_NEAR(cv.loss_variance, 0.0, 1e-12);
}

TEST(CrossValidation, ReportsMeanAndRefit) {
  RngStream data(4);
  InputMatrix x(40, 1);
  VectorXd y(40);
  for (Eigen::Index i = 0; i < 40; ++i) {
    x(i, 0) = data.uniform(0.0, 3.0);
    y[i] = x(i, 0) + 0.1 * data.normal();
  }
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 8;
  RngStream a(5), b(5);
  const MlpSpec spec = MlpSpec::make(1, {8}, Activation::tanh);
  const auto cv = kfold_cross_validate(spec, cfg, x, y, 4, a);
  EXPECT_NEAR(cv.mean_loss, oracle::moments(cv.fold_losses).first, 1e-12);
  EXPECT_NEAR(cv.loss_variance, oracle::moments(cv.fold_losses).second * 4.0 / 3.0, 1e-12);
  EXPECT_EQ(cv.model.parameters(), kfold_cross_validate(spec, cfg, x, y, 4, b).model.parameters());
  EXPECT_THROW(kfold_cross_validate(spec, cfg, x.topRows(3), y.head(3), 4, a), TooFewPoints);
}

TEST(Serialization, JsonRoundTripIsExact) {
  const MlpSpec spec = MlpSpec::make(2, {5, 3}, Activation::tanh, 0.1);
  MlpModel m = random_model(spec, 51);
  InputMatrix x(4, 2);
  x << 1, 2, 3, 4, 5, 6, 7, 8;
  m.set_standardizer(Standardizer::fit(x, VectorXd::LinSpaced(4, 10.0, 40.0)));
  const nlohmann::json doc = to_json(m);
  EXPECT_EQ(doc["layers"][0]["shape"], nlohmann::json::array({5, 2}));
  EXPECT_EQ(doc["layers"][0]["weights"][1].get<double>(), m.weight(0)(0, 1));
  const MlpModel back = mlp_from_json(nlohmann::json::parse(doc.dump()));
  EXPECT_EQ(back.parameters(), m.parameters());
  EXPECT_EQ(back.spec().widths, spec.widths);
  EXPECT_EQ(back.spec().dropout, spec.dropout);
  EXPECT_EQ(back.standardizer().y_scale, m.standardizer().y_scale);
  EXPECT_EQ(predict_batch(back, x).mean, predict_batch(m, x).mean);
}

TEST(Serialization, RejectsMalformed) {
  nlohmann::json doc = to_json(MlpModel::zeros(MlpSpec::make(1, {2}, Activation::relu)));
  doc["layers"][0]["weights"].push_back(1.0);
  EXPECT_THROW(mlp_from_json(doc), DimensionMismatch);
  doc.erase("layers");
  EXPECT_THROW(mlp_from_json(doc), InvalidArgument);
  EXPECT_THROW(mlp_from_json(nlohmann::json{{"format", "other"}}), InvalidArgument);
}

}  // namespace
}  // namespace uqbench
