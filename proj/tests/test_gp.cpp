#include "uqbench/gp.hpp"

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

VectorXd vec(const std::vector<double>& v) { return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())); }

/// Joint sample of n points from a zero-mean GP plus white noise, drawn with
/// the oracle solver's own Cholesky so it shares nothing with the model.
VectorXd sample_gp(const InputMatrix& x, double ell, double s2, double noise, RngStream& rng) {
  const auto n = static_cast<std::size_t>(x.rows());
  oracle::Matrix l(n, std::vector<double>(n, 0.0));
  oracle::Matrix k(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      k[i][j] = oracle::matern52(std::abs(x(static_cast<Eigen::Index>(i), 0) - x(static_cast<Eigen::Index>(j), 0)), ell, s2) +
                (i == j ? noise + 1e-10 : 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double d = k[j][j];
    for (std::size_t p = 0; p < j; ++p) d -= l[j][p] * l[j][p];
    l[j][j] = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = k[i][j];
      for (std::size_t p = 0; p < j; ++p) s -= l[i][p] * l[j][p];
      l[i][j] = s / l[j][j];
    }
  }
  std::vector<double> z(n);
  for (double& v : z) v = rng.normal();
  VectorXd y(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t p = 0; p <= i; ++p) s += l[i][p] * z[p];
    y[static_cast<Eigen::Index>(i)] = s;
  }
  return y;
}

TEST(Kernel, ClosedFormValues) {
  const KernelSpec k{KernelFamily::matern52, 0.2, 1.0};
  const double origin = 0.0, at = 0.2, far = 0.2 * 41;
  EXPECT_EQ(kernel_eval(k, {&origin, 1}, {&origin, 1}), 1.0);
  EXPECT_NEAR(kernel_eval(k, {&origin, 1}, {&at, 1}), 0.5239941088318203, 1e-14);
  EXPECT_LT(kernel_eval(k, {&origin, 1}, {&far, 1}), 1e-12);
  const KernelSpec scaled{KernelFamily::squared_exponential, 1.5, 2.5};
  EXPECT_EQ(kernel_eval(scaled, {&at, 1}, {&at, 1}), 2.5);
  EXPECT_NEAR(scaled.at_distance(1.5), 2.5 * std::exp(-0.5), 1e-14);
  EXPECT_THROW((KernelSpec{KernelFamily::matern52, 0.0, 1.0}.validate()), InvalidArgument);
}

TEST(GpFit, SinglePointInterpolates) {
  const GpModel m = GpModel::fit({KernelFamily::matern52, 1.0, 1.0}, 0.0, column({0.3}), vec({4.2}));
  const double x = 0.3;
  EXPECT_NEAR(m.predict({&x, 1}).mean, 4.2, 1e-14);
}

TEST(GpFit, DuplicatedInputs) {
  const InputMatrix x = column({1.0, 1.0, 2.0});
  const VectorXd y = vec({0.0, 1.0, 3.0});
  const KernelSpec k{KernelFamily::matern52, 0.5, 1.0};
  // Singular without noise: either the jitter ladder rescues it or it fails loudly.
  try {
    const GpModel m = GpModel::fit(k, 0.0, x, y);
    EXPECT_GT(m.jitter(), 0.0);
  } catch (const CholeskyFailure&) {
    SUCCEED();
  }
  const GpModel noisy = GpModel::fit(k, 0.1, x, y);
  EXPECT_EQ(noisy.jitter(), 0.0);
  const double q = 1.0;
  EXPECT_NEAR(noisy.predict({&q, 1}).mean, 0.5, 0.2);
}

TEST(GpFit, NoiseFreeInterpolationAtFiftyPoints) {
  RngStream rng(10);
  std::vector<double> xs(50);
  for (double& v : xs) v = rng.uniform(0.0, 10.0);
  VectorXd y(50);
  for (int i = 0; i < 50; ++i) y[i] = std::sin(xs[static_cast<std::size_t>(i)]) * 3.0 + rng.normal();
  const GpModel m = GpModel::fit({KernelFamily::matern52, 0.2, 1.0}, 0.0, column(xs), y);
  ASSERT_EQ(m.jitter(), 0.0);
  for (int i = 0; i < 50; ++i) {
    const auto p = m.predict({&xs[static_cast<std::size_t>(i)], 1});
    EXPECT_NEAR(p.mean, y[i], 1e-8);
    EXPECT_LE(p.std, 1e-6);
  }
}

TEST(GpPredict, PriorReversionFarFromData) {
  const KernelSpec k{KernelFamily::matern52, 0.5, 2.0};
  const double noise = 0.3;
  const GpModel m = GpModel::fit(k, noise, column({0.0, 0.4, 1.0}), vec({1.0, -1.0, 3.0}));
  const double far = 1.0 + 40.0 * 0.5;
  const auto p = m.predict({&far, 1});
  EXPECT_NEAR(p.std, std::sqrt(2.0 + noise), 1e-6);
  EXPECT_NEAR(p.mean, 1.0, 1e-6);  // training-target mean
}

TEST(GpPredict, TwoPointHandSolve) {
  const double ell = 0.7, s2 = 1.3, noise = 0.05;
  const KernelSpec k{KernelFamily::matern52, ell, s2};
  const double x0 = 0.2, x1 = 0.9, y0 = 1.0, y1 = -0.4, q = 0.5;
  const GpModel m = GpModel::fit(k, noise, column({x0, x1}), vec({y0, y1}));

  const double ybar = 0.5 * (y0 + y1);
  const double a = s2 + noise, b = oracle::matern52(x1 - x0, ell, s2);
  const double det = a * a - b * b;
  const double r0 = y0 - ybar, r1 = y1 - ybar;
  const double w0 = (a * r0 - b * r1) / det, w1 = (-b * r0 + a * r1) / det;
  const double k0 = oracle::matern52(q - x0, ell, s2), k1 = oracle::matern52(x1 - q, ell, s2);
  const double mean = ybar + k0 * w0 + k1 * w1;
  const double quad = (a * k0 * k0 - 2 * b * k0 * k1 + a * k1 * k1) / det;
  const auto p = m.predict({&q, 1});
  EXPECT_NEAR(p.mean, mean, 1e-10);
  EXPECT_NEAR(p.variance(), s2 + noise - quad, 1e-10);
}

TEST(GpPredict, AgreesWithDenseSolveOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    RngStream rng(seed);
    const std::size_t n = 5 + 5 * seed;  // up to 50
    std::vector<double> xs(n);
    for (double& v : xs) v = rng.uniform(0.0, 5.0);
    VectorXd y(static_cast<Eigen::Index>(n));
    for (auto i = 0; i < y.size(); ++i) y[i] = rng.normal() * 2.0;
    const double ell = rng.uniform(0.2, 2.0), s2 = rng.uniform(0.5, 3.0), noise = rng.uniform(1e-3, 0.5);
    const GpModel m = GpModel::fit({KernelFamily::matern52, ell, s2}, noise, column(xs), y);

    oracle::Matrix a(n, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        a[i][j] = oracle::matern52(std::abs(xs[i] - xs[j]), ell, s2) + (i == j ? noise + m.jitter() : 0.0);
    const double ybar = y.mean();
    std::vector<double> yc(n);
    for (std::size_t i = 0; i < n; ++i) yc[i] = y[static_cast<Eigen::Index>(i)] - ybar;
    const std::vector<double> alpha = oracle::dense_solve(a, yc);

    for (int t = 0; t < 20; ++t) {
      const double q = rng.uniform(-1.0, 6.0);
      std::vector<double> ks(n);
      for (std::size_t i = 0; i < n; ++i) ks[i] = oracle::matern52(std::abs(xs[i] - q), ell, s2);
      const std::vector<double> v = oracle::dense_solve(a, ks);
      const double mean = ybar + oracle::dot(ks, alpha);
      const double var = std::max(s2 + noise - oracle::dot(ks, v), 1e-12);
      const auto p = m.predict({&q, 1});
      EXPECT_NEAR(p.mean, mean, 1e-8);
      EXPECT_NEAR(p.variance(), var, 1e-8);
      EXPECT_LE(p.variance(), s2 + noise + 1e-9);
      EXPECT_GT(p.variance(), 0.0);
    }
  }
}

TEST(GpPredict, StdDoesNotIncreaseWhenQueryIsObserved) {
  RngStream rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> xs(8);
    for (double& v : xs) v = rng.uniform(0.0, 4.0);
    std::vector<double> ys(8);
    for (double& v : ys) v = rng.normal();
    const KernelSpec k{KernelFamily::squared_exponential, rng.uniform(0.3, 1.5), 1.0};
    const double noise = rng.uniform(0.01, 0.2);
    const double q = rng.uniform(0.0, 4.0);
    const double before = GpModel::fit(k, noise, column(xs), vec(ys)).predict({&q, 1}).std;
    xs.push_back(q);
    ys.push_back(rng.normal());
    const double after = GpModel::fit(k, noise, column(xs), vec(ys)).predict({&q, 1}).std;
    EXPECT_LE(after, before + 1e-12);
  }
}

TEST(GpEvidence, ScalarCase) {
  const GpModel m = GpModel::fit({KernelFamily::matern52, 1.0, 0.75}, 0.25, column({0.0}), vec({0.0}));
  EXPECT_NEAR(m.log_marginal_likelihood(), -0.5 * std::log(2.0 * std::numbers::pi), 1e-14);
}

TEST(GpEvidence, ScalingTargetsLowersEvidence) {
  RngStream rng(3);
  const InputMatrix x = column({0.0, 0.5, 1.0, 1.5, 2.0});
  VectorXd y(5);
  for (int i = 0; i < 5; ++i) y[i] = rng.normal();
  const KernelSpec k{KernelFamily::matern52, 0.5, 1.0};
  EXPECT_GT(GpModel::fit(k, 0.1, x, y).log_marginal_likelihood(),
            GpModel::fit(k, 0.1, x, VectorXd(10.0 * y)).log_marginal_likelihood());
}

TEST(GpEvidence, TrueLengthScaleBeatsTenfold) {
  double lml_true = 0.0, lml_long = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RngStream rng(seed);
    std::vector<double> xs(40);
    for (double& v : xs) v = rng.uniform(0.0, 4.0);
    const InputMatrix x = column(xs);
    const VectorXd y = sample_gp(x, 0.2, 1.0, 0.01, rng);
    lml_true += GpModel::fit({KernelFamily::matern52, 0.2, 1.0}, 0.01, x, y).log_marginal_likelihood();
    lml_long += GpModel::fit({KernelFamily::matern52, 2.0, 1.0}, 0.01, x, y).log_marginal_likelihood();
  }
  EXPECT_GE(lml_true / 20, lml_long / 20);
}

TEST(GpSelect, SingletonAndArgmax) {
  RngStream rng(12);
  std::vector<double> xs(30);
  for (double& v : xs) v = rng.uniform(0.0, 3.0);
  const InputMatrix x = column(xs);
  const VectorXd y = sample_gp(x, 0.2, 1.0, 0.01, rng);
  const std::vector<GpCandidate> single{{{KernelFamily::matern52, 0.7, 1.0}, 0.05}};
  const GpModel only = select_hyperparameters(x, y, single);
  EXPECT_EQ(only.kernel().length_scale, 0.7);
  EXPECT_EQ(only.noise_variance(), 0.05);

  const auto grid = make_grid(KernelFamily::matern52, {0.05, 0.2, 1.0}, {0.5, 1.0}, {0.01, 0.1});
  const GpModel best = select_hyperparameters(x, y, grid);
  for (const auto& c : grid) {
    EXPECT_GE(best.log_marginal_likelihood(), GpModel::fit(c.kernel, c.noise_variance, x, y).log_marginal_likelihood());
  }
  EXPECT_THROW(select_hyperparameters(x, y, {}), InvalidArgument);
}

TEST(GpSelect, TiesGoToSmallestLengthScaleThenNoise) {
  // Identical candidates up to length-scale: with a single point the evidence
  // does not depend on the length-scale at all.
  const InputMatrix x = column({0.0});
  const VectorXd y = vec({1.0});
  const auto grid = make_grid(KernelFamily::matern52, {3.0, 0.5, 1.0}, {1.0}, {0.1});
  EXPECT_EQ(select_hyperparameters(x, y, grid).kernel().length_scale, 0.5);
}

TEST(GpSelect, RecoversGeneratingLengthScale) {
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    RngStream rng(1000 + seed);
    std::vector<double> xs(60);
    for (double& v : xs) v = rng.uniform(0.0, 5.0);
    const InputMatrix x = column(xs);
    const VectorXd y = sample_gp(x, 0.2, 1.0, 0.01, rng);
    const auto grid = make_grid(KernelFamily::matern52, {0.05, 0.2, 1.0}, {1.0}, {0.01});
    hits += select_hyperparameters(x, y, grid).kernel().length_scale == 0.2;
  }
  EXPECT_GE(hits, 40);
}

TEST(GpRefine, NeverLowersEvidenceAndNarrowsToOptimum) {
  RngStream rng(77);
  std::vector<double> xs(80);
  for (double& v : xs) v = rng.uniform(0.0, 5.0);
  const InputMatrix x = column(xs);
  const VectorXd y = sample_gp(x, 0.3, 2.0, 0.05, rng);
  const GpModel coarse = GpModel::fit({KernelFamily::matern52, 1.0, 1.0}, 1.0, x, y);
  const GpModel fine = refine_hyperparameters(x, y, coarse);
  EXPECT_GT(fine.log_marginal_likelihood(), coarse.log_marginal_likelihood());
  // A local optimum: no coordinate move of 2% improves it.
  for (int coord = 0; coord < 3; ++coord) {
    for (double f : {1.02, 1.0 / 1.02}) {
      KernelSpec k = fine.kernel();
      double noise = fine.noise_variance();
      if (coord == 0) k.length_scale *= f;
      if (coord == 1) k.variance *= f;
      if (coord == 2) noise *= f;
      EXPECT_LE(GpModel::fit(k, noise, x, y).log_marginal_likelihood(), fine.log_marginal_likelihood() + 1e-9);
    }
  }
  EXPECT_NEAR(std::log(fine.noise_variance() / 0.05), 0.0, std::log(3.0));
}

TEST(GpRefine, ZeroNoiseStaysZero) {
  const InputMatrix x = column({0.0, 1.0, 2.5});
  const GpModel start = GpModel::fit({KernelFamily::squared_exponential, 1.0, 1.0}, 0.0, x, vec({0.0, 1.0, 0.5}));
  EXPECT_EQ(refine_hyperparameters(x, vec({0.0, 1.0, 0.5}), start).noise_variance(), 0.0);
  EXPECT_THROW(refine_hyperparameters(x, vec({0.0, 1.0, 0.5}), start, 1.0), InvalidArgument);
}

TEST(GpModel, UnfittedAndDimensionErrors) {
  const GpModel empty;
  const double q[2] = {0.0, 1.0};
  EXPECT_THROW(empty.predict({q, 1}), NotFitted);
  EXPECT_THROW(empty.log_marginal_likelihood(), NotFitted);
  const GpModel m = GpModel::fit({KernelFamily::matern52, 1.0, 1.0}, 0.1, column({0.0, 1.0}), vec({0.0, 1.0}));
  EXPECT_THROW(m.predict({q, 2}), DimensionMismatch);
  EXPECT_THROW(GpModel::fit({KernelFamily::matern52, 1.0, 1.0}, -1.0, column({0.0}), vec({0.0})), InvalidArgument);
}

TEST(GpModel, CholeskyFactorShape) {
  const GpModel m = GpModel::fit({KernelFamily::matern52, 1.0, 1.0}, 0.1, column({0.0, 1.0, 2.5}), vec({0.0, 1.0, 0.3}));
  const MatrixXd l = m.cholesky_factor();
  EXPECT_TRUE(l.isLowerTriangular());
  EXPECT_TRUE((l.diagonal().array() > 0.0).all());
  EXPECT_EQ(m.weights().size(), 3);
}

}  // namespace
}  // namespace uqbench
