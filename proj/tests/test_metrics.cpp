#include "uqbench/metrics.hpp"

#include "uqbench/conformal.hpp"
#include "uqbench/datagen.hpp"
#include "uqbench/gp.hpp"

#include <gtest/gtest.h>

#include <sstream>

namespace uqbench {
namespace {

std::vector<PredictionInterval> sym(const std::vector<double>& centers, const std::vector<double>& hws) {
  std::vector<PredictionInterval> out;
  for (std::size_t i = 0; i < centers.size(); ++i) out.push_back(PredictionInterval::symmetric(centers[i], hws[i]));
  return out;
}

VectorXd vec(const std::vector<double>& v) { return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())); }

TEST(Coverage, CountsClosedIntervals) {
  EXPECT_EQ(empirical_coverage(sym({0, 0}, {10, 10}), vec({1, -3})), 1.0);
  EXPECT_EQ(empirical_coverage(sym({1.5, -2}, {0, 0}), vec({1.5, -2})), 1.0);
  std::vector<PredictionInterval> ivs;
  std::vector<double> ys;
  for (int i = 0; i < 100; ++i) {
    ivs.push_back(PredictionInterval::symmetric(0.0, 1.0));
    ys.push_back(i < 95 ? 0.5 : 2.0);
  }
  EXPECT_DOUBLE_EQ(empirical_coverage(ivs, vec(ys)), 0.95);
  EXPECT_THROW(empirical_coverage(ivs, vec({1.0})), DimensionMismatch);
  EXPECT_THROW(empirical_coverage({}, VectorXd()), InvalidArgument);
}

TEST(Coverage, PermutationInvariant) {
  RngStream rng(1);
  std::vector<PredictionInterval> ivs;
  std::vector<double> ys;
  for (int i = 0; i < 50; ++i) {
    ivs.push_back(PredictionInterval::symmetric(rng.normal(), rng.uniform()));
    ys.push_back(rng.normal());
  }
  const double base = empirical_coverage(ivs, vec(ys));
  std::vector<std::size_t> order(50);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::vector<PredictionInterval> ivs2;
  std::vector<double> ys2;
  for (std::size_t i : order) {
    ivs2.push_back(ivs[i]);
    ys2.push_back(ys[i]);
  }
  EXPECT_EQ(empirical_coverage(ivs2, vec(ys2)), base);
}

TEST(Widths, Statistics) {
  const WidthStats constant = width_stats(sym({0, 5, 9}, {0.3, 0.3, 0.3}));
  EXPECT_EQ(constant.cv, 0.0);
  EXPECT_DOUBLE_EQ(constant.mean_half_width, 0.3);
  const WidthStats two = width_stats(sym({0, 0}, {1, 3}));
  EXPECT_DOUBLE_EQ(two.mean_half_width, 2.0);
  EXPECT_DOUBLE_EQ(two.cv, 0.5);
  EXPECT_EQ(width_stats(sym({4}, {2})).cv, 0.0);
  EXPECT_THROW(width_stats({}), InvalidArgument);
}

TEST(Adaptivity, PearsonAndSentinel) {
  const std::vector<double> sigma{0.1, 0.5, 1.0, 0.4};
  EXPECT_NEAR(*adaptivity_correlation(sym({0, 0, 0, 0}, {0.2, 1.0, 2.0, 0.8}), sigma), 1.0, 1e-12);
  std::vector<double> inverse;
  for (double s : sigma) inverse.push_back(3.0 - 2.0 * s);
  EXPECT_NEAR(*adaptivity_correlation(sym({0, 0, 0, 0}, inverse), sigma), -1.0, 1e-12);
  EXPECT_FALSE(adaptivity_correlation(sym({0, 1, 2, 3}, {0.7, 0.7, 0.7, 0.7}), sigma).has_value());
  EXPECT_THROW(adaptivity_correlation(sym({0, 0}, {1, 2}), {0.1, 0.2}), TooFewPoints);
  EXPECT_THROW(adaptivity_correlation(sym({0, 0, 0}, {1, 2, 3}), {0.2, 0.2, 0.2}), InvalidArgument);
}

TEST(Extrapolation, GpInflatesSplitCpDoesNot) {
  InputMatrix x(30, 1);
  VectorXd y(30);
  RngStream rng(2);
  for (Eigen::Index i = 0; i < 30; ++i) {
    x(i, 0) = rng.uniform(0.0, 1.0);
    y[i] = std::sin(6.0 * x(i, 0)) + 0.05 * rng.normal();
  }
  const double ell = 0.15;
  const GpModel gp = GpModel::fit({KernelFamily::matern52, ell, 1.0}, 0.0025, x, y);
  InputMatrix in(11, 1), out(2, 1);
  for (int i = 0; i < 11; ++i) in(i, 0) = 0.1 * i;
  out << -3.0 * ell, 1.0 + 3.0 * ell;
  const ConfidenceLevel level(0.05);
  EXPECT_GT(extrapolation_ratio(gp, in, out, level, x), 1.0);
  EXPECT_DOUBLE_EQ(extrapolation_ratio(gp, in, in, level), 1.0);

  auto point = std::make_shared<ConstantRegressor>(0.0, 1);
  const Dataset cal(x, y, std::vector<Role>(30, Role::calibration));
  const SplitCpModel cp = fit_split_cp(point, cal, level);
  EXPECT_EQ(extrapolation_ratio(cp, in, out, level), 1.0);
  EXPECT_THROW(extrapolation_ratio(gp, in, in, level, x), OutOfDomain);
  EXPECT_THROW(extrapolation_ratio(gp, InputMatrix(0, 1), out, level), InvalidArgument);
}

TEST(Extrapolation, ZeroInDomainWidthIsAnError) {
  InputMatrix x(2, 1);
  x << 0.0, 1.0;
  const Dataset cal(x, VectorXd::Zero(2), {Role::calibration, Role::calibration});
  const SplitCpModel cp = fit_split_cp(std::make_shared<ConstantRegressor>(0.0, 1), cal, ConfidenceLevel(0.5));
  EXPECT_THROW(extrapolation_ratio(cp, x, x, ConfidenceLevel(0.5)), InvalidArgument);
}

TEST(TrueInterval, OracleCoverageOnFreshSamples) {
  AnalyticalGpSpec spec;
  spec.realizations = 10;
  RngStream rng(3);
  const Dataset d = sample_realizations(spec, rng);
  const ConfidenceLevel level(0.05);
  std::vector<PredictionInterval> ivs;
  for (std::size_t i = 0; i < d.size(); ++i) ivs.push_back(true_interval(spec, d.input(i)[0], level));
  const double cov = empirical_coverage(ivs, d.targets());
  EXPECT_GE(cov, 0.93);
  EXPECT_LE(cov, 0.97);
}

TEST(Report, CsvRowLayout) {
  IntervalReport r;
  r.method = "split_cp";
  r.coverage = 0.948;
  r.mean_half_width = 1.25;
  r.width_cv = 0.0;
  r.non_adaptive = true;
  r.extrap_ratio = 1.0;
  r.seed = 42;
  std::ostringstream out;
  write_report_csv(out, {r});
  EXPECT_EQ(out.str(),
            "method,alpha,coverage,mean_half_width,width_cv,adaptivity,extrap_ratio,seed\n"
            "split_cp,0.05,0.948,1.25,0,non-adaptive,1,42\n");
  IntervalReport failed;
  failed.method = "bnn";
  failed.error = "diverged";
  EXPECT_EQ(report_csv_row(failed), "bnn,0.05,,,,,,0");
  const nlohmann::json j = to_json(failed);
  EXPECT_EQ(j["error"], "diverged");
  EXPECT_TRUE(j["coverage"].is_null());
  EXPECT_EQ(to_json(r)["adaptivity"], "non-adaptive");
}

}  // namespace
}  // namespace uqbench
