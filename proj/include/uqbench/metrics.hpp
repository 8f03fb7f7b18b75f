#pragma once

#include "uqbench/core.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <optional>
#include <ostream>
#include <string>

namespace uqbench {

/// Fraction of targets inside their closed interval.
inline double empirical_coverage(const std::vector<PredictionInterval>& intervals, const VectorXd& targets) {
  if (intervals.empty()) throw InvalidArgument("coverage of an empty interval set");
  if (intervals.size() != static_cast<std::size_t>(targets.size())) {
    throw DimensionMismatch("intervals and targets differ in length");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < intervals.size(); ++i) hits += intervals[i].contains(targets[static_cast<Eigen::Index>(i)]);
  return static_cast<double>(hits) / static_cast<double>(intervals.size());
}

struct WidthStats {
  double mean_half_width = 0.0;
  double cv = 0.0;  // population std / mean of half-widths
};

inline WidthStats width_stats(const std::vector<PredictionInterval>& intervals) {
  if (intervals.empty()) throw InvalidArgument("width statistics of an empty interval set");
  std::vector<double> hw;
  hw.reserve(intervals.size());
  for (const auto& iv : intervals) hw.push_back(iv.half_width());
  WidthStats s;
  s.mean_half_width = mean_of(hw);
  const auto [lo, hi] = std::minmax_element(hw.begin(), hw.end());
  if (*lo == *hi || !(s.mean_half_width > 0.0) || !std::isfinite(s.mean_half_width)) return s;
  long double ss = 0.0L;
  for (double h : hw) ss += (static_cast<long double>(h) - s.mean_half_width) * (h - s.mean_half_width);
  s.cv = std::sqrt(static_cast<double>(ss / hw.size())) / s.mean_half_width;
  return s;
}

/// Pearson correlation between half-width and the true noise std, or
/// nullopt ("non-adaptive") when every half-width is identical.
inline std::optional<double> adaptivity_correlation(const std::vector<PredictionInterval>& intervals,
                                                    const std::vector<double>& true_std) {
  if (intervals.size() != true_std.size()) throw DimensionMismatch("intervals and noise profile differ in length");
  if (intervals.size() < 3) throw TooFewPoints("adaptivity needs at least 3 points");
  std::vector<double> hw;
  for (const auto& iv : intervals) hw.push_back(iv.half_width());
  if (std::all_of(hw.begin(), hw.end(), [&](double h) { return h == hw.front(); })) return std::nullopt;
  if (std::all_of(true_std.begin(), true_std.end(), [&](double s) { return s == true_std.front(); })) {
    throw InvalidArgument("true noise profile is constant; adaptivity is undefined");
  }
  const double mh = mean_of(hw);
  const double ms = mean_of(true_std);
  long double sab = 0.0L, saa = 0.0L, sbb = 0.0L;
  for (std::size_t i = 0; i < hw.size(); ++i) {
    const long double a = hw[i] - mh;
    const long double b = true_std[i] - ms;
    sab += a * b;
    saa += a * a;
    sbb += b * b;
  }
  return std::clamp(static_cast<double>(sab / std::sqrt(saa * sbb)), -1.0, 1.0);
}

/// True when every row of `query` lies outside the bounding box of `train`.
inline bool outside_bounding_box(const InputMatrix& query, const InputMatrix& train) {
  const Eigen::RowVectorXd lo = train.colwise().minCoeff();
  const Eigen::RowVectorXd hi = train.colwise().maxCoeff();
  for (Eigen::Index i = 0; i < query.rows(); ++i) {
    const bool inside = ((query.row(i).array() >= lo.array()) && (query.row(i).array() <= hi.array())).all();
    if (inside) return false;
  }
  return true;
}

/// Mean half-width on the out-domain grid over mean half-width on the
/// in-domain grid.
inline double extrapolation_ratio(const IntervalPredictor& p, const InputMatrix& in_domain, const InputMatrix& out_domain,
                                  ConfidenceLevel level) {
  if (in_domain.rows() == 0 || out_domain.rows() == 0) throw InvalidArgument("extrapolation grids must be non-empty");
  const double in_w = width_stats(p.predict_intervals(in_domain, level)).mean_half_width;
  if (!(in_w > 0.0)) throw InvalidArgument("in-domain mean half-width is zero");
  return width_stats(p.predict_intervals(out_domain, level)).mean_half_width / in_w;
}

/// Same, after checking that the out-domain grid avoids the training range.
inline double extrapolation_ratio(const IntervalPredictor& p, const InputMatrix& in_domain, const InputMatrix& out_domain,
                                  ConfidenceLevel level, const InputMatrix& training_inputs) {
  if (!outside_bounding_box(out_domain, training_inputs)) {
    throw OutOfDomain("out-domain grid overlaps the training range");
  }
  return extrapolation_ratio(p, in_domain, out_domain, level);
}

// ---------------------------------------------------------------------------
// Reports

struct IntervalReport {
  std::string method;
  double alpha = 0.05;
  std::optional<double> coverage;
  std::optional<double> mean_half_width;
  std::optional<double> width_cv;
  std::optional<double> adaptivity;
  bool non_adaptive = false;
  std::optional<double> extrap_ratio;
  std::uint64_t seed = 0;
  std::optional<std::string> error;
};

inline std::string format_metric(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline const char* report_csv_header() {
  return "method,alpha,coverage,mean_half_width,width_cv,adaptivity,extrap_ratio,seed";
}

inline std::string report_csv_row(const IntervalReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? format_metric(*v) : std::string(); };
  std::string adapt = r.non_adaptive ? "non-adaptive" : opt(r.adaptivity);
  return r.method + "," + format_metric(r.alpha) + "," + opt(r.coverage) + "," + opt(r.mean_half_width) + "," +
         opt(r.width_cv) + "," + adapt + "," + opt(r.extrap_ratio) + "," + std::to_string(r.seed);
}

inline void write_report_csv(std::ostream& out, const std::vector<IntervalReport>& reports) {
  out << report_csv_header() << '\n';
  for (const auto& r : reports) out << report_csv_row(r) << '\n';
}

inline nlohmann::json to_json(const IntervalReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json j{{"method", r.method},
                   {"alpha", r.alpha},
                   {"coverage", opt(r.coverage)},
                   {"mean_half_width", opt(r.mean_half_width)},
                   {"width_cv", opt(r.width_cv)},
                   {"adaptivity", r.non_adaptive ? nlohmann::json("non-adaptive") : opt(r.adaptivity)},
                   {"extrap_ratio", opt(r.extrap_ratio)},
                   {"seed", r.seed}};
  if (r.error) j["error"] = *r.error;
  return j;
}

}  // namespace uqbench
