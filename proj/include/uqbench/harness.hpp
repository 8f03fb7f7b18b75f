#pragma once

#include "uqbench/config.hpp"
#include "uqbench/conformal.hpp"
#include "uqbench/datagen.hpp"
#include "uqbench/gp.hpp"
#include "uqbench/metrics.hpp"
#include "uqbench/neural.hpp"
#include "uqbench/neural_uq.hpp"

#include <boost/version.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <functional>
#include <map>
#include <numeric>
#include <filesystem>
#include <fstream>
#include <memory>

#ifndef UQBENCH_VERSION
#define UQBENCH_VERSION "dev"
#endif

namespace uqbench {

// ---------------------------------------------------------------------------
// Methods

enum class MethodKind { gp, mcd, de, bnn, split_cp, srcp };

inline const std::vector<MethodKind>& all_methods() {
  static const std::vector<MethodKind> m{MethodKind::gp,  MethodKind::mcd,      MethodKind::de,
                                         MethodKind::bnn, MethodKind::split_cp, MethodKind::srcp};
  return m;
}

inline const char* to_string(MethodKind m) {
  switch (m) {
    case MethodKind::gp: return "gp";
    case MethodKind::mcd: return "mcd";
    case MethodKind::de: return "de";
    case MethodKind::bnn: return "bnn";
    case MethodKind::split_cp: return "split_cp";
    case MethodKind::srcp: return "srcp";
  }
  return "?";
}

inline MethodKind method_from_string(const std::string& s) {
  for (MethodKind m : all_methods()) {
    if (s == to_string(m)) return m;
  }
  throw ConfigError("unknown method '" + s + "' (expected gp, mcd, de, bnn, split_cp or srcp)");
}

inline std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Experiment configuration

struct NetSettings {
  std::vector<std::size_t> hidden{64, 64};
  Activation activation = Activation::tanh;
  double dropout = 0.0;
  TrainConfig train;

  MlpSpec spec(std::size_t input_dim) const { return MlpSpec::make(input_dim, hidden, activation, dropout); }
};

struct GpSettings {
  KernelFamily kernel = KernelFamily::squared_exponential;
  bool refine = true;
};

struct McdSettings {
  NetSettings net = [] {
    NetSettings n;
    n.dropout = 0.25;
    return n;
  }();
  std::size_t passes = 100;
  IntervalKind interval = IntervalKind::gaussian;
};

struct DeSettings {
  NetSettings net;
  std::size_t members = 5;
  IntervalKind interval = IntervalKind::gaussian;
};

struct BnnSettings {
  std::vector<std::size_t> hidden{10, 10, 10};
  Activation activation = Activation::relu;
  BnnConfig bnn = [] {
    BnnConfig c;
    c.train.batch_size = 64;
    return c;
  }();
  IntervalKind interval = IntervalKind::gaussian;
};

enum class PointModelKind { mlp, gp };

struct PointSettings {
  PointModelKind kind = PointModelKind::mlp;
  NetSettings net = [] {
    NetSettings n;
    n.train.loss = LossKind::mse;
    return n;
  }();
  GpSettings gp;
};

struct SrcpSettings {
  PointSettings point;
  ScaleModelConfig scale;
  bool separate_residual_split = false;
};

enum class DatasetKind { analytical_gp, flux_surrogate, csv };

struct DatasetSettings {
  DatasetKind kind = DatasetKind::analytical_gp;
  AnalyticalGpSpec analytical;
  FluxSurrogateSpec flux;
  std::string csv_path;
};

struct GridSettings {
  std::size_t in_points = 101;
  std::size_t out_points = 40;  // split evenly between the two sides
  double out_left_lo = -2.0, out_left_hi = -0.1;
  double out_right_lo = 10.1, out_right_hi = 12.0;
  double flux_bank_offset = 100.0;  // mm beyond the training bank range
};

struct SearchDimension {
  enum class Kind { uniform, log_uniform, int_uniform, choice };
  std::string name;
  Kind kind = Kind::uniform;
  double lo = 0.0, hi = 0.0;
  nlohmann::json choices = nlohmann::json::array();
};

struct SearchSettings {
  std::vector<MethodKind> methods{MethodKind::mcd};
  std::size_t k_folds = 5;
  std::vector<SearchDimension> space;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::vector<double> alphas{0.05};
  std::vector<MethodKind> methods = all_methods();
  SplitFractions split;
  DatasetSettings dataset;
  GridSettings grids;
  GpSettings gp;
  McdSettings mcd;
  DeSettings de;
  BnnSettings bnn;
  PointSettings split_cp;
  SrcpSettings srcp;
  std::optional<SearchSettings> search;
  std::string output_dir = "results";
};

namespace detail {

inline Activation read_activation(const ConfigTable& t, Activation fallback) {
  try {
    return activation_from_string(t.string("activation", to_string(fallback)));
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("[") + t.name() + "] " + e.what());
  }
}

inline IntervalKind read_interval(const ConfigTable& t) {
  try {
    return interval_kind_from_string(t.string("interval", "gaussian"));
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("[") + t.name() + "] " + e.what());
  }
}

inline void read_train(const ConfigTable& t, TrainConfig& c) {
  c.learning_rate = t.number("learning_rate", c.learning_rate);
  c.batch_size = t.count("batch_size", c.batch_size, 1);
  c.epochs = t.count("epochs", c.epochs);
  c.l2 = t.number("l2", c.l2);
  c.k_folds = t.count("k_folds", c.k_folds, 2);
  if (t.has("loss")) {
    try {
      c.loss = loss_from_string(t.string("loss", ""));
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string("[") + t.name() + "] " + e.what());
    }
  }
  if (!(c.learning_rate > 0.0)) throw ConfigError("[" + t.name() + "] learning_rate must be > 0");
  if (!(c.l2 >= 0.0)) throw ConfigError("[" + t.name() + "] l2 must be >= 0");
}

inline void read_net(const ConfigTable& t, NetSettings& n) {
  n.hidden = t.counts("hidden", n.hidden);
  n.activation = read_activation(t, n.activation);
  n.dropout = t.number("dropout", n.dropout);
  if (!(n.dropout >= 0.0 && n.dropout < 1.0)) throw ConfigError("[" + t.name() + "] dropout must be in [0, 1)");
  read_train(t, n.train);
}

inline KernelFamily read_kernel(const ConfigTable& t, const std::string& key, KernelFamily fallback) {
  try {
    return kernel_family_from_string(t.string(key, to_string(fallback)));
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("[") + t.name() + "] " + e.what());
  }
}

inline void read_point(const ConfigTable& t, PointSettings& p) {
  const std::string kind = t.string("model", "mlp");
  if (kind == "mlp") {
    p.kind = PointModelKind::mlp;
  } else if (kind == "gp") {
    p.kind = PointModelKind::gp;
  } else {
    throw ConfigError("[" + t.name() + "] model must be \"mlp\" or \"gp\"");
  }
  read_net(t, p.net);
  p.gp.kernel = read_kernel(t, "kernel", p.gp.kernel);
  p.gp.refine = t.boolean("refine", p.gp.refine);
}

inline SearchDimension read_dimension(const std::string& name, const nlohmann::json& j) {
  static const std::vector<std::string> known{"learning_rate", "batch_size", "epochs", "dropout",
                                              "l2",            "hidden",     "activation"};
  if (std::find(known.begin(), known.end(), name) == known.end()) {
    throw ConfigError("unknown search dimension '" + name + "'");
  }
  if (!j.is_object() || j.size() != 1) {
    throw ConfigError("search dimension '" + name + "' needs exactly one of uniform, log_uniform, int_uniform, choice");
  }
  SearchDimension d;
  d.name = name;
  const auto& [kind, v] = *j.items().begin();
  if (kind == "choice") {
    if (!v.is_array() || v.empty()) throw ConfigError("search dimension '" + name + "' has an empty choice list");
    d.kind = SearchDimension::Kind::choice;
    d.choices = v;
    return d;
  }
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
    throw ConfigError("search dimension '" + name + "' needs a [lo, hi] pair");
  }
  d.lo = v[0].get<double>();
  d.hi = v[1].get<double>();
  if (!(d.lo <= d.hi)) throw ConfigError("search dimension '" + name + "' has lo > hi");
  if (kind == "uniform") {
    d.kind = SearchDimension::Kind::uniform;
  } else if (kind == "log_uniform") {
    if (!(d.lo > 0.0)) throw ConfigError("log_uniform dimension '" + name + "' needs lo > 0");
    d.kind = SearchDimension::Kind::log_uniform;
  } else if (kind == "int_uniform") {
    d.kind = SearchDimension::Kind::int_uniform;
  } else {
    throw ConfigError("search dimension '" + name + "' has unknown kind '" + kind + "'");
  }
  return d;
}

inline nlohmann::json net_json(const NetSettings& n) {
  return {{"hidden", n.hidden},
          {"activation", to_string(n.activation)},
          {"dropout", n.dropout},
          {"learning_rate", n.train.learning_rate},
          {"batch_size", n.train.batch_size},
          {"epochs", n.train.epochs},
          {"loss", to_string(n.train.loss)},
          {"l2", n.train.l2},
          {"k_folds", n.train.k_folds}};
}

inline nlohmann::json point_json(const PointSettings& p) {
  nlohmann::json j{{"model", p.kind == PointModelKind::mlp ? "mlp" : "gp"}};
  if (p.kind == PointModelKind::mlp) {
    j.update(net_json(p.net));
  } else {
    j["kernel"] = to_string(p.gp.kernel);
    j["refine"] = p.gp.refine;
  }
  return j;
}

}  // namespace detail

/// Build and validate a config from a parsed TOML document. Relative CSV
/// paths resolve against `base_dir`.
inline ExperimentConfig experiment_from_json(const nlohmann::json& doc, const std::string& base_dir = ".") {
  ExperimentConfig c;
  const ConfigTable root(doc, "");
  if (!root.has("seed")) throw ConfigError("missing required key 'seed'");
  c.seed = root.u64("seed");
  if (root.has("alpha")) {
    const auto& a = doc.at("alpha");
    c.alphas = a.is_array() ? root.numbers("alpha", {}) : std::vector<double>{root.number("alpha")};
  }
  if (c.alphas.empty()) throw ConfigError("'alpha' must list at least one level");
  for (double a : c.alphas) {
    if (!(a > 0.0 && a < 1.0)) throw ConfigError("alpha values must lie in (0, 1)");
  }
  if (std::adjacent_find(c.alphas.begin(), c.alphas.end()) != c.alphas.end()) {
    throw ConfigError("'alpha' lists a level twice");
  }
  std::vector<std::string> names;
  for (MethodKind m : c.methods) names.push_back(to_string(m));
  names = root.strings("methods", names);
  if (names.empty()) throw ConfigError("'methods' must list at least one method");
  c.methods.clear();
  for (const auto& n : names) {
    const MethodKind m = method_from_string(n);
    if (std::find(c.methods.begin(), c.methods.end(), m) != c.methods.end()) {
      throw ConfigError("method '" + n + "' listed twice");
    }
    c.methods.push_back(m);
  }
  c.output_dir = root.string("output_dir", c.output_dir);

  {
    const ConfigTable t = root.table("dataset");
    const std::string kind = t.string("kind", "analytical-gp");
    auto& a = c.dataset.analytical;
    auto& f = c.dataset.flux;
    if (kind == "analytical-gp") {
      c.dataset.kind = DatasetKind::analytical_gp;
      a.realizations = t.count("realizations", a.realizations, 1);
      a.points_per_realization = t.count("points_per_realization", a.points_per_realization, 2);
      const std::string mode = t.string("noise_mode", "scaled");
      if (mode == "scaled") {
        a.noise_mode = NoiseMode::scaled;
      } else if (mode == "additive") {
        a.noise_mode = NoiseMode::additive;
      } else {
        throw ConfigError("[dataset] noise_mode must be \"scaled\" or \"additive\"");
      }
    } else if (kind == "flux-surrogate") {
      c.dataset.kind = DatasetKind::flux_surrogate;
      f.active_length = t.number("active_length", f.active_length);
      f.amplitude = t.number("amplitude", f.amplitude);
      f.damping = t.number("damping", f.damping);
      f.cosine_stretch = t.number("cosine_stretch", f.cosine_stretch);
      f.ripple_amplitude = t.number("ripple_amplitude", f.ripple_amplitude);
      f.ripple_period = t.number("ripple_period", f.ripple_period);
      f.bank_depression = t.number("bank_depression", f.bank_depression);
      f.bank_width = t.number("bank_width", f.bank_width);
      f.bank_lo = t.number("bank_lo", f.bank_lo);
      f.bank_hi = t.number("bank_hi", f.bank_hi);
      f.relative_noise = t.number("relative_noise", f.relative_noise);
      f.cycles = t.count("cycles", f.cycles, 1);
      f.points_per_cycle = t.count("points_per_cycle", f.points_per_cycle, 2);
      try {
        f.validate();
      } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("[dataset] ") + e.what());
      }
    } else if (kind == "csv") {
      c.dataset.kind = DatasetKind::csv;
      const std::filesystem::path p = t.string("path", "");
      if (p.empty()) throw ConfigError("[dataset] kind = \"csv\" needs a path");
      c.dataset.csv_path = (p.is_absolute() ? p : std::filesystem::path(base_dir) / p).lexically_normal().string();
      if (!std::filesystem::exists(c.dataset.csv_path)) {
        throw ConfigError("dataset file '" + c.dataset.csv_path + "' does not exist");
      }
    } else {
      throw ConfigError("[dataset] kind must be analytical-gp, flux-surrogate or csv");
    }
    t.reject_unknown();
  }
  {
    const ConfigTable t = root.table("split");
    c.split.train = t.number("train", c.split.train);
    c.split.calibration = t.number("calibration", c.split.calibration);
    c.split.test = t.number("test", c.split.test);
    const double sum = c.split.train + c.split.calibration + c.split.test;
    if (!(c.split.train > 0 && c.split.calibration > 0 && c.split.test > 0) || std::abs(sum - 1.0) > 1e-9) {
      throw ConfigError("[split] fractions must be positive and sum to 1");
    }
    t.reject_unknown();
  }
  {
    const ConfigTable t = root.table("grids");
    auto& g = c.grids;
    g.in_points = t.count("in_points", g.in_points, 2);
    g.out_points = t.count("out_points", g.out_points, 2);
    const auto left = t.numbers("out_left", {g.out_left_lo, g.out_left_hi});
    const auto right = t.numbers("out_right", {g.out_right_lo, g.out_right_hi});
    if (left.size() != 2 || right.size() != 2) throw ConfigError("[grids] out_left/out_right need [lo, hi]");
    g.out_left_lo = left[0];
    g.out_left_hi = left[1];
    g.out_right_lo = right[0];
    g.out_right_hi = right[1];
    g.flux_bank_offset = t.number("flux_bank_offset", g.flux_bank_offset);
    if (!(g.out_left_lo <= g.out_left_hi && g.out_right_lo <= g.out_right_hi)) {
      throw ConfigError("[grids] out ranges need lo <= hi");
    }
    t.reject_unknown();
  }
  {
    const ConfigTable t = root.table("gp");
    c.gp.kernel = detail::read_kernel(t, "kernel", c.gp.kernel);
    c.gp.refine = t.boolean("refine", c.gp.refine);
    t.reject_unknown();
  }
  {
    const ConfigTable t = root.table("mcd");
    detail::read_net(t, c.mcd.net);
    c.mcd.passes = t.count("passes", c.mcd.passes, 2);
    c.mcd.interval = detail::read_interval(t);
    if (!(c.mcd.net.dropout > 0.0)) throw ConfigError("[mcd] dropout must be > 0");
    t.reject_unknown();
  }
  {
    const ConfigTable t = root.table("de");
    detail::read_net(t, c.de.net);
    c.de.members = t.count("members", c.de.members, 2);
    c.de.interval = detail::read_interval(t);
    t.reject_unknown();
  }
  {
    const ConfigTable t = root.table("bnn");
    c.bnn.hidden = t.counts("hidden", c.bnn.hidden);
    c.bnn.activation = detail::read_activation(t, c.bnn.activation);
    detail::read_train(t, c.bnn.bnn.train);
    c.bnn.bnn.prior_std = t.number("prior_std", c.bnn.bnn.prior_std);
    c.bnn.bnn.rho_init = t.number("rho_init", c.bnn.bnn.rho_init);
    c.bnn.bnn.kl_anneal_fraction = t.number("kl_anneal_fraction", c.bnn.bnn.kl_anneal_fraction);
    c.bnn.bnn.samples = t.count("samples", c.bnn.bnn.samples, 2);
    c.bnn.interval = detail::read_interval(t);
    try {
      c.bnn.bnn.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string("[bnn] ") + e.what());
    }
    t.reject_unknown();
  }
  {
    const ConfigTable t = root.table("split_cp");
    detail::read_point(t, c.split_cp);
    t.reject_unknown();
  }
  {
    const ConfigTable t = root.table("srcp");
    detail::read_point(t, c.srcp.point);
    auto& s = c.srcp.scale;
    try {
      s.kind = scale_model_from_string(t.string("residual_model", to_string(s.kind)));
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string("[srcp] ") + e.what());
    }
    s.gp_kernel = detail::read_kernel(t, "residual_kernel", s.gp_kernel);
    s.knn_k = t.count("residual_knn_k", s.knn_k, 1);
    s.mlp_hidden = t.counts("residual_hidden", s.mlp_hidden);
    s.mlp_train.epochs = t.count("residual_epochs", s.mlp_train.epochs);
    const std::string split = t.string("residual_split", "same");
    if (split != "same" && split != "separate") throw ConfigError("[srcp] residual_split must be same or separate");
    c.srcp.separate_residual_split = split == "separate";
    t.reject_unknown();
  }
  if (root.has("search")) {
    const ConfigTable t = root.table("search");
    SearchSettings s;
    std::vector<std::string> names = t.strings("methods", {"mcd"});
    s.methods.clear();
    for (const auto& n : names) {
      const MethodKind m = method_from_string(n);
      if (m != MethodKind::mcd && m != MethodKind::de && m != MethodKind::bnn) {
        throw ConfigError("random search supports mcd, de and bnn, not '" + n + "'");
      }
      s.methods.push_back(m);
    }
    if (s.methods.empty()) throw ConfigError("[search] methods must not be empty");
    s.k_folds = t.count("k_folds", s.k_folds, 2);
    if (t.has("space")) {
      const auto& space = doc.at("search").at("space");
      if (!space.is_object()) throw ConfigError("[search.space] must be a table");
      for (const auto& [name, v] : space.items()) s.space.push_back(detail::read_dimension(name, v));
      t.table("space");
    }
    t.reject_unknown();
    c.search = std::move(s);
  }
  root.reject_unknown();
  return c;
}

inline ExperimentConfig load_experiment(const std::string& path) {
  const auto base = std::filesystem::path(path).parent_path();
  return experiment_from_json(load_toml(path), base.empty() ? "." : base.string());
}

/// Canonical form. Excludes the output directory, so hashes track only
/// settings that affect results.
inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["alpha"] = c.alphas;
  for (MethodKind m : c.methods) j["methods"].push_back(to_string(m));
  j["split"] = {{"train", c.split.train}, {"calibration", c.split.calibration}, {"test", c.split.test}};
  nlohmann::json d;
  switch (c.dataset.kind) {
    case DatasetKind::analytical_gp: {
      const auto& a = c.dataset.analytical;
      d = {{"kind", "analytical-gp"},
           {"realizations", a.realizations},
           {"points_per_realization", a.points_per_realization},
           {"noise_mode", a.noise_mode == NoiseMode::scaled ? "scaled" : "additive"}};
      break;
    }
    case DatasetKind::flux_surrogate: {
      const auto& f = c.dataset.flux;
      d = {{"kind", "flux-surrogate"},
           {"active_length", f.active_length},
           {"amplitude", f.amplitude},
           {"damping", f.damping},
           {"cosine_stretch", f.cosine_stretch},
           {"ripple_amplitude", f.ripple_amplitude},
           {"ripple_period", f.ripple_period},
           {"bank_depression", f.bank_depression},
           {"bank_width", f.bank_width},
           {"bank_lo", f.bank_lo},
           {"bank_hi", f.bank_hi},
           {"relative_noise", f.relative_noise},
           {"cycles", f.cycles},
           {"points_per_cycle", f.points_per_cycle}};
      break;
    }
    case DatasetKind::csv:
      d = {{"kind", "csv"}, {"path", c.dataset.csv_path}};
      break;
  }
  j["dataset"] = d;
  const auto& g = c.grids;
  j["grids"] = {{"in_points", g.in_points},
                {"out_points", g.out_points},
                {"out_left", {g.out_left_lo, g.out_left_hi}},
                {"out_right", {g.out_right_lo, g.out_right_hi}},
                {"flux_bank_offset", g.flux_bank_offset}};
  j["gp"] = {{"kernel", to_string(c.gp.kernel)}, {"refine", c.gp.refine}};
  j["mcd"] = detail::net_json(c.mcd.net);
  j["mcd"]["passes"] = c.mcd.passes;
  j["mcd"]["interval"] = c.mcd.interval == IntervalKind::gaussian ? "gaussian" : "empirical";
  j["de"] = detail::net_json(c.de.net);
  j["de"]["members"] = c.de.members;
  j["de"]["interval"] = c.de.interval == IntervalKind::gaussian ? "gaussian" : "empirical";
  const auto& b = c.bnn.bnn;
  NetSettings bnet;
  bnet.hidden = c.bnn.hidden;
  bnet.activation = c.bnn.activation;
  bnet.train = b.train;
  j["bnn"] = detail::net_json(bnet);
  j["bnn"].erase("dropout");
  j["bnn"].update({{"prior_std", b.prior_std},
                   {"rho_init", b.rho_init},
                   {"kl_anneal_fraction", b.kl_anneal_fraction},
                   {"samples", b.samples},
                   {"interval", c.bnn.interval == IntervalKind::gaussian ? "gaussian" : "empirical"}});
  j["split_cp"] = detail::point_json(c.split_cp);
  j["srcp"] = detail::point_json(c.srcp.point);
  const auto& s = c.srcp.scale;
  j["srcp"]["residual_model"] = to_string(s.kind);
  j["srcp"]["residual_split"] = c.srcp.separate_residual_split ? "separate" : "same";
  switch (s.kind) {
    case ScaleModelKind::gp: j["srcp"]["residual_kernel"] = to_string(s.gp_kernel); break;
    case ScaleModelKind::knn: j["srcp"]["residual_knn_k"] = s.knn_k; break;
    case ScaleModelKind::mlp:
      j["srcp"]["residual_hidden"] = s.mlp_hidden;
      j["srcp"]["residual_epochs"] = s.mlp_train.epochs;
      break;
  }
  if (c.search) {
    nlohmann::json sj{{"k_folds", c.search->k_folds}};
    for (MethodKind m : c.search->methods) sj["methods"].push_back(to_string(m));
    nlohmann::json space = nlohmann::json::object();
    for (const auto& dim : c.search->space) {
      switch (dim.kind) {
        case SearchDimension::Kind::uniform: space[dim.name] = {{"uniform", {dim.lo, dim.hi}}}; break;
        case SearchDimension::Kind::log_uniform: space[dim.name] = {{"log_uniform", {dim.lo, dim.hi}}}; break;
        case SearchDimension::Kind::int_uniform: space[dim.name] = {{"int_uniform", {dim.lo, dim.hi}}}; break;
        case SearchDimension::Kind::choice: space[dim.name] = {{"choice", dim.choices}}; break;
      }
    }
    sj["space"] = space;
    j["search"] = sj;
  }
  return j;
}

inline std::string config_hash(const ExperimentConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json(c).dump())));
  return buf;
}

// ---------------------------------------------------------------------------
// Data and grids

struct BenchmarkData {
  Dataset data;                                      // roles assigned
  std::function<double(std::span<const double>)> true_std;  // empty when unknown
  InputMatrix in_grid;
  InputMatrix out_grid;
};

namespace detail {

inline InputMatrix column(const std::vector<double>& v) {
  InputMatrix m(static_cast<Eigen::Index>(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = v[i];
  return m;
}

inline Dataset concat(const Dataset& a, const Dataset& b) {
  InputMatrix x(static_cast<Eigen::Index>(a.size() + b.size()), static_cast<Eigen::Index>(a.dim()));
  x << a.inputs(), b.inputs();
  VectorXd y(x.rows());
  y << a.targets(), b.targets();
  std::vector<Role> roles = a.roles();
  roles.insert(roles.end(), b.roles().begin(), b.roles().end());
  return Dataset(std::move(x), std::move(y), std::move(roles));
}

}  // namespace detail

inline BenchmarkData make_benchmark_data(const ExperimentConfig& c) {
  RngStream rng = RngStream(c.seed).derive(fnv1a64("data"));
  BenchmarkData out;
  const GridSettings& g = c.grids;
  const std::size_t left_n = g.out_points / 2;
  const std::size_t right_n = g.out_points - left_n;
  switch (c.dataset.kind) {
    case DatasetKind::analytical_gp: {
      const AnalyticalGpSpec spec = c.dataset.analytical;
      out.data = split_dataset(sample_realizations(spec, rng), c.split, rng);
      out.true_std = [spec](std::span<const double> x) { return noise_std(spec, x[0]); };
      out.in_grid = detail::column(linspace(spec.x_lo, spec.x_hi, g.in_points));
      std::vector<double> outside = linspace(g.out_left_lo, g.out_left_hi, left_n);
      const std::vector<double> right = linspace(g.out_right_lo, g.out_right_hi, right_n);
      outside.insert(outside.end(), right.begin(), right.end());
      out.out_grid = detail::column(outside);
      break;
    }
    case DatasetKind::flux_surrogate: {
      const FluxSurrogateSpec spec = c.dataset.flux;
      out.data = split_dataset(sample_flux_surrogate(spec, rng), c.split, rng);
      out.true_std = [spec](std::span<const double> x) {
        return spec.relative_noise * std::abs(flux_profile(spec, x[0], x[1]));
      };
      const std::vector<double> z = linspace(0.0, spec.active_length, g.in_points);
      out.in_grid.resize(static_cast<Eigen::Index>(z.size()), 2);
      for (std::size_t i = 0; i < z.size(); ++i) {
        out.in_grid.row(static_cast<Eigen::Index>(i)) << z[i], 0.5 * (spec.bank_lo + spec.bank_hi);
      }
      const std::vector<double> zl = linspace(0.0, spec.active_length, left_n);
      const std::vector<double> zr = linspace(0.0, spec.active_length, right_n);
      out.out_grid.resize(static_cast<Eigen::Index>(zl.size() + zr.size()), 2);
      Eigen::Index row = 0;
      for (double zz : zl) out.out_grid.row(row++) << zz, spec.bank_lo - g.flux_bank_offset;
      for (double zz : zr) out.out_grid.row(row++) << zz, spec.bank_hi + g.flux_bank_offset;
      break;
    }
    case DatasetKind::csv: {
      Dataset d = read_dataset_csv(c.dataset.csv_path);
      out.data = d.count(Role::train) == d.size() ? split_dataset(d, c.split, rng) : std::move(d);
      out.in_grid = out.data.subset(Role::test).inputs();
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fitting

struct FittedMethod {
  std::shared_ptr<const IntervalPredictor> predictor;
  std::shared_ptr<const SamplingPredictor> sampler;  // set for the neural methods
  nlohmann::json details = nlohmann::json::object();
};

namespace detail {

inline GpModel fit_gp(const GpSettings& s, const InputMatrix& x, const VectorXd& y, nlohmann::json& details) {
  GpModel gp = select_hyperparameters(x, y, default_grid(s.kernel, x, y));
  if (s.refine) gp = refine_hyperparameters(x, y, gp);
  details["kernel"] = to_string(gp.kernel().family);
  details["length_scale"] = gp.kernel().length_scale;
  details["signal_variance"] = gp.kernel().variance;
  details["noise_variance"] = gp.noise_variance();
  details["log_marginal_likelihood"] = gp.log_marginal_likelihood();
  return gp;
}

inline std::shared_ptr<const Regressor> fit_point(const PointSettings& s, const Dataset& train_set, RngStream& rng,
                                                  nlohmann::json& details) {
  if (s.kind == PointModelKind::gp) {
    return std::make_shared<GpModel>(fit_gp(s.gp, train_set.inputs(), train_set.targets(), details["point_model"]));
  }
  details["point_model"] = {{"model", "mlp"}};
  return std::make_shared<MlpRegressor>(
      train(s.net.spec(train_set.dim()), s.net.train, train_set.inputs(), train_set.targets(), rng));
}

}  // namespace detail

/// Fit one method on the train role (and calibration role for the CP
/// methods).
inline FittedMethod fit_method(MethodKind m, const ExperimentConfig& c, const Dataset& data, RngStream rng) {
  FittedMethod f;
  const Dataset train_set = data.subset(Role::train);
  const std::size_t d = data.dim();
  const ConfidenceLevel level(c.alphas.front());
  switch (m) {
    case MethodKind::gp:
      f.predictor = std::make_shared<GpModel>(detail::fit_gp(c.gp, train_set.inputs(), train_set.targets(), f.details));
      break;
    case MethodKind::mcd: {
      RngStream train_rng = rng.derive(0);
      auto p = std::make_shared<McdPredictor>(train(c.mcd.net.spec(d), c.mcd.net.train, train_set.inputs(), train_set.targets(),
                                                    train_rng),
                                              c.mcd.passes, rng.derive(1).seed());
      p->set_interval_kind(c.mcd.interval);
      f.sampler = p;
      f.predictor = p;
      f.details["passes"] = c.mcd.passes;
      break;
    }
    case MethodKind::de: {
      RngStream train_rng = rng.derive(0);
      auto p = std::make_shared<EnsemblePredictor>(
          fit_ensemble(c.de.net.spec(d), c.de.net.train, train_set.inputs(), train_set.targets(), c.de.members, train_rng));
      p->set_interval_kind(c.de.interval);
      f.sampler = p;
      f.predictor = p;
      f.details["members"] = c.de.members;
      break;
    }
    case MethodKind::bnn: {
      RngStream train_rng = rng.derive(0);
      BnnHistory hist;
      auto p = std::make_shared<BnnPredictor>(train_bnn(MlpSpec::make(d, c.bnn.hidden, c.bnn.activation, 0.0), c.bnn.bnn,
                                                        train_set.inputs(), train_set.targets(), train_rng, &hist,
                                                        rng.derive(1).seed()));
      p->set_interval_kind(c.bnn.interval);
      f.sampler = p;
      f.predictor = p;
      f.details["samples"] = c.bnn.bnn.samples;
      if (!hist.epoch_loss.empty()) {
        f.details["elbo_first_epoch"] = hist.epoch_loss.front();
        f.details["elbo_last_epoch"] = hist.epoch_loss.back();
      }
      break;
    }
    case MethodKind::split_cp: {
      RngStream point_rng = rng.derive(0);
      auto point = detail::fit_point(c.split_cp, train_set, point_rng, f.details);
      auto p = std::make_shared<SplitCpModel>(fit_split_cp(point, data, level));
      f.details["calibration_size"] = p->calibration_size();
      f.predictor = p;
      break;
    }
    case MethodKind::srcp: {
      RngStream point_rng = rng.derive(0);
      RngStream scale_rng = rng.derive(1);
      const Dataset cal = data.subset(Role::calibration);
      if (c.srcp.separate_residual_split) {
        std::vector<std::size_t> idx(train_set.size());
        std::iota(idx.begin(), idx.end(), 0);
        RngStream split_rng = rng.derive(2);
        split_rng.shuffle(idx);
        const std::size_t half = idx.size() / 2;
        const Dataset point_part = train_set.select({idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(half)}, Role::train);
        const Dataset scale_part = train_set.select({idx.begin() + static_cast<std::ptrdiff_t>(half), idx.end()}, Role::train);
        auto point = detail::fit_point(c.srcp.point, point_part, point_rng, f.details);
        f.predictor = std::make_shared<SrcpModel>(
            fit_srcp(point, c.srcp.scale, detail::concat(scale_part, cal), level, scale_rng));
      } else {
        auto point = detail::fit_point(c.srcp.point, train_set, point_rng, f.details);
        f.predictor = std::make_shared<SrcpModel>(fit_srcp(point, c.srcp.scale, data, level, scale_rng));
      }
      f.details["residual_model"] = to_string(c.srcp.scale.kind);
      f.details["calibration_size"] = cal.size();
      break;
    }
  }
  return f;
}

// ---------------------------------------------------------------------------
// Running

struct PointRow {
  std::string set;  // test | in_domain | out_domain
  double alpha = 0.0;
  std::vector<double> x;
  std::optional<double> y_true;
  PredictionInterval interval;
  std::optional<double> aleatoric_std;
  std::optional<double> epistemic_std;
};

struct MethodOutcome {
  MethodKind method = MethodKind::gp;
  std::uint64_t stream_seed = 0;
  std::optional<std::string> error;
  std::vector<IntervalReport> reports;  // one per alpha
  std::vector<PointRow> rows;
  nlohmann::json details = nlohmann::json::object();
  double seconds = 0.0;
};

struct ExperimentResult {
  std::string hash;
  ExperimentConfig config;
  std::vector<MethodOutcome> outcomes;
  nlohmann::json metadata;

  std::vector<IntervalReport> reports() const {
    std::vector<IntervalReport> out;
    for (const auto& o : outcomes) out.insert(out.end(), o.reports.begin(), o.reports.end());
    return out;
  }
  const MethodOutcome* outcome(MethodKind m) const {
    for (const auto& o : outcomes) {
      if (o.method == m) return &o;
    }
    return nullptr;
  }
  bool any_failed() const {
    return std::any_of(outcomes.begin(), outcomes.end(), [](const MethodOutcome& o) { return o.error.has_value(); });
  }
  int exit_code() const { return any_failed() ? 2 : 0; }
};

inline RngStream method_stream(const ExperimentConfig& c, MethodKind m) {
  return RngStream(c.seed).derive(fnv1a64(to_string(m)));
}

namespace detail {

inline void score_method(const FittedMethod& f, const BenchmarkData& b, const ExperimentConfig& c, MethodOutcome& o) {
  const Dataset test = b.data.subset(Role::test);
  const InputMatrix train_x = b.data.subset(Role::train).inputs();
  std::vector<PooledPrediction> test_pool, in_pool, out_pool;
  if (f.sampler) {
    test_pool = f.sampler->predict_pooled(test.inputs());
    in_pool = f.sampler->predict_pooled(b.in_grid);
    if (b.out_grid.rows() > 0) out_pool = f.sampler->predict_pooled(b.out_grid);
  }
  std::vector<double> true_std;
  if (b.true_std) {
    for (std::size_t i = 0; i < test.size(); ++i) true_std.push_back(b.true_std(test.input(i)));
  }
  for (double alpha : c.alphas) {
    const ConfidenceLevel level(alpha);
    IntervalReport r;
    r.method = to_string(o.method);
    r.alpha = alpha;
    r.seed = c.seed;
    const auto ivs = f.predictor->predict_intervals(test.inputs(), level);
    r.coverage = empirical_coverage(ivs, test.targets());
    const WidthStats ws = width_stats(ivs);
    r.mean_half_width = ws.mean_half_width;
    r.width_cv = ws.cv;
    if (!true_std.empty() && ivs.size() >= 3) {
      r.adaptivity = adaptivity_correlation(ivs, true_std);
      r.non_adaptive = !r.adaptivity.has_value();
    }
    if (b.out_grid.rows() > 0) r.extrap_ratio = extrapolation_ratio(*f.predictor, b.in_grid, b.out_grid, level, train_x);
    o.reports.push_back(r);

    auto emit = [&](const std::string& set, const InputMatrix& x, const std::vector<PredictionInterval>& iv,
                    const std::vector<PooledPrediction>& pool, const VectorXd* y) {
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        PointRow row;
        row.set = set;
        row.alpha = alpha;
        for (Eigen::Index k = 0; k < x.cols(); ++k) row.x.push_back(x(i, k));
        if (y) row.y_true = (*y)[i];
        row.interval = iv[static_cast<std::size_t>(i)];
        if (!pool.empty()) {
          row.aleatoric_std = std::sqrt(pool[static_cast<std::size_t>(i)].aleatoric);
          row.epistemic_std = std::sqrt(pool[static_cast<std::size_t>(i)].epistemic);
        }
        o.rows.push_back(std::move(row));
      }
    };
    emit("test", test.inputs(), ivs, test_pool, &test.targets());
    emit("in_domain", b.in_grid, f.predictor->predict_intervals(b.in_grid, level), in_pool, nullptr);
    if (b.out_grid.rows() > 0) {
      emit("out_domain", b.out_grid, f.predictor->predict_intervals(b.out_grid, level), out_pool, nullptr);
    }
  }
}

inline std::string versions_compiler() {
#ifdef __VERSION__
  return __VERSION__;
#else
  return "unknown";
#endif
}

}  // namespace detail

/// Fit, calibrate and score every configured method. Per-method failures
/// are recorded and do not stop the run.
inline ExperimentResult run_experiment(const ExperimentConfig& c) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  ExperimentResult res;
  res.config = c;
  res.hash = config_hash(c);
  const BenchmarkData b = make_benchmark_data(c);

  for (MethodKind m : c.methods) {
    MethodOutcome o;
    o.method = m;
    const RngStream rng = method_stream(c, m);
    o.stream_seed = rng.seed();
    const auto m0 = clock::now();
    try {
      const FittedMethod f = fit_method(m, c, b.data, rng);
      o.details = f.details;
      detail::score_method(f, b, c, o);
    } catch (const std::exception& e) {
      o.error = e.what();
      o.reports.clear();
      o.rows.clear();
      for (double alpha : c.alphas) {
        IntervalReport r;
        r.method = to_string(m);
        r.alpha = alpha;
        r.seed = c.seed;
        r.error = o.error;
        o.reports.push_back(r);
      }
    }
    o.seconds = std::chrono::duration<double>(clock::now() - m0).count();
    res.outcomes.push_back(std::move(o));
  }

  nlohmann::json meta;
  meta["config_hash"] = res.hash;
  meta["config"] = to_json(c);
  meta["seed"] = c.seed;
  meta["data"] = {{"train", b.data.count(Role::train)},
                  {"calibration", b.data.count(Role::calibration)},
                  {"test", b.data.count(Role::test)},
                  {"in_domain_grid", b.in_grid.rows()},
                  {"out_domain_grid", b.out_grid.rows()},
                  {"true_noise_known", static_cast<bool>(b.true_std)}};
  if (c.dataset.kind == DatasetKind::flux_surrogate) meta["data"]["note"] = "synthetic flux-like surrogate, not measurements";
  meta["benchmark_gp_kernel"] = to_string(c.gp.kernel);
  meta["adaptivity_definition"] = "Pearson correlation of interval half-width with the true noise std over test points";
  for (const auto& o : res.outcomes) {
    nlohmann::json mj{{"method", to_string(o.method)},
                      {"stream_seed", o.stream_seed},
                      {"wall_seconds", o.seconds},
                      {"details", o.details},
                      {"status", o.error ? "failed" : "ok"}};
    if (o.error) mj["error"] = *o.error;
    for (const auto& r : o.reports) mj["reports"].push_back(to_json(r));
    meta["methods"].push_back(mj);
  }
  meta["versions"] = {{"uqbench", UQBENCH_VERSION},
                      {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                    std::to_string(EIGEN_MINOR_VERSION)},
                      {"boost", BOOST_LIB_VERSION},
                      {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                            std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                            std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                      {"compiler", detail::versions_compiler()}};
  meta["wall_seconds"] = std::chrono::duration<double>(clock::now() - t0).count();
  res.metadata = std::move(meta);
  return res;
}

// ---------------------------------------------------------------------------
// Output files

inline void write_intervals_csv(std::ostream& out, const MethodOutcome& o) {
  const std::size_t d = o.rows.empty() ? 0 : o.rows.front().x.size();
  out << "set,alpha";
  for (std::size_t k = 0; k < d; ++k) out << ",x_" << k;
  out << ",y_true,center,lower,upper,aleatoric_std,epistemic_std\n";
  auto opt = [](const std::optional<double>& v) { return v ? format_metric(*v) : std::string(); };
  for (const auto& r : o.rows) {
    out << r.set << ',' << format_metric(r.alpha);
    for (double v : r.x) out << ',' << format_metric(v);
    out << ',' << opt(r.y_true) << ',' << format_metric(r.interval.center()) << ',' << format_metric(r.interval.lower())
        << ',' << format_metric(r.interval.upper()) << ',' << opt(r.aleatoric_std) << ',' << opt(r.epistemic_std)
        << '\n';
  }
}

struct OutputFiles {
  std::string report;
  std::string metadata;
  std::vector<std::string> intervals;
};

inline std::ofstream open_output(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
  return out;
}

/// Files are named after the config hash: report_<hash>.csv,
/// intervals_<method>_<hash>.csv, metadata_<hash>.json.
inline OutputFiles write_outputs(const ExperimentResult& res, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  OutputFiles files;
  files.report = (dir / ("report_" + res.hash + ".csv")).string();
  {
    auto out = open_output(files.report);
    write_report_csv(out, res.reports());
  }
  for (const auto& o : res.outcomes) {
    if (o.error) continue;
    const std::string path = (dir / ("intervals_" + std::string(to_string(o.method)) + "_" + res.hash + ".csv")).string();
    auto out = open_output(path);
    write_intervals_csv(out, o);
    files.intervals.push_back(path);
  }
  files.metadata = (dir / ("metadata_" + res.hash + ".json")).string();
  nlohmann::json meta = res.metadata;
  meta["files"] = {{"report", std::filesystem::path(files.report).filename().string()}};
  for (const auto& p : files.intervals) meta["files"]["intervals"].push_back(std::filesystem::path(p).filename().string());
  auto out = open_output(files.metadata);
  out << meta.dump(2) << '\n';
  return files;
}

// ---------------------------------------------------------------------------
// Random search

struct SearchTrial {
  std::size_t index = 0;
  MethodKind method = MethodKind::mcd;
  nlohmann::json params = nlohmann::json::object();
  std::vector<double> fold_nll;
  double mean_nll = std::numeric_limits<double>::quiet_NaN();
  std::optional<std::string> error;
};

struct SearchResult {
  std::string hash;
  std::vector<SearchTrial> trials;
  std::map<MethodKind, std::size_t> best;  // index into trials
};

namespace detail {

inline nlohmann::json draw_params(const std::vector<SearchDimension>& space, RngStream& rng) {
  nlohmann::json p = nlohmann::json::object();
  for (const auto& dim : space) {
    switch (dim.kind) {
      case SearchDimension::Kind::uniform: p[dim.name] = rng.uniform(dim.lo, dim.hi); break;
      case SearchDimension::Kind::log_uniform:
        p[dim.name] = std::exp(rng.uniform(std::log(dim.lo), std::log(dim.hi)));
        break;
      case SearchDimension::Kind::int_uniform: {
        const auto lo = static_cast<long long>(std::ceil(dim.lo));
        const auto hi = static_cast<long long>(std::floor(dim.hi));
        if (hi < lo) throw ConfigError("int_uniform dimension '" + dim.name + "' contains no integer");
        p[dim.name] = lo + static_cast<long long>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
        break;
      }
      case SearchDimension::Kind::choice: p[dim.name] = dim.choices[rng.below(dim.choices.size())]; break;
    }
  }
  return p;
}

inline void apply_params(const nlohmann::json& p, NetSettings& net) {
  ConfigTable t(p, "search.space");
  read_net(t, net);
}

/// Config with one method's network settings overridden by a trial draw.
inline ExperimentConfig apply_trial(const ExperimentConfig& base, MethodKind m, const nlohmann::json& p) {
  ExperimentConfig c = base;
  switch (m) {
    case MethodKind::mcd: apply_params(p, c.mcd.net); break;
    case MethodKind::de: apply_params(p, c.de.net); break;
    case MethodKind::bnn: {
      NetSettings n;
      n.hidden = c.bnn.hidden;
      n.activation = c.bnn.activation;
      n.train = c.bnn.bnn.train;
      apply_params(p, n);
      if (n.dropout != 0.0) throw InvalidArgument("BNN does not use dropout");
      c.bnn.hidden = n.hidden;
      c.bnn.activation = n.activation;
      c.bnn.bnn.train = n.train;
      break;
    }
    default: throw ConfigError("random search supports mcd, de and bnn");
  }
  return c;
}

}  // namespace detail

/// Seeded random search. Every trial sees the same folds and training
/// streams, so trials differ only by their hyperparameters.
inline SearchResult random_search(const ExperimentConfig& c, std::size_t budget) {
  if (budget < 1) throw ConfigError("search budget must be >= 1");
  if (!c.search) throw ConfigError("config has no [search] table");
  if (c.search->space.empty()) throw ConfigError("search space is empty");
  SearchResult res;
  res.hash = config_hash(c);
  const BenchmarkData b = make_benchmark_data(c);
  const Dataset train = b.data.subset(Role::train);
  const std::size_t k = c.search->k_folds;
  if (train.size() < k) throw TooFewPoints("fewer training points than folds");
  RngStream fold_rng = RngStream(c.seed).derive(fnv1a64("search-folds"));
  const std::vector<std::vector<std::size_t>> folds = make_folds(train.size(), k, fold_rng);

  for (MethodKind m : c.search->methods) {
    RngStream draw_rng = RngStream(c.seed).derive(fnv1a64(std::string("search-draws-") + to_string(m)));
    for (std::size_t t = 0; t < budget; ++t) {
      SearchTrial trial;
      trial.index = res.trials.size();
      trial.method = m;
      trial.params = detail::draw_params(c.search->space, draw_rng);
      try {
        const ExperimentConfig tc = detail::apply_trial(c, m, trial.params);
        for (std::size_t f = 0; f < k; ++f) {
          std::vector<Role> roles(train.size(), Role::train);
          for (std::size_t i : folds[f]) roles[i] = Role::test;
          const Dataset fold_data(train.inputs(), train.targets(), roles);
          const Dataset val = fold_data.subset(Role::test);
          const FittedMethod fm = fit_method(m, tc, fold_data, method_stream(c, m).derive(f));
          const auto pooled = fm.sampler->predict_pooled(val.inputs());
          double nll = 0.0;
          for (std::size_t i = 0; i < val.size(); ++i) nll += gaussian_nll(pooled[i].gaussian(), val.target(i));
          trial.fold_nll.push_back(nll / static_cast<double>(val.size()));
        }
        trial.mean_nll = mean_of(trial.fold_nll);
        if (!std::isfinite(trial.mean_nll)) throw DivergenceError("non-finite validation NLL");
      } catch (const std::exception& e) {
        trial.error = e.what();
        trial.mean_nll = std::numeric_limits<double>::quiet_NaN();
      }
      const auto it = res.best.find(m);
      if (!trial.error && (it == res.best.end() || trial.mean_nll < res.trials[it->second].mean_nll)) {
        res.best[m] = trial.index;
      }
      res.trials.push_back(std::move(trial));
    }
  }
  return res;
}

inline void write_search_log(std::ostream& out, const SearchResult& r) {
  out << "trial,method,params,mean_nll,fold_nll,error\n";
  auto quote = [](std::string s) {
    std::string q = "\"";
    for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    return q + "\"";
  };
  for (const auto& t : r.trials) {
    std::string folds;
    for (double v : t.fold_nll) folds += (folds.empty() ? "" : ";") + format_metric(v);
    out << t.index << ',' << to_string(t.method) << ',' << quote(t.params.dump()) << ','
        << (t.error ? std::string() : format_metric(t.mean_nll)) << ',' << folds << ','
        << (t.error ? quote(*t.error) : std::string()) << '\n';
  }
}

inline nlohmann::json search_summary(const SearchResult& r) {
  nlohmann::json j{{"config_hash", r.hash}, {"trials", r.trials.size()}};
  j["best"] = nlohmann::json::object();
  for (const auto& [m, idx] : r.best) {
    j["best"][to_string(m)] = {{"trial", idx}, {"params", r.trials[idx].params}, {"mean_nll", r.trials[idx].mean_nll}};
  }
  return j;
}

inline std::vector<std::string> write_search_outputs(const SearchResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::string log = (dir / ("search_" + r.hash + ".csv")).string();
  const std::string best = (dir / ("search_" + r.hash + ".json")).string();
  {
    auto out = open_output(log);
    write_search_log(out, r);
  }
  auto out = open_output(best);
  out << search_summary(r).dump(2) << '\n';
  return {log, best};
}

}  // namespace uqbench
