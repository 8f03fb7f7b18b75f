// uqbench command line: run / gen / search.

#include "uqbench/harness.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

using namespace uqbench;

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

int cmd_run(const std::string& config_path, const std::string& out_dir, std::optional<std::uint64_t> seed,
            const std::string& methods) {
  ExperimentConfig cfg;
  try {
    cfg = load_experiment(config_path);
    if (seed) cfg.seed = *seed;
    if (!methods.empty()) {
      cfg.methods.clear();
      for (const auto& name : split_list(methods)) {
        const MethodKind m = method_from_string(name);
        if (std::find(cfg.methods.begin(), cfg.methods.end(), m) != cfg.methods.end()) {
          throw ConfigError("method '" + name + "' listed twice");
        }
        cfg.methods.push_back(m);
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  }

  const ExperimentResult res = run_experiment(cfg);
  const OutputFiles files = write_outputs(res, out_dir.empty() ? cfg.output_dir : out_dir);
  std::cout << report_csv_header() << '\n';
  for (const auto& r : res.reports()) std::cout << report_csv_row(r) << '\n';
  for (const auto& o : res.outcomes) {
    if (o.error) std::cerr << to_string(o.method) << " failed: " << *o.error << '\n';
  }
  std::cerr << "wrote " << files.report << ", " << files.intervals.size() << " interval tables, " << files.metadata
            << '\n';
  return res.exit_code();
}

int cmd_gen(const std::string& dataset, const std::string& out, std::uint64_t seed) {
  RngStream rng(seed);
  Dataset d;
  if (dataset == "analytical-gp") {
    d = sample_realizations(AnalyticalGpSpec{}, rng);
  } else if (dataset == "flux-surrogate") {
    d = sample_flux_surrogate(FluxSurrogateSpec{}, rng);
  } else {
    std::cerr << "config error: unknown dataset '" << dataset << "'\n";
    return 1;
  }
  write_dataset_csv(out, d);
  std::cerr << "wrote " << d.size() << " rows to " << out << '\n';
  return 0;
}

int cmd_search(const std::string& config_path, std::size_t budget, const std::string& out_dir) {
  ExperimentConfig cfg;
  try {
    cfg = load_experiment(config_path);
    if (!cfg.search) throw ConfigError("config has no [search] table");
    if (cfg.search->space.empty()) throw ConfigError("search space is empty");
    if (budget < 1) throw ConfigError("budget must be >= 1");
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  }
  const SearchResult res = random_search(cfg, budget);
  const auto files = write_search_outputs(res, out_dir.empty() ? cfg.output_dir : out_dir);
  std::cout << search_summary(res).dump(2) << '\n';
  std::cerr << "wrote " << files[0] << " and " << files[1] << '\n';
  const bool failed = std::any_of(res.trials.begin(), res.trials.end(), [](const auto& t) { return t.error; });
  return failed ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Uncertainty quantification benchmark for regression"};
  app.require_subcommand(1);
  app.set_version_flag("--version", UQBENCH_VERSION);

  std::string config_path, out_dir, methods;
  std::optional<std::uint64_t> seed;
  auto* run = app.add_subcommand("run", "fit, calibrate and score the configured methods");
  run->add_option("--config", config_path, "experiment config (TOML)")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "output directory (overrides output_dir)");
  run->add_option("--seed", seed, "override the config seed");
  run->add_option("--methods", methods, "comma-separated subset, e.g. gp,split_cp");

  std::string dataset, gen_out;
  std::uint64_t gen_seed = 0;
  auto* gen = app.add_subcommand("gen", "write a synthetic dataset as CSV");
  gen->add_option("--dataset", dataset, "analytical-gp or flux-surrogate")->required();
  gen->add_option("--out", gen_out, "output CSV path")->required();
  gen->add_option("--seed", gen_seed, "sampling seed");

  std::size_t budget = 0;
  std::string search_out;
  auto* search = app.add_subcommand("search", "seeded random hyperparameter search");
  search->add_option("--config", config_path, "experiment config with a [search] table")
      ->required()
      ->check(CLI::ExistingFile);
  search->add_option("--budget", budget, "number of trials per method")->required();
  search->add_option("--out", search_out, "output directory (overrides output_dir)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*run) return cmd_run(config_path, out_dir, seed, methods);
    if (*gen) return cmd_gen(dataset, gen_out, gen_seed);
    if (*search) return cmd_search(config_path, budget, search_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
