#include "tsjepa/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised time-series representation learning: pretraining, probes, forecasting"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::string out_dir;
  auto* run = app.add_subcommand("run", "Run the experiment described by an INI config");
  run->add_option("config", config_path, "Config file")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "Override [experiment] seed");
  run->add_flag("--deterministic", deterministic, "Single-threaded, bit-reproducible execution");
  run->add_option("--out", out_dir, "Override [experiment] output directory");

  std::string report_dir;
  auto* rep = app.add_subcommand("report", "Render result tables for every run below a directory");
  rep->add_option("dir", report_dir, "Results directory")->required();

  std::string gc_out;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every backward pass");
  gc->add_option("--out", gc_out, "Also write results.csv to this directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      tsjepa::ExperimentConfig cfg = tsjepa::parse_config(config_path);
      if (seed) tsjepa::apply_seed(cfg, *seed);
      if (deterministic) cfg.deterministic = true;
      if (!out_dir.empty()) cfg.output = std::filesystem::absolute(out_dir);
      const tsjepa::RunResult r = tsjepa::run_experiment(cfg);
      std::cout << r.summary() << "\n";
      return r.passed ? 0 : 1;
    }
    if (*rep) {
      std::cout << tsjepa::report(report_dir);
      return 0;
    }
    if (*gc) {
      tsjepa::ExperimentConfig cfg;
      cfg.task = tsjepa::Task::gradcheck;
      cfg.output = gc_out.empty() ? std::filesystem::temp_directory_path() / "tsjepa-gradcheck" : std::filesystem::path(gc_out);
      const tsjepa::RunResult r = tsjepa::run_experiment(cfg);
      std::cout << tsjepa::report(cfg.output) << "\n" << r.summary() << "\n";
      return r.passed ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
