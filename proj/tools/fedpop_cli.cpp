#include <exception>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedpop/config.hpp"
#include "fedpop/experiment.hpp"

namespace {

fedpop::ExperimentConfig load_with_overrides(const std::string& config_path,
                                             const std::string& output_dir,
                                             long long seed) {
  fedpop::ExperimentConfig config = fedpop::load_config(config_path);
  if (!output_dir.empty()) config.output_dir = output_dir;
  if (seed >= 0) config.master_seed = static_cast<std::uint64_t>(seed);
  fedpop::validate_config(config);
  return config;
}

void print_summary(const fedpop::RunOutcome& outcome) {
  std::cout << "run complete: " << outcome.algorithm << " -> "
            << outcome.output_dir << "\n";
  for (const auto& [key, value] : outcome.summary)
    std::cout << "  " << key << " = " << value << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated posterior-sampling simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::string output_dir;
  std::string out_path;
  std::string run_dir;
  std::vector<std::string> run_dirs;
  long long seed = -1;
  bool resume = false;

  CLI::App* generate =
      app.add_subcommand("generate", "Write the configured dataset to a file");
  generate->add_option("--config", config_path, "experiment config file")
      ->required();
  generate->add_option("--out", out_path,
                       "dataset path (default: [data] dataset_file)");
  generate->add_option("--seed", seed, "override master_seed");

  CLI::App* run = app.add_subcommand("run", "Execute one configured run");
  run->add_option("--config", config_path, "experiment config file")
      ->required();
  run->add_option("--output-dir", output_dir, "override [experiment] output_dir");
  run->add_option("--seed", seed, "override master_seed");
  run->add_flag("--resume", resume, "continue from the run's checkpoint");

  CLI::App* evaluate = app.add_subcommand(
      "evaluate", "Recompute final metrics for a finished run directory");
  evaluate->add_option("--run-dir", run_dir, "finished run directory")
      ->required();

  CLI::App* compare = app.add_subcommand(
      "compare", "Tabulate summaries from several run directories");
  compare->add_option("--runs", run_dirs, "run directories")
      ->required()
      ->expected(-1);
  compare->add_option("--out", out_path, "also write the table to this file");

  CLI::App* uq = app.add_subcommand(
      "uq", "Train on the mixture task and emit calibration artifacts");
  uq->add_option("--config", config_path, "experiment config file")
      ->required();
  uq->add_option("--output-dir", output_dir, "override [experiment] output_dir");
  uq->add_option("--seed", seed, "override master_seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) {
      const auto config = load_with_overrides(config_path, output_dir, seed);
      const std::string path = fedpop::generate_dataset(config, out_path);
      std::cout << "dataset written to " << path << "\n";
    } else if (run->parsed()) {
      const auto config = load_with_overrides(config_path, output_dir, seed);
      print_summary(fedpop::run_experiment(config, resume));
    } else if (evaluate->parsed()) {
      const auto metrics = fedpop::evaluate_run(run_dir);
      std::cout << "evaluation of " << run_dir << "\n";
      for (const auto& [key, value] : metrics)
        std::cout << "  " << key << " = " << value << "\n";
    } else if (compare->parsed()) {
      fedpop::compare_runs(run_dirs, std::cout);
      if (!out_path.empty()) {
        std::ofstream out(out_path, std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + out_path);
        fedpop::compare_runs(run_dirs, out);
      }
    } else if (uq->parsed()) {
      const auto config = load_with_overrides(config_path, output_dir, seed);
      print_summary(fedpop::run_uq_study(config));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
