#pragma once

#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fedpop/config.hpp"
#include "fedpop/metrics.hpp"
#include "fedpop/synthetic.hpp"

namespace fedpop {

// Realised task: the model plus the client population and, when available,
// the generating ground truth and held-out evaluation sets.
struct Problem {
  std::unique_ptr<Model> model;
  std::vector<ClientRecord> clients;            // sorted by id
  std::optional<SyntheticTruth> truth;          // regression task
  std::vector<ClientDataset> test;              // mixture task, by position
  std::vector<ClientDataset> ood;               // mixture task, by position
};

Problem build_problem(const ExperimentConfig& config);
GlobalParams initial_theta(const ExperimentConfig& config, const Model& model);

struct RunOutcome {
  std::string output_dir;
  std::string algorithm;
  std::map<std::string, double> summary;
};

// Executes one configured run end to end: trains, streams per-round rows to
// <output_dir>/metrics.csv, writes final parameters and summary.json.
// With resume=true, continues from <output_dir>/checkpoint.json.
RunOutcome run_experiment(const ExperimentConfig& config, bool resume = false);

// Writes the requested dataset file for the configured task and returns its
// path.
std::string generate_dataset(const ExperimentConfig& config,
                             const std::string& out_path);

// Recomputes final metrics for a finished run directory from its stored
// config and parameters; writes evaluation.json there.
std::map<std::string, double> evaluate_run(const std::string& run_dir);

// Side-by-side table of the summaries found in the given run directories,
// CSV to `out`. Returns the number of runs found.
int compare_runs(const std::vector<std::string>& run_dirs, std::ostream& out);

// Posterior-predictive uncertainty summaries on the mixture task.
struct UncertaintyEval {
  double accuracy = 0.0;
  double ece_pooled = 0.0;
  double entropy_in = 0.0;
  double entropy_ood = 0.0;
  double separation = 0.0;  // entropy_ood - entropy_in
  CalibrationResult pooled_curve;
  std::vector<int> client_ids;
  std::vector<CalibrationResult> client_curves;
};

UncertaintyEval evaluate_uncertainty(const Problem& problem,
                                     const GlobalParams& theta,
                                     const ExperimentConfig& config);

// Trains on the mixture task, then writes per-client reliability curves and
// uq_summary.json into the run directory.
RunOutcome run_uq_study(const ExperimentConfig& config);

}  // namespace fedpop
