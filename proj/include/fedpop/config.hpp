#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "fedpop/compression.hpp"
#include "fedpop/federation.hpp"

namespace fedpop {

// Declarative description of one run. Parsed from a small sectioned
// key = value text format; every field has a default so configs only need
// to state what they change.
struct ExperimentConfig {
  int schema_version = 1;

  // [experiment]
  std::string algorithm = "fedsoul";  // fedsoul | fedavg | fedrep |
                                      // local_only | centralized
  std::uint64_t master_seed = 1;
  std::optional<std::uint64_t> data_seed;  // defaults to master_seed
  std::string output_dir = "runs/out";

  // [model]
  std::string model_kind = "linear_gaussian";  // or softmax
  int feature_dim = 20;
  int latent_dim = 2;   // d for linear_gaussian, rep dimension for softmax
  int num_classes = 2;  // softmax only
  double noise_var = 0.1;

  // [data] — two-point client-size population for the regression task
  int num_clients = 100;
  double fraction_small = 0.9;
  int n_small = 5;
  int n_large = 10;
  std::string dataset_file;  // optional pre-generated dataset to load
  // mixture task fields
  int n_train = 40;
  int n_eval = 10;
  double anchor_sep = 3.2;
  double client_spread = 0.4;
  double within_sd = 1.0;
  double ood_shift = 6.0;

  // [schedules]
  Schedules schedules;

  // [federation]
  std::string kernel = "ula";  // or exact_gaussian
  std::string compressor = "identity";  // or stochastic_quant
  int quant_levels = 4;
  std::string mode = "stateful";  // or stateless
  double participation_prob = 1.0;
  std::string weight_rule = "active_fraction";  // or inverse_prob
  double hyperprior_lambda = 0.0;
  std::string execution = "parallel";  // or serial
  int checkpoint_every = 0;            // rounds between checkpoints; 0 = off

  // [baseline]
  int local_steps = 5;
  double lr = 1e-2;

  // [init]
  double sigma0 = 1.0;
  std::optional<double> phi_scale;  // entrywise sd; default 1/sqrt(k)

  // [metrics]
  bool objective_gap = false;  // solve the centralized reference per run
  int uq_samples = 200;
  int uq_burn_in = 200;
  std::optional<double> uq_gamma;  // defaults to schedules.gamma0

  std::uint64_t effective_data_seed() const {
    return data_seed.value_or(master_seed);
  }
};

// Throws std::runtime_error naming the offending section/key on unknown
// keys, malformed values, or a schema version we do not understand.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string serialize_config(const ExperimentConfig& config);

// Range and consistency checks, with field-level messages.
void validate_config(const ExperimentConfig& config);

// String-to-enum helpers shared by the harness.
KernelKind parse_kernel(const std::string& name);
CompressorKind parse_compressor(const std::string& name);
ChainMode parse_mode(const std::string& name);
WeightRule parse_weight_rule(const std::string& name);
Execution parse_execution(const std::string& name);

}  // namespace fedpop
