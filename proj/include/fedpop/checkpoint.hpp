#pragma once

#include <string>

#include "fedpop/config.hpp"
#include "fedpop/federation.hpp"
#include "fedpop/synthetic.hpp"

namespace fedpop {

// Everything needed to continue a run exactly where it stopped: the round
// counter, the iterate, the running average and the persisted chains. The
// random streams are keyed by (seed, purpose, client, round), so no
// generator state needs to be stored.
void save_checkpoint(const std::string& path, const ExperimentConfig& config,
                     const FedSoulEngine::Snapshot& snapshot);

struct LoadedCheckpoint {
  std::string config_text;  // serialized config the run was started with
  FedSoulEngine::Snapshot snapshot;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// Dataset files written by the generate subcommand and read back by run.
void save_synthetic(const std::string& path, const SyntheticData& data);
SyntheticData load_synthetic(const std::string& path);

void save_mixture(const std::string& path, const MixtureData& data);
MixtureData load_mixture(const std::string& path);

// Final-parameter sidecars for evaluate/compare.
void save_params(const std::string& path, const GlobalParams& theta,
                 const GlobalParams& theta_avg);
struct LoadedParams {
  GlobalParams theta;
  GlobalParams theta_avg;
};
LoadedParams load_params(const std::string& path);

// Per-client parameters, for runs without a single global estimate.
void save_client_params(const std::string& path,
                        const std::vector<Matrix>& phi,
                        const std::vector<Vector>& z);
struct LoadedClientParams {
  std::vector<Matrix> phi;
  std::vector<Vector> z;
};
LoadedClientParams load_client_params(const std::string& path);

}  // namespace fedpop
