#pragma once

#include <cstdint>
#include <vector>

#include "fedpop/federation.hpp"
#include "fedpop/model.hpp"

namespace fedpop {

// Synthetic mixed-effects regression population: a shared representation
// with orthonormal columns, one latent vector per client, Gaussian inputs
// and observation noise. Client sizes follow a two-point distribution.
struct SyntheticSpec {
  int feature_dim = 20;        // k
  int latent_dim = 2;          // d
  int num_clients = 100;       // b
  double fraction_small = 0.9;
  int n_small = 5;
  int n_large = 10;
  double noise_var = 0.1;      // tau^2
};

struct SyntheticTruth {
  Matrix phi;                 // k x d, orthonormal columns
  std::vector<Vector> z;      // one per client, in client-id order
  double noise_var = 0.1;
};

struct SyntheticData {
  std::vector<ClientRecord> clients;  // ids 0..b-1
  SyntheticTruth truth;
};

SyntheticData generate_synthetic(const SyntheticSpec& spec,
                                 std::uint64_t data_seed);

// Two-class Gaussian-mixture classification population for the calibration
// and out-of-distribution demo. Class anchors are shared; each client gets
// its own offset per class, so the optimal decision boundary is personal.
// OOD inputs are the same mixture translated orthogonally to the line
// between the anchors.
struct MixtureSpec {
  int num_clients = 20;
  int n_train = 40;
  int n_eval = 10;            // per-client test size; OOD set matches it
  double anchor_sep = 3.2;    // distance between class anchors
  double client_spread = 0.4; // per-client offset of each class mean
  double within_sd = 1.0;     // point spread around the class mean
  double ood_shift = 6.0;     // translation applied to OOD inputs
};

struct MixtureData {
  std::vector<ClientRecord> clients;       // training splits, ids 0..b-1
  std::vector<ClientDataset> test;         // in-distribution eval, by id
  std::vector<ClientDataset> ood;          // shifted eval, by id
};

MixtureData generate_mixture(const MixtureSpec& spec, std::uint64_t data_seed);

// 80/20 split of one client's data, deterministic in the seed.
struct TrainTestSplit {
  ClientDataset train;
  ClientDataset test;
};
TrainTestSplit split_dataset(const ClientDataset& data, std::uint64_t seed,
                             double train_fraction = 0.8);

}  // namespace fedpop
