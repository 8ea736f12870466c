#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedpop/compression.hpp"
#include "fedpop/model.hpp"
#include "fedpop/sampler.hpp"

namespace fedpop {

struct ClientRecord {
  int id = 0;
  ClientDataset data;
  double participation_prob = 1.0;
  std::optional<ChainState> chain;  // present iff running stateful
};

enum class ChainMode { Stateful, Stateless };
enum class WeightRule { ActiveFraction, InverseProb };
enum class Execution { Serial, Parallel };

// Step-size and projection schedules. Round indices are 1-based here, so
// eta(1) is the step used by the first round.
struct Schedules {
  int rounds = 100;       // K
  int chain_steps = 5;    // M, kernel steps per client per round
  double eta0 = 1e-2;
  double eta_decay = 0.6;   // eta_k = eta0 / k^eta_decay; 0 keeps it constant
  double gamma0 = 1e-2;
  double gamma_decay = 0.0;
  double r_theta = 1e3;            // radius of the phi and mu projection balls
  double sigma_min = 1e-3;
  double sigma_max = 1e3;
  double avg_start_fraction = 0.5;  // averaged estimate uses rounds after this

  double eta(int round) const;
  double gamma(int round) const;
  int avg_start_round() const;  // first round included in the average
};

// Per-client upload for one round: the beta-gradient estimate I (mu block
// then sigma, length d+1) and the compressed phi-gradient estimate C(J)
// flattened row-major.
struct ClientUpload {
  int id = 0;
  Vector beta_grad;
  Vector phi_grad;
};

struct FedOptions {
  Schedules schedules;
  KernelKind kernel = KernelKind::Ula;
  CompressorSpec compressor;
  ChainMode mode = ChainMode::Stateful;
  WeightRule weight_rule = WeightRule::ActiveFraction;
  Execution execution = Execution::Parallel;
  double hyperprior_lambda = 0.0;  // isotropic Gaussian on theta; 0 means flat
  std::uint64_t master_seed = 0;
};

struct RoundTrace {
  int round = 0;  // 1-based
  std::vector<int> participants;
  GlobalParams theta;      // iterate after this round's update
  GlobalParams theta_avg;  // step-size-weighted tail average
  std::int64_t upload_bits = 0;
  std::map<std::string, double> metrics;  // filled by the caller's observer
};

// Bernoulli participation, one independent draw per client, deterministic in
// (seed, round). All algorithms sharing a master seed see the same draws.
std::vector<int> sample_participants(const std::vector<ClientRecord>& clients,
                                     int round, std::uint64_t master_seed);

struct ClientRoundResult {
  Vector beta_grad;   // I, length d+1
  Matrix phi_grad;    // J, k x d_rep, before compression
  ChainState chain;   // state after the M steps
};

// One client's local work for one round: run M kernel steps targeting
// p(z | data, theta) from the warm-started chain (stateful) or a fresh
// N(mu, sigma^2 I) draw (stateless), then average the gradient estimates
// over the M iterates.
ClientRoundResult client_round(const Model& model, const ClientRecord& client,
                               const GlobalParams& theta,
                               const KernelConfig& kernel, int chain_steps,
                               ChainMode mode, Rng& rng);

// Server-side ascent step with projection. `upload_probs` supplies the
// participation probability of each upload (same order) for the InverseProb
// weighting; it may be empty under ActiveFraction.
GlobalParams server_update(const GlobalParams& theta,
                           const std::vector<ClientUpload>& uploads,
                           double eta, int num_clients,
                           const Schedules& schedules, WeightRule rule,
                           const std::vector<double>& upload_probs,
                           double hyperprior_lambda);

class FedSoulEngine {
 public:
  FedSoulEngine(const Model& model, std::vector<ClientRecord> clients,
                GlobalParams theta0, FedOptions options);

  // Runs one round; returns its trace. Chain divergence aborts the round by
  // rethrowing with client/round attached.
  RoundTrace step();

  // Runs rounds until schedules.rounds is reached.
  std::vector<RoundTrace> run();

  const GlobalParams& theta() const { return theta_; }
  GlobalParams theta_avg() const;
  int rounds_done() const { return round_; }
  const std::vector<ClientRecord>& clients() const { return clients_; }
  const FedOptions& options() const { return options_; }
  const Model& model() const { return model_; }

  // Snapshot of everything step() depends on, for exact resumption.
  struct Snapshot {
    int round = 0;
    GlobalParams theta;
    GlobalParams avg_sum;     // eta-weighted sums (phi, mu, sigma)
    double avg_weight = 0.0;
    std::vector<ChainState> chains;  // empty in stateless mode
  };
  Snapshot snapshot() const;
  void restore(const Snapshot& snap);

 private:
  const Model& model_;
  std::vector<ClientRecord> clients_;
  GlobalParams theta_;
  FedOptions options_;
  int round_ = 0;  // rounds completed
  GlobalParams avg_sum_;
  double avg_weight_ = 0.0;
};

// Posterior-predictive for a client with no data: draw z_l ~ N(mu, sigma^2 I)
// and mixture-average the per-draw predictions.
Prediction predict_new_client(const Model& model, const GlobalParams& theta,
                              const Vector& x, int num_draws, Rng& rng);

// Posterior samples of z for one client at fixed theta, for uncertainty
// summaries: a fresh chain from N(mu, sigma^2 I), burn-in discarded.
std::vector<Vector> local_uq(const Model& model, const ClientDataset& data,
                             const GlobalParams& theta, int num_samples,
                             int burn_in, double gamma, Rng& rng);

}  // namespace fedpop
