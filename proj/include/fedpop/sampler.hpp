#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "fedpop/model.hpp"
#include "fedpop/rng.hpp"

namespace fedpop {

// Thrown when a Langevin chain produces a non-finite or runaway iterate;
// carries the offending iterate and enough context to report which client
// and round blew up.
class ChainDivergence : public std::runtime_error {
 public:
  ChainDivergence(int step, Vector bad_iterate)
      : std::runtime_error("langevin chain diverged"),
        step_at(step),
        iterate(std::move(bad_iterate)) {}

  int step_at;
  Vector iterate;
  int client_id = -1;
  int round = -1;
};

struct ChainState {
  Vector z;
  std::int64_t steps = 0;  // total kernel steps taken over the chain's life
};

enum class KernelKind { Ula, ExactGaussian };

struct KernelConfig {
  KernelKind kind = KernelKind::Ula;
  double gamma = 1e-2;  // Langevin step size
};

using Drift = std::function<Vector(const Vector&)>;

// One unadjusted Langevin step: z + gamma * drift(z) + sqrt(2 gamma) * xi.
Vector ula_step(const Vector& z, double gamma, const Drift& drift, Rng& rng);

struct ChainRun {
  std::vector<Vector> samples;  // the M post-step iterates, in order
  ChainState state;             // final state, for warm starting
};

// Runs M kernel steps from `start`. Throws ChainDivergence if an iterate
// goes non-finite or its norm exceeds `blowup`.
ChainRun run_ula(const ChainState& start, int steps, double gamma,
                 const Drift& drift, Rng& rng, double blowup = 1e8);

// Exact draws from the linear-Gaussian posterior N(post_mean, post_cov);
// reference kernel for separating sampler bias from estimator error.
std::vector<Vector> exact_gaussian_samples(const ClientDataset& data,
                                           const GlobalParams& theta,
                                           int count, Rng& rng);

// Stationary covariance of ULA applied to a Gaussian target with the given
// precision matrix: solves S = (I - gamma A) S (I - gamma A) + 2 gamma I,
// which in the eigenbasis of A gives 1 / (lambda (1 - gamma lambda / 2)).
// Requires gamma < 2 / lambda_max.
Matrix ula_stationary_cov(const Matrix& precision, double gamma);

}  // namespace fedpop
