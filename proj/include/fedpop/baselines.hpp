#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "fedpop/federation.hpp"
#include "fedpop/model.hpp"

namespace fedpop {

// Shared knobs for the non-Bayesian baselines. `local_steps` counts
// full-batch gradient steps per selected client per round, which is the
// budget unit used to compare against the M kernel steps of the federated
// sampler.
struct BaselineOptions {
  int rounds = 100;
  int local_steps = 5;
  double lr = 1e-2;
  std::uint64_t master_seed = 0;
  Execution execution = Execution::Parallel;
  double blowup = 1e8;  // abort when any parameter norm passes this
};

using FedAvgObserver = std::function<void(
    int round, const std::vector<int>& participants, const Matrix& phi,
    const Vector& z_shared, std::int64_t upload_bits)>;

struct FedAvgResult {
  Matrix phi;
  Vector z_shared;
};

// Classic federated averaging over a fully shared model (phi, z): selected
// clients take local gradient steps on their mean log-likelihood, the server
// averages the results weighted by client dataset size.
FedAvgResult run_fedavg(const Model& model,
                        const std::vector<ClientRecord>& clients, Matrix phi0,
                        Vector z0, const BaselineOptions& options,
                        const FedAvgObserver& observer = nullptr);

using FedRepObserver = std::function<void(
    int round, const std::vector<int>& participants, const Matrix& phi,
    const std::vector<Vector>& z_by_client, std::int64_t upload_bits)>;

struct FedRepResult {
  Matrix phi;
  std::vector<Vector> z_by_client;  // client-id order
};

// Shared representation with personal heads: selected clients first fit
// their own z to convergence (exact least squares for the linear-Gaussian
// model, gradient steps otherwise), then take gradient steps on phi; the
// server averages only phi, weighted by dataset size.
FedRepResult run_fedrep(const Model& model,
                        const std::vector<ClientRecord>& clients, Matrix phi0,
                        const BaselineOptions& options,
                        const FedRepObserver& observer = nullptr);

// The head fit used inside run_fedrep, exposed so evaluations can refit
// every client's head at a final representation: exact minimum-norm least
// squares for the linear-Gaussian model, gradient ascent otherwise.
Vector fedrep_head_fit(const Model& model, const ClientDataset& data,
                       const Matrix& phi, const Vector& head0,
                       const BaselineOptions& options);

using LocalOnlyObserver = std::function<void(
    int round, const std::vector<Matrix>& phi_by_client,
    const std::vector<Vector>& z_by_client)>;

struct LocalOnlyResult {
  std::vector<Matrix> phi_by_client;
  std::vector<Vector> z_by_client;
};

// No communication at all: every client fits (phi_i, z_i) on its own data.
LocalOnlyResult run_local_only(const Model& model,
                               const std::vector<ClientRecord>& clients,
                               const Matrix& phi0,
                               const BaselineOptions& options,
                               const LocalOnlyObserver& observer = nullptr);

// Reference optimum: maximises the exact marginal objective
//   sum_i log p(D_i | phi, mu, sigma) + log hyperprior(theta)
// by projected gradient ascent (Barzilai-Borwein steps with Armijo
// backtracking). Linear-Gaussian only; this is what the federated
// stochastic-approximation runs are measured against.
struct CentralizedOptions {
  double tol = 1e-8;  // stop when the gradient norm falls below this
  std::int64_t max_iters = 100000;
  double r_theta = 1e3;
  double sigma_min = 1e-3;
  double sigma_max = 1e3;
  double hyperprior_lambda = 0.0;
  // Freezing blocks turns the solver into a profile optimiser over the rest.
  bool optimize_phi = true;
  bool optimize_mu = true;
  bool optimize_sigma = true;
};

struct CentralizedResult {
  GlobalParams theta;
  double objective = 0.0;
  double grad_norm = 0.0;
  std::int64_t iterations = 0;
  bool converged = false;
};

double marginal_objective(const std::vector<ClientRecord>& clients,
                          const GlobalParams& theta, double hyperprior_lambda);

CentralizedResult centralized_map(const std::vector<ClientRecord>& clients,
                                  GlobalParams theta0,
                                  const CentralizedOptions& options);

}  // namespace fedpop
