#include "fedpop/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fedpop {

namespace {

std::vector<ClientRecord> sorted_by_id(std::vector<ClientRecord> clients) {
  std::sort(clients.begin(), clients.end(),
            [](const ClientRecord& a, const ClientRecord& b) {
              return a.id < b.id;
            });
  return clients;
}

void check_finite(const Matrix& phi, const Vector& z, double blowup,
                  const char* algo, int round, int client_id) {
  const bool bad = !phi.allFinite() || !z.allFinite() || phi.norm() > blowup ||
                   z.norm() > blowup;
  if (bad)
    throw std::runtime_error(std::string(algo) + " diverged at round " +
                             std::to_string(round) + ", client " +
                             std::to_string(client_id) +
                             "; reduce the learning rate");
}

// Exact personal-head fit for the linear-Gaussian model: minimum-norm least
// squares of (X phi) z = y. Returns nothing for other models.
std::optional<Vector> exact_head_fit(const Model& model,
                                     const ClientDataset& data,
                                     const Matrix& phi) {
  if (dynamic_cast<const LinearGaussianModel*>(&model) == nullptr)
    return std::nullopt;
  const Matrix g = data.features * phi;
  Eigen::JacobiSVD<Matrix> svd(g, Eigen::ComputeThinU | Eigen::ComputeThinV);
  return svd.solve(data.targets);
}

std::size_t position_of(const std::vector<ClientRecord>& clients, int id) {
  const auto it = std::lower_bound(
      clients.begin(), clients.end(), id,
      [](const ClientRecord& c, int want) { return c.id < want; });
  return static_cast<std::size_t>(it - clients.begin());
}

}  // namespace

FedAvgResult run_fedavg(const Model& model,
                        const std::vector<ClientRecord>& clients_in,
                        Matrix phi0, Vector z0, const BaselineOptions& options,
                        const FedAvgObserver& observer) {
  const std::vector<ClientRecord> clients = sorted_by_id(clients_in);
  Matrix phi = std::move(phi0);
  Vector z = std::move(z0);

  for (int round = 1; round <= options.rounds; ++round) {
    const std::vector<int> active =
        sample_participants(clients, round, options.master_seed);
    const int count = static_cast<int>(active.size());
    std::vector<Matrix> local_phi(active.size());
    std::vector<Vector> local_z(active.size());
    std::vector<double> sizes(active.size());
    std::optional<std::string> error;

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) \
    if (options.execution == Execution::Parallel)
#endif
    for (int j = 0; j < count; ++j) {
      const std::size_t jj = static_cast<std::size_t>(j);
      const ClientRecord& client =
          clients[position_of(clients, active[jj])];
      Matrix p = phi;
      Vector v = z;
      const double n = static_cast<double>(client.data.n());
      try {
        for (int t = 0; t < options.local_steps; ++t) {
          const LoglikGrad g = model.loglik_grad(client.data, p, v);
          p += options.lr * g.phi / n;
          v += options.lr * g.z / n;
          check_finite(p, v, options.blowup, "fedavg", round, client.id);
        }
      } catch (const std::exception& e) {
#ifdef _OPENMP
#pragma omp critical
#endif
        if (!error) error = e.what();
      }
      local_phi[jj] = std::move(p);
      local_z[jj] = std::move(v);
      sizes[jj] = n;
    }
    if (error) throw std::runtime_error(*error);

    if (!active.empty()) {
      const double total = std::accumulate(sizes.begin(), sizes.end(), 0.0);
      Matrix phi_sum = Matrix::Zero(phi.rows(), phi.cols());
      Vector z_sum = Vector::Zero(z.size());
      for (std::size_t j = 0; j < active.size(); ++j) {
        phi_sum += sizes[j] * local_phi[j];
        z_sum += sizes[j] * local_z[j];
      }
      phi = phi_sum / total;
      z = z_sum / total;
    }
    if (observer)
      observer(round, active, phi, z,
               32 * static_cast<std::int64_t>(phi.size() + z.size()) *
                   static_cast<std::int64_t>(active.size()));
  }
  return {std::move(phi), std::move(z)};
}

Vector fedrep_head_fit(const Model& model, const ClientDataset& data,
                       const Matrix& phi, const Vector& head0,
                       const BaselineOptions& options) {
  if (auto exact = exact_head_fit(model, data, phi)) return *exact;
  Vector head = head0;
  const double n = static_cast<double>(data.n());
  for (int t = 0; t < options.local_steps; ++t) {
    head += options.lr * model.loglik_grad(data, phi, head).z / n;
    check_finite(phi, head, options.blowup, "fedrep_head_fit", 0, -1);
  }
  return head;
}

FedRepResult run_fedrep(const Model& model,
                        const std::vector<ClientRecord>& clients_in,
                        Matrix phi0, const BaselineOptions& options,
                        const FedRepObserver& observer) {
  const std::vector<ClientRecord> clients = sorted_by_id(clients_in);
  Matrix phi = std::move(phi0);
  std::vector<Vector> heads(clients.size(),
                            Vector::Zero(model.latent_dim()));

  for (int round = 1; round <= options.rounds; ++round) {
    const std::vector<int> active =
        sample_participants(clients, round, options.master_seed);
    const int count = static_cast<int>(active.size());
    std::vector<Matrix> local_phi(active.size());
    std::vector<Vector> local_head(active.size());
    std::vector<std::size_t> positions(active.size());
    std::vector<double> sizes(active.size());
    std::optional<std::string> error;

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) \
    if (options.execution == Execution::Parallel)
#endif
    for (int j = 0; j < count; ++j) {
      const std::size_t jj = static_cast<std::size_t>(j);
      const std::size_t pos = position_of(clients, active[jj]);
      const ClientRecord& client = clients[pos];
      const double n = static_cast<double>(client.data.n());
      Vector head = heads[pos];
      Matrix p = phi;
      try {
        if (auto exact = exact_head_fit(model, client.data, phi)) {
          head = std::move(*exact);
        } else {
          for (int t = 0; t < options.local_steps; ++t) {
            head += options.lr *
                    model.loglik_grad(client.data, phi, head).z / n;
            check_finite(phi, head, options.blowup, "fedrep", round,
                         client.id);
          }
        }
        for (int t = 0; t < options.local_steps; ++t) {
          p += options.lr * model.loglik_grad(client.data, p, head).phi / n;
          check_finite(p, head, options.blowup, "fedrep", round, client.id);
        }
      } catch (const std::exception& e) {
#ifdef _OPENMP
#pragma omp critical
#endif
        if (!error) error = e.what();
      }
      positions[jj] = pos;
      local_phi[jj] = std::move(p);
      local_head[jj] = std::move(head);
      sizes[jj] = n;
    }
    if (error) throw std::runtime_error(*error);

    for (std::size_t j = 0; j < active.size(); ++j)
      heads[positions[j]] = local_head[j];
    if (!active.empty()) {
      const double total = std::accumulate(sizes.begin(), sizes.end(), 0.0);
      Matrix phi_sum = Matrix::Zero(phi.rows(), phi.cols());
      for (std::size_t j = 0; j < active.size(); ++j)
        phi_sum += sizes[j] * local_phi[j];
      phi = phi_sum / total;
    }
    if (observer)
      observer(round, active, phi, heads,
               32 * static_cast<std::int64_t>(phi.size()) *
                   static_cast<std::int64_t>(active.size()));
  }
  return {std::move(phi), std::move(heads)};
}

LocalOnlyResult run_local_only(const Model& model,
                               const std::vector<ClientRecord>& clients_in,
                               const Matrix& phi0,
                               const BaselineOptions& options,
                               const LocalOnlyObserver& observer) {
  const std::vector<ClientRecord> clients = sorted_by_id(clients_in);
  LocalOnlyResult out;
  out.phi_by_client.assign(clients.size(), phi0);
  out.z_by_client.assign(clients.size(), Vector::Zero(model.latent_dim()));

  const int count = static_cast<int>(clients.size());
  for (int round = 1; round <= options.rounds; ++round) {
    std::optional<std::string> error;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) \
    if (options.execution == Execution::Parallel)
#endif
    for (int j = 0; j < count; ++j) {
      const std::size_t jj = static_cast<std::size_t>(j);
      const ClientRecord& client = clients[jj];
      const double n = static_cast<double>(client.data.n());
      try {
        for (int t = 0; t < options.local_steps; ++t) {
          const LoglikGrad g = model.loglik_grad(
              client.data, out.phi_by_client[jj], out.z_by_client[jj]);
          out.phi_by_client[jj] += options.lr * g.phi / n;
          out.z_by_client[jj] += options.lr * g.z / n;
          check_finite(out.phi_by_client[jj], out.z_by_client[jj],
                       options.blowup, "local_only", round, client.id);
        }
      } catch (const std::exception& e) {
#ifdef _OPENMP
#pragma omp critical
#endif
        if (!error) error = e.what();
      }
    }
    if (error) throw std::runtime_error(*error);
    if (observer) observer(round, out.phi_by_client, out.z_by_client);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Centralized reference

double marginal_objective(const std::vector<ClientRecord>& clients,
                          const GlobalParams& theta,
                          double hyperprior_lambda) {
  double f = 0.0;
  for (const ClientRecord& c : clients)
    f += marginal_oracle(c.data, theta).logml;
  if (hyperprior_lambda > 0.0)
    f -= 0.5 * hyperprior_lambda *
         (theta.phi.squaredNorm() + theta.mu.squaredNorm() +
          theta.sigma * theta.sigma);
  return f;
}

namespace {

struct Packed {
  Eigen::Index phi_rows = 0;
  Eigen::Index phi_cols = 0;
  Eigen::Index dim() const { return phi_rows * phi_cols + phi_cols + 1; }

  Vector pack(const GlobalParams& theta) const {
    Vector x(dim());
    x.head(phi_rows * phi_cols) = flatten_rowmajor(theta.phi);
    x.segment(phi_rows * phi_cols, phi_cols) = theta.mu;
    x[dim() - 1] = theta.sigma;
    return x;
  }

  GlobalParams unpack(const Vector& x) const {
    GlobalParams theta;
    theta.phi =
        unflatten_rowmajor(x.head(phi_rows * phi_cols), phi_rows, phi_cols);
    theta.mu = x.segment(phi_rows * phi_cols, phi_cols);
    theta.sigma = x[dim() - 1];
    return theta;
  }
};

}  // namespace

CentralizedResult centralized_map(const std::vector<ClientRecord>& clients,
                                  GlobalParams theta0,
                                  const CentralizedOptions& options) {
  if (clients.empty())
    throw std::invalid_argument("centralized_map: no clients");
  if (theta0.phi.cols() != theta0.mu.size())
    throw std::invalid_argument("centralized_map: phi/mu shape mismatch");

  Packed packed{theta0.phi.rows(), theta0.phi.cols()};

  const auto project = [&](Vector x) {
    GlobalParams t = packed.unpack(std::move(x));
    if (t.phi.norm() > options.r_theta)
      t.phi *= options.r_theta / t.phi.norm();
    if (t.mu.norm() > options.r_theta) t.mu *= options.r_theta / t.mu.norm();
    t.sigma = std::clamp(t.sigma, options.sigma_min, options.sigma_max);
    return packed.pack(t);
  };

  const auto eval = [&](const Vector& x, Vector* grad) {
    const GlobalParams theta = packed.unpack(x);
    double f = 0.0;
    Matrix gphi = Matrix::Zero(packed.phi_rows, packed.phi_cols);
    Vector gmu = Vector::Zero(packed.phi_cols);
    double gsigma = 0.0;
    for (const ClientRecord& c : clients) {
      const MarginalResult m = marginal_oracle(c.data, theta);
      f += m.logml;
      gphi += m.grad_phi;
      gmu += m.grad_mu;
      gsigma += m.grad_sigma;
    }
    if (options.hyperprior_lambda > 0.0) {
      f -= 0.5 * options.hyperprior_lambda *
           (theta.phi.squaredNorm() + theta.mu.squaredNorm() +
            theta.sigma * theta.sigma);
      gphi -= options.hyperprior_lambda * theta.phi;
      gmu -= options.hyperprior_lambda * theta.mu;
      gsigma -= options.hyperprior_lambda * theta.sigma;
    }
    if (!options.optimize_phi) gphi.setZero();
    if (!options.optimize_mu) gmu.setZero();
    if (!options.optimize_sigma) gsigma = 0.0;
    if (grad) {
      grad->resize(packed.dim());
      grad->head(packed.phi_rows * packed.phi_cols) = flatten_rowmajor(gphi);
      grad->segment(packed.phi_rows * packed.phi_cols, packed.phi_cols) = gmu;
      (*grad)[packed.dim() - 1] = gsigma;
    }
    return f;
  };

  Vector x = project(packed.pack(theta0));
  Vector grad;
  double f = eval(x, &grad);

  CentralizedResult result;
  double step = 1.0 / std::max(1.0, grad.norm());
  for (std::int64_t iter = 0; iter < options.max_iters; ++iter) {
    if (grad.norm() <= options.tol) {
      result.converged = true;
      break;
    }
    // Armijo backtracking along the projected ascent direction.
    double t = step;
    Vector x_next;
    Vector grad_next;
    double f_next = 0.0;
    bool accepted = false;
    bool have_grad = false;
    for (int back = 0; back < 60 && !accepted; ++back) {
      x_next = project(x + t * grad);
      f_next = eval(x_next, nullptr);
      const double progress = grad.dot(x_next - x);
      // a step that rounds to no movement must not count as accepted, or the
      // f >= f comparison would swallow it and stall the whole iteration
      if (f_next >= f + 1e-4 * progress && f_next > -1e300 &&
          (x_next - x).squaredNorm() > 0.0)
        accepted = true;
      else
        t *= 0.5;
    }
    if (!accepted) {
      // near the optimum the objective differences drown in rounding; shrink
      // the gradient norm instead, which keeps its resolution much longer
      t = step;
      for (int back = 0; back < 60 && !accepted; ++back) {
        x_next = project(x + t * grad);
        f_next = eval(x_next, &grad_next);
        if (grad_next.norm() <= grad.norm() * (1.0 - 1e-3)) {
          accepted = true;
          have_grad = true;
        } else {
          t *= 0.5;
        }
      }
    }
    if (!accepted) break;  // no ascent possible at machine precision

    if (!have_grad) f_next = eval(x_next, &grad_next);
    const double f_new = f_next;
    const Vector dx = x_next - x;
    const Vector dg = grad_next - grad;
    const double dxdg = std::abs(dx.dot(dg));
    // Barzilai-Borwein step for the next iteration, safeguarded.
    step = (dxdg > 1e-300) ? dx.squaredNorm() / dxdg : t * 2.0;
    if (!std::isfinite(step) || step <= 0.0) step = t;
    step = std::clamp(step, 1e-12, 1e6);

    x = std::move(x_next);
    f = f_new;
    grad = std::move(grad_next);
    result.iterations = iter + 1;
  }

  result.theta = packed.unpack(x);
  result.objective = f;
  result.grad_norm = grad.norm();
  if (grad.norm() <= options.tol) result.converged = true;
  return result;
}

}  // namespace fedpop
