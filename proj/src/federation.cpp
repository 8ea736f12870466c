#include "fedpop/federation.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fedpop {

namespace {

Matrix project_ball(const Matrix& m, double radius) {
  const double norm = m.norm();
  if (norm <= radius) return m;
  return m * (radius / norm);
}

Vector project_ball(const Vector& v, double radius) {
  const double norm = v.norm();
  if (norm <= radius) return v;
  return v * (radius / norm);
}

GlobalParams project(GlobalParams theta, const Schedules& s) {
  theta.phi = project_ball(theta.phi, s.r_theta);
  theta.mu = project_ball(theta.mu, s.r_theta);
  theta.sigma = std::clamp(theta.sigma, s.sigma_min, s.sigma_max);
  return theta;
}

}  // namespace

double Schedules::eta(int round) const {
  if (round < 1) throw std::invalid_argument("Schedules::eta: round is 1-based");
  if (eta_decay == 0.0) return eta0;
  return eta0 / std::pow(static_cast<double>(round), eta_decay);
}

double Schedules::gamma(int round) const {
  if (round < 1)
    throw std::invalid_argument("Schedules::gamma: round is 1-based");
  if (gamma_decay == 0.0) return gamma0;
  return gamma0 / std::pow(static_cast<double>(round), gamma_decay);
}

int Schedules::avg_start_round() const {
  const int start =
      static_cast<int>(std::floor(avg_start_fraction * rounds)) + 1;
  return std::min(start, std::max(rounds, 1));
}

std::vector<int> sample_participants(const std::vector<ClientRecord>& clients,
                                     int round, std::uint64_t master_seed) {
  std::vector<int> active;
  for (const ClientRecord& c : clients) {
    Rng rng = derive_stream(master_seed, StreamKind::Participation,
                            static_cast<std::uint64_t>(c.id),
                            static_cast<std::uint64_t>(round));
    if (rng.uniform() < c.participation_prob) active.push_back(c.id);
  }
  std::sort(active.begin(), active.end());
  return active;
}

ClientRoundResult client_round(const Model& model, const ClientRecord& client,
                               const GlobalParams& theta,
                               const KernelConfig& kernel, int chain_steps,
                               ChainMode mode, Rng& rng) {
  if (chain_steps < 1)
    throw std::invalid_argument("client_round: chain_steps must be >= 1");

  std::vector<Vector> samples;
  ChainState final_state;

  if (kernel.kind == KernelKind::ExactGaussian) {
    samples = exact_gaussian_samples(client.data, theta, chain_steps, rng);
    final_state.z = samples.back();
    final_state.steps =
        (mode == ChainMode::Stateful && client.chain ? client.chain->steps : 0) +
        chain_steps;
  } else {
    ChainState start;
    if (mode == ChainMode::Stateful) {
      if (!client.chain)
        throw std::invalid_argument(
            "client_round: stateful mode requires a persisted chain");
      start = *client.chain;
    } else {
      start.z = theta.mu + theta.sigma * rng.normal_vector(theta.mu.size());
    }
    const Drift drift = [&](const Vector& z) {
      return posterior_grad_z(model, client.data, theta, z);
    };
    ChainRun run = run_ula(start, chain_steps, kernel.gamma, drift, rng);
    samples = std::move(run.samples);
    final_state = run.state;
  }

  const Eigen::Index d = theta.latent_dim();
  ClientRoundResult out;
  out.beta_grad = Vector::Zero(d + 1);
  out.phi_grad = Matrix::Zero(theta.phi.rows(), theta.phi.cols());
  for (const Vector& z : samples) {
    const PriorGrad pg = prior_grad(z, theta.mu, theta.sigma);
    out.beta_grad.head(d) += pg.mu;
    out.beta_grad[d] += pg.sigma;
    out.phi_grad += model.loglik_grad(client.data, theta.phi, z).phi;
  }
  const double inv_m = 1.0 / static_cast<double>(samples.size());
  out.beta_grad *= inv_m;
  out.phi_grad *= inv_m;
  out.chain = std::move(final_state);
  return out;
}

GlobalParams server_update(const GlobalParams& theta,
                           const std::vector<ClientUpload>& uploads,
                           double eta, int num_clients,
                           const Schedules& schedules, WeightRule rule,
                           const std::vector<double>& upload_probs,
                           double hyperprior_lambda) {
  if (uploads.empty())
    throw std::invalid_argument("server_update: no uploads");
  if (rule == WeightRule::InverseProb && upload_probs.size() != uploads.size())
    throw std::invalid_argument(
        "server_update: InverseProb needs one probability per upload");

  const Eigen::Index d = theta.latent_dim();
  const double shared_weight =
      static_cast<double>(num_clients) / static_cast<double>(uploads.size());

  Vector beta_total = Vector::Zero(d + 1);
  Vector phi_total = Vector::Zero(theta.phi.size());
  for (std::size_t j = 0; j < uploads.size(); ++j) {
    const ClientUpload& u = uploads[j];
    if (u.beta_grad.size() != d + 1 || u.phi_grad.size() != theta.phi.size())
      throw std::invalid_argument("server_update: upload has wrong shape");
    double w = shared_weight;
    if (rule == WeightRule::InverseProb) {
      if (upload_probs[j] <= 0.0)
        throw std::invalid_argument(
            "server_update: participation probability must be positive");
      w = 1.0 / upload_probs[j];
    }
    beta_total += w * u.beta_grad;
    phi_total += w * u.phi_grad;
  }

  GlobalParams next = theta;
  next.mu += eta * (beta_total.head(d) - hyperprior_lambda * theta.mu);
  next.sigma += eta * (beta_total[d] - hyperprior_lambda * theta.sigma);
  next.phi += eta * (unflatten_rowmajor(phi_total, theta.phi.rows(),
                                        theta.phi.cols()) -
                     hyperprior_lambda * theta.phi);
  return project(std::move(next), schedules);
}

FedSoulEngine::FedSoulEngine(const Model& model,
                             std::vector<ClientRecord> clients,
                             GlobalParams theta0, FedOptions options)
    : model_(model),
      clients_(std::move(clients)),
      theta_(project(std::move(theta0), options.schedules)),
      options_(std::move(options)) {
  if (clients_.empty())
    throw std::invalid_argument("FedSoulEngine: no clients");
  std::sort(clients_.begin(), clients_.end(),
            [](const ClientRecord& a, const ClientRecord& b) {
              return a.id < b.id;
            });
  std::set<int> ids;
  for (ClientRecord& c : clients_) {
    if (!ids.insert(c.id).second)
      throw std::invalid_argument("FedSoulEngine: duplicate client id");
    if (c.participation_prob < 0.0 || c.participation_prob > 1.0)
      throw std::invalid_argument(
          "FedSoulEngine: participation probability outside [0, 1]");
    if (options_.mode == ChainMode::Stateful) {
      if (!c.chain) {
        ChainState init;
        Rng rng = derive_stream(options_.master_seed, StreamKind::ChainInit,
                                static_cast<std::uint64_t>(c.id), 0);
        init.z = theta_.mu +
                 theta_.sigma * rng.normal_vector(theta_.latent_dim());
        c.chain = std::move(init);
      }
    } else {
      c.chain.reset();  // stateless clients never carry a chain
    }
  }
  avg_sum_.phi = Matrix::Zero(theta_.phi.rows(), theta_.phi.cols());
  avg_sum_.mu = Vector::Zero(theta_.latent_dim());
  avg_sum_.sigma = 0.0;
}

RoundTrace FedSoulEngine::step() {
  const int k = round_ + 1;
  const Schedules& sched = options_.schedules;
  const double eta = sched.eta(k);
  KernelConfig kernel{options_.kernel, sched.gamma(k)};

  const std::vector<int> active =
      sample_participants(clients_, k, options_.master_seed);

  // Map ids back to positions; clients_ is sorted by id.
  std::vector<std::size_t> positions(active.size());
  for (std::size_t j = 0; j < active.size(); ++j) {
    const auto it = std::lower_bound(
        clients_.begin(), clients_.end(), active[j],
        [](const ClientRecord& c, int id) { return c.id < id; });
    positions[j] = static_cast<std::size_t>(it - clients_.begin());
  }

  const int count = static_cast<int>(active.size());
  std::vector<ClientRoundResult> results(active.size());
  std::vector<ClientUpload> uploads(active.size());
  std::vector<double> probs(active.size());
  std::optional<ChainDivergence> failure;

  // Each client's draws come from streams keyed by (client, round), so the
  // serial and parallel paths produce identical uploads.
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) \
    if (options_.execution == Execution::Parallel)
#endif
  for (int j = 0; j < count; ++j) {
    const ClientRecord& client = clients_[positions[static_cast<std::size_t>(j)]];
    try {
      Rng chain_rng =
          derive_stream(options_.master_seed, StreamKind::Chain,
                        static_cast<std::uint64_t>(client.id),
                        static_cast<std::uint64_t>(k));
      ClientRoundResult r = client_round(model_, client, theta_, kernel,
                                         sched.chain_steps, options_.mode,
                                         chain_rng);
      Rng comp_rng =
          derive_stream(options_.master_seed, StreamKind::Compression,
                        static_cast<std::uint64_t>(client.id),
                        static_cast<std::uint64_t>(k));
      ClientUpload& u = uploads[static_cast<std::size_t>(j)];
      u.id = client.id;
      u.beta_grad = r.beta_grad;
      u.phi_grad = compress(options_.compressor,
                            flatten_rowmajor(r.phi_grad), comp_rng);
      probs[static_cast<std::size_t>(j)] = client.participation_prob;
      results[static_cast<std::size_t>(j)] = std::move(r);
    } catch (const ChainDivergence& e) {
#ifdef _OPENMP
#pragma omp critical
#endif
      {
        if (!failure || client.id < failure->client_id) {
          failure = e;
          failure->client_id = client.id;
          failure->round = k;
        }
      }
    }
  }
  if (failure) throw *failure;

  RoundTrace trace;
  trace.round = k;
  trace.participants = active;

  const Eigen::Index d = theta_.latent_dim();
  if (!uploads.empty()) {
    for (std::size_t j = 0; j < uploads.size(); ++j) {
      if (options_.mode == ChainMode::Stateful)
        clients_[positions[j]].chain = results[j].chain;
      trace.upload_bits +=
          payload_bits(options_.compressor, theta_.phi.size()) + 32 * (d + 1);
    }
    theta_ = server_update(theta_, uploads, eta,
                           static_cast<int>(clients_.size()), sched,
                           options_.weight_rule, probs,
                           options_.hyperprior_lambda);
  } else {
    trace.metrics["empty_round"] = 1.0;  // schedules still advance
  }

  round_ = k;
  if (k >= sched.avg_start_round()) {
    avg_sum_.phi += eta * theta_.phi;
    avg_sum_.mu += eta * theta_.mu;
    avg_sum_.sigma += eta * theta_.sigma;
    avg_weight_ += eta;
  }

  trace.theta = theta_;
  trace.theta_avg = theta_avg();
  return trace;
}

std::vector<RoundTrace> FedSoulEngine::run() {
  std::vector<RoundTrace> traces;
  while (round_ < options_.schedules.rounds) traces.push_back(step());
  return traces;
}

GlobalParams FedSoulEngine::theta_avg() const {
  if (avg_weight_ == 0.0) return theta_;
  GlobalParams avg;
  avg.phi = avg_sum_.phi / avg_weight_;
  avg.mu = avg_sum_.mu / avg_weight_;
  avg.sigma = avg_sum_.sigma / avg_weight_;
  return avg;
}

FedSoulEngine::Snapshot FedSoulEngine::snapshot() const {
  Snapshot snap;
  snap.round = round_;
  snap.theta = theta_;
  snap.avg_sum = avg_sum_;
  snap.avg_weight = avg_weight_;
  if (options_.mode == ChainMode::Stateful) {
    snap.chains.reserve(clients_.size());
    for (const ClientRecord& c : clients_) snap.chains.push_back(*c.chain);
  }
  return snap;
}

void FedSoulEngine::restore(const Snapshot& snap) {
  if (options_.mode == ChainMode::Stateful &&
      snap.chains.size() != clients_.size())
    throw std::invalid_argument("restore: chain count mismatch");
  round_ = snap.round;
  theta_ = snap.theta;
  avg_sum_ = snap.avg_sum;
  avg_weight_ = snap.avg_weight;
  if (options_.mode == ChainMode::Stateful)
    for (std::size_t i = 0; i < clients_.size(); ++i)
      clients_[i].chain = snap.chains[i];
}

Prediction predict_new_client(const Model& model, const GlobalParams& theta,
                              const Vector& x, int num_draws, Rng& rng) {
  if (num_draws < 1)
    throw std::invalid_argument("predict_new_client: need at least one draw");
  Prediction mix;
  double second_moment = 0.0;
  for (int l = 0; l < num_draws; ++l) {
    const Vector z =
        theta.mu + theta.sigma * rng.normal_vector(theta.latent_dim());
    const Prediction p = model.predict(theta.phi, z, x);
    if (model.is_classifier()) {
      if (mix.class_probs.size() == 0)
        mix.class_probs = Vector::Zero(p.class_probs.size());
      mix.class_probs += p.class_probs;
    } else {
      mix.mean += p.mean;
      second_moment += p.var + p.mean * p.mean;
    }
  }
  const double inv = 1.0 / static_cast<double>(num_draws);
  if (model.is_classifier()) {
    mix.class_probs *= inv;
  } else {
    mix.mean *= inv;
    mix.var = second_moment * inv - mix.mean * mix.mean;
  }
  return mix;
}

std::vector<Vector> local_uq(const Model& model, const ClientDataset& data,
                             const GlobalParams& theta, int num_samples,
                             int burn_in, double gamma, Rng& rng) {
  if (num_samples < 1)
    throw std::invalid_argument("local_uq: need at least one sample");
  if (burn_in < 0) throw std::invalid_argument("local_uq: negative burn-in");
  ChainState start;
  start.z = theta.mu + theta.sigma * rng.normal_vector(theta.latent_dim());
  const Drift drift = [&](const Vector& z) {
    return posterior_grad_z(model, data, theta, z);
  };
  const ChainRun run =
      run_ula(start, burn_in + num_samples, gamma, drift, rng);
  return std::vector<Vector>(run.samples.end() - num_samples,
                             run.samples.end());
}

}  // namespace fedpop
