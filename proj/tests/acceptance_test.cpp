// Acceptance gate: every criterion the library promises, one pass/fail line
// each. Statistical checks run at fixed seeds so a green run stays green.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedpop/baselines.hpp"
#include "fedpop/compression.hpp"
#include "fedpop/experiment.hpp"
#include "fedpop/federation.hpp"
#include "fedpop/metrics.hpp"
#include "fedpop/model.hpp"
#include "fedpop/rng.hpp"
#include "fedpop/sampler.hpp"
#include "fedpop/synthetic.hpp"

#include "test_support.hpp"

namespace {

using namespace fedpop;

bool report(int id, const std::string& name, bool ok,
            const std::string& detail) {
  std::printf("[%s] criterion %d: %s%s%s\n", ok ? "PASS" : "FAIL", id,
              name.c_str(), detail.empty() ? "" : " -- ", detail.c_str());
  std::fflush(stdout);
  return ok;
}

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3g", x);
  return buf;
}

double median(std::vector<double> v) {
  REQUIRE(!v.empty());
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

Vector pack_theta(const GlobalParams& t) {
  Vector out(t.phi.size() + t.mu.size() + 1);
  out << flatten_rowmajor(t.phi), t.mu, t.sigma;
  return out;
}

GlobalParams fresh_theta(int k, int d, std::uint64_t stream) {
  Rng rng = testsup::test_rng(stream);
  GlobalParams t;
  t.phi = testsup::random_matrix(k, d, rng) / std::sqrt(double(k));
  t.mu = Vector::Zero(d);
  t.sigma = 1.0;
  return t;
}

std::string fresh_dir(const std::string& name) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "fedpop_acceptance" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE_MESSAGE(in.good(), "cannot open " << path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Step sizes shared by the convergence-style runs on the default synthetic
// population: gamma keeps the chain well inside the stable region for the
// largest per-client posterior curvature, eta decays slowly enough to wash
// out the random initialisation within the round budget.
void tune_for_synthetic(Schedules& s) {
  // server steps act on gradients summed over ~100 clients at noise_var 0.1,
  // so the curvature is a few thousand and eta must sit well under 2/that
  s.eta0 = 1e-4;
  s.eta_decay = 0.5;
  s.gamma0 = 1e-3;
  s.gamma_decay = 0.0;
  s.avg_start_fraction = 0.5;
}

}  // namespace

TEST_CASE("criterion 1: averaged iterate agrees with the centralized optimum") {
  // The objective is exactly invariant under in-span rotations
  // (phi Q, Q^T mu) and scalings (c phi, mu / c, sigma / c), so the
  // maximisers form a two-parameter manifold and two independent runs end
  // at gauge-offset points whose raw distance says nothing.  The reference
  // ascent therefore starts from the averaged iterate itself: it converges
  // to the maximiser that iterate is tracking, and the measured move bounds
  // the distance to the maximiser set from above.
  std::vector<double> errors;
  bool solved = true;
  for (int s = 0; s < 5; ++s) {
    SyntheticSpec spec;  // (d, k, b) = (2, 20, 100), 90% small clients
    SyntheticData data = generate_synthetic(spec, 1000 + s);
    LinearGaussianModel model(spec.feature_dim, spec.latent_dim,
                              spec.noise_var);
    GlobalParams theta0 = fresh_theta(spec.feature_dim, spec.latent_dim,
                                      100 + static_cast<std::uint64_t>(s));

    FedOptions opts;
    opts.schedules.rounds = 100;
    // Constant eta keeps integrated step length high enough to reach the
    // optimum within 100 rounds; constant gamma keeps late-round chains
    // mixing (a decaying gamma starves the estimator of effective samples
    // exactly when the tail average is accumulating).  The large M buys
    // down Monte Carlo noise, the dominant error at this horizon.
    opts.schedules.chain_steps = 4000;
    opts.schedules.eta0 = 7e-4;
    opts.schedules.eta_decay = 0.0;
    opts.schedules.gamma0 = 4e-4;
    opts.schedules.gamma_decay = 0.0;
    opts.schedules.avg_start_fraction = 0.5;
    opts.kernel = KernelKind::Ula;
    opts.mode = ChainMode::Stateful;
    opts.master_seed = 1500 + static_cast<std::uint64_t>(s);
    FedSoulEngine engine(model, data.clients, theta0, opts);
    engine.run();
    const GlobalParams avg = engine.theta_avg();

    CentralizedOptions copts;
    copts.tol = 1e-8;
    const CentralizedResult ref = centralized_map(data.clients, avg, copts);
    solved = solved && (ref.converged || ref.grad_norm <= 1e-6);

    const Vector got = pack_theta(avg);
    const Vector want = pack_theta(ref.theta);
    errors.push_back((got - want).norm() / want.norm());
  }
  const double m = median(errors);
  const bool ok = solved && m <= 5e-3;
  CHECK(report(1, "averaged iterate matches the centralized optimum", ok,
               "median relative error " + fmt(m) + " (tolerance 5e-3)" +
                   (solved ? "" : "; reference solve did not converge")));
}

TEST_CASE("criterion 2: beats FedRep on latent recovery, FedAvg on subspace") {
  const std::vector<double> lr_grid{1e-3, 1e-2, 1e-1};
  const int rounds = 200;
  const int budget = 5;  // local gradient evaluations per client per round

  std::vector<double> soul_z, rep_z, soul_pad, avg_pad;
  for (int s = 0; s < 5; ++s) {
    SyntheticSpec spec;
    SyntheticData data = generate_synthetic(spec, 2000 + s);
    LinearGaussianModel model(spec.feature_dim, spec.latent_dim,
                              spec.noise_var);
    GlobalParams theta0 = fresh_theta(spec.feature_dim, spec.latent_dim,
                                      200 + static_cast<std::uint64_t>(s));

    FedOptions opts;
    opts.schedules.rounds = rounds;
    opts.schedules.chain_steps = budget;
    tune_for_synthetic(opts.schedules);
    opts.mode = ChainMode::Stateful;
    opts.master_seed = 2100 + static_cast<std::uint64_t>(s);
    FedSoulEngine engine(model, data.clients, theta0, opts);
    engine.run();
    const GlobalParams bar = engine.theta_avg();

    std::vector<Vector> posterior(data.clients.size());
    for (std::size_t i = 0; i < data.clients.size(); ++i)
      posterior[i] = marginal_oracle(data.clients[i].data, bar).post_mean;
    soul_z.push_back(z_error_aligned(posterior, data.truth.z));
    soul_pad.push_back(principal_angle_distance(bar.phi, data.truth.phi));

    // Each baseline gets the learning-rate grid and keeps its best outcome.
    double best_rep = std::numeric_limits<double>::infinity();
    double best_avg = std::numeric_limits<double>::infinity();
    for (double lr : lr_grid) {
      BaselineOptions bopts;
      bopts.rounds = rounds;
      bopts.local_steps = budget;
      bopts.lr = lr;
      bopts.master_seed = opts.master_seed;
      try {
        FedRepResult rep = run_fedrep(model, data.clients, theta0.phi, bopts);
        std::vector<Vector> heads(data.clients.size());
        for (std::size_t i = 0; i < data.clients.size(); ++i)
          heads[i] = fedrep_head_fit(model, data.clients[i].data, rep.phi,
                                     Vector::Zero(spec.latent_dim), bopts);
        best_rep = std::min(best_rep, z_error_aligned(heads, data.truth.z));
      } catch (const std::runtime_error&) {
        // diverged at this rate; the grid keeps whatever survived
      }
      try {
        FedAvgResult avg =
            run_fedavg(model, data.clients, theta0.phi,
                       Vector::Zero(spec.latent_dim), bopts);
        best_avg = std::min(
            best_avg, principal_angle_distance(avg.phi, data.truth.phi));
      } catch (const std::runtime_error&) {
      }
    }
    rep_z.push_back(best_rep);
    avg_pad.push_back(best_avg);
  }

  const double mz_soul = median(soul_z), mz_rep = median(rep_z);
  const double mp_soul = median(soul_pad), mp_avg = median(avg_pad);
  const bool ok = mz_soul < mz_rep && mp_soul < mp_avg;
  CHECK(report(2, "ordering against FedRep and FedAvg at equal budget", ok,
               "aligned z error " + fmt(mz_soul) + " vs FedRep " + fmt(mz_rep) +
                   "; subspace distance " + fmt(mp_soul) + " vs FedAvg " +
                   fmt(mp_avg)));
}

TEST_CASE("criterion 3: stateless M=50 matches stateful M=5") {
  std::vector<double> stateful_pad, stateless_pad;
  for (int s = 0; s < 5; ++s) {
    SyntheticSpec spec;
    SyntheticData data = generate_synthetic(spec, 3000 + s);
    LinearGaussianModel model(spec.feature_dim, spec.latent_dim,
                              spec.noise_var);
    GlobalParams theta0 = fresh_theta(spec.feature_dim, spec.latent_dim,
                                      300 + static_cast<std::uint64_t>(s));

    auto run_one = [&](ChainMode mode, int steps) {
      FedOptions opts;
      opts.schedules.rounds = 100;
      opts.schedules.chain_steps = steps;
      tune_for_synthetic(opts.schedules);
      opts.mode = mode;
      opts.master_seed = 3100 + static_cast<std::uint64_t>(s);
      FedSoulEngine engine(model, data.clients, theta0, opts);
      engine.run();
      return principal_angle_distance(engine.theta_avg().phi, data.truth.phi);
    };
    stateful_pad.push_back(run_one(ChainMode::Stateful, 5));
    stateless_pad.push_back(run_one(ChainMode::Stateless, 50));
  }
  const double m_ful = median(stateful_pad);
  const double m_less = median(stateless_pad);
  const double rel = std::abs(m_less - m_ful) / m_ful;
  const bool ok = rel <= 0.25;
  CHECK(report(3, "stateless M=50 within 25% of stateful M=5", ok,
               "stateful " + fmt(m_ful) + ", stateless " + fmt(m_less) +
                   ", relative gap " + fmt(rel)));
}

TEST_CASE("criterion 4: exact-kernel estimators match the marginal oracle") {
  const int draws = 10000;
  double worst_se_ratio = 0.0;
  bool replay_ok = true;
  for (int i = 0; i < 20; ++i) {
    Rng setup = testsup::test_rng(40 + static_cast<std::uint64_t>(i));
    const int k = 4, d = 2;
    const int n = 5 + static_cast<int>(setup.below(8));
    const Matrix gen_phi = testsup::random_matrix(k, d, setup);
    const Vector gen_z = setup.normal_vector(d);
    LinearGaussianModel model(k, d, 0.3);
    ClientRecord client;
    client.id = i;
    client.data = testsup::random_regression(gen_phi, gen_z, n, 0.3, setup);

    GlobalParams theta;
    theta.phi = testsup::random_matrix(k, d, setup) / std::sqrt(double(k));
    theta.mu = 0.3 * setup.normal_vector(d);
    theta.sigma = 0.6 + 0.8 * setup.uniform();

    const MarginalResult oracle = marginal_oracle(client.data, theta);

    Rng chain = testsup::test_rng(4000 + static_cast<std::uint64_t>(i));
    Rng replay = chain;  // same stream, so the draws below are the same ones
    const KernelConfig kernel{KernelKind::ExactGaussian, 0.0};
    const ClientRoundResult got = client_round(model, client, theta, kernel,
                                               draws, ChainMode::Stateless,
                                               chain);

    // Recompute the per-draw gradient samples to get Monte Carlo errors.
    const std::vector<Vector> zs =
        exact_gaussian_samples(client.data, theta, draws, replay);
    const Eigen::Index comps = d + 1 + k * d;
    Vector sum = Vector::Zero(comps), sumsq = Vector::Zero(comps);
    for (const Vector& z : zs) {
      const PriorGrad pg = prior_grad(z, theta.mu, theta.sigma);
      const Matrix jp = model.loglik_grad(client.data, theta.phi, z).phi;
      Vector row(comps);
      row << pg.mu, pg.sigma, flatten_rowmajor(jp);
      sum += row;
      sumsq += row.cwiseProduct(row);
    }
    const Vector mean = sum / draws;
    const Vector se =
        ((sumsq - draws * mean.cwiseProduct(mean)) / (draws - 1.0))
            .cwiseMax(0.0)
            .cwiseSqrt() /
        std::sqrt(double(draws));

    Vector estimate(comps), reference(comps);
    estimate << got.beta_grad, flatten_rowmajor(got.phi_grad);
    reference << oracle.grad_mu, oracle.grad_sigma,
        flatten_rowmajor(oracle.grad_phi);
    replay_ok = replay_ok && (estimate - mean).norm() <= 1e-9;
    for (Eigen::Index j = 0; j < comps; ++j) {
      const double ratio =
          std::abs(estimate[j] - reference[j]) / (se[j] + 1e-12);
      worst_se_ratio = std::max(worst_se_ratio, ratio);
    }
  }
  const bool ok = replay_ok && worst_se_ratio <= 4.0;
  CHECK(report(4, "(I, J) at M=1e4 within 4 SE of the analytic gradients", ok,
               "worst |error|/SE " + fmt(worst_se_ratio) + " over 20 instances" +
                   (replay_ok ? "" : "; draw replay mismatch")));
}

TEST_CASE("criterion 5: quantiser is unbiased with bounded variance") {
  const int draws = 100000;
  double worst_se_ratio = 0.0;
  double worst_var_ratio = 0.0;
  int case_id = 0;
  for (int levels : {1, 4, 16}) {
    for (int dim : {2, 10, 100}) {
      CompressorSpec spec{CompressorKind::StochasticQuant, levels};
      Rng vr = testsup::test_rng(5500 + static_cast<std::uint64_t>(case_id));
      const Vector v = vr.normal_vector(dim);
      const double bound = compression_variance_bound(spec, dim);

      Rng rng = testsup::test_rng(5600 + static_cast<std::uint64_t>(case_id));
      Vector sum = Vector::Zero(dim), sumsq = Vector::Zero(dim);
      double err_sq = 0.0;
      for (int t = 0; t < draws; ++t) {
        const Vector c = compress(spec, v, rng);
        sum += c;
        sumsq += c.cwiseProduct(c);
        err_sq += (c - v).squaredNorm();
      }
      const Vector mean = sum / draws;
      const Vector se =
          ((sumsq - draws * mean.cwiseProduct(mean)) / (draws - 1.0))
              .cwiseMax(0.0)
              .cwiseSqrt() /
          std::sqrt(double(draws));
      for (int j = 0; j < dim; ++j) {
        const double ratio = std::abs(mean[j] - v[j]) / (se[j] + 1e-15);
        worst_se_ratio = std::max(worst_se_ratio, ratio);
      }
      worst_var_ratio = std::max(
          worst_var_ratio, (err_sq / draws) / (bound * v.squaredNorm()));
      ++case_id;
    }
  }
  const bool ok = worst_se_ratio <= 4.0 && worst_var_ratio <= 1.01;
  CHECK(report(5, "quantiser unbiased within 4 SE, variance within bound", ok,
               "worst |bias|/SE " + fmt(worst_se_ratio) +
                   ", worst variance/bound " + fmt(worst_var_ratio)));
}

TEST_CASE("criterion 6: partial participation lands where full does") {
  const std::vector<double> probs{1.0, 0.5, 0.2};
  std::vector<std::vector<double>> pads(probs.size());
  for (int s = 0; s < 5; ++s) {
    SyntheticSpec spec;
    SyntheticData data = generate_synthetic(spec, 6000 + s);
    LinearGaussianModel model(spec.feature_dim, spec.latent_dim,
                              spec.noise_var);
    GlobalParams theta0 = fresh_theta(spec.feature_dim, spec.latent_dim,
                                      600 + static_cast<std::uint64_t>(s));
    for (std::size_t pi = 0; pi < probs.size(); ++pi) {
      std::vector<ClientRecord> clients = data.clients;
      for (ClientRecord& c : clients) c.participation_prob = probs[pi];

      FedOptions opts;
      opts.schedules.rounds = 150;
      opts.schedules.chain_steps = 5;
      tune_for_synthetic(opts.schedules);  // decaying eta
      opts.mode = ChainMode::Stateful;
      opts.master_seed = 6100 + static_cast<std::uint64_t>(s);
      FedSoulEngine engine(model, clients, theta0, opts);
      engine.run();
      pads[pi].push_back(
          principal_angle_distance(engine.theta_avg().phi, data.truth.phi));
    }
  }
  const double base = median(pads[0]);
  const double rel_half = std::abs(median(pads[1]) - base) / base;
  const double rel_fifth = std::abs(median(pads[2]) - base) / base;
  const bool ok = rel_half <= 0.3 && rel_fifth <= 0.3;
  CHECK(report(6, "subspace distance stable across participation rates", ok,
               "p=1 " + fmt(base) + ", relative gap p=0.5 " + fmt(rel_half) +
                   ", p=0.2 " + fmt(rel_fifth) + " (tolerance 0.3)"));
}

TEST_CASE("criterion 7: Langevin chain hits its stationary law") {
  // Fixed SPD precision with known spectrum, so gamma can sit at 0.4 / lambda_max.
  Rng rng = testsup::test_rng(70);
  const Matrix raw = testsup::random_matrix(3, 3, rng);
  const Matrix q = Eigen::HouseholderQR<Matrix>(raw).householderQ();
  Vector eigs(3);
  eigs << 1.2, 1.8, 2.5;
  const Matrix precision = q * eigs.asDiagonal() * q.transpose();
  const Matrix target_cov = precision.llt().solve(Matrix::Identity(3, 3));
  const Vector mean = rng.normal_vector(3);
  const Drift drift = [&](const Vector& z) { return precision * (mean - z); };

  // Chunked empirical covariance so long runs stay in constant memory.
  auto empirical_cov = [&](double gamma, std::int64_t steps,
                           std::int64_t burn, std::uint64_t stream) {
    Rng chain_rng = testsup::test_rng(stream);
    ChainState state;
    state.z = mean;
    ChainRun warm = run_ula(state, static_cast<int>(burn), gamma, drift,
                            chain_rng);
    state = warm.state;
    Vector sum = Vector::Zero(3);
    Matrix outer = Matrix::Zero(3, 3);
    std::int64_t left = steps;
    while (left > 0) {
      const int chunk = static_cast<int>(std::min<std::int64_t>(left, 100000));
      ChainRun run = run_ula(state, chunk, gamma, drift, chain_rng);
      for (const Vector& z : run.samples) {
        sum += z;
        outer += z * z.transpose();
      }
      state = run.state;
      left -= chunk;
    }
    const Vector avg = sum / double(steps);
    return Matrix((outer - double(steps) * avg * avg.transpose()) /
                  double(steps - 1));
  };

  const double gamma = 0.16;  // gamma * lambda_max = 0.4
  const Matrix predicted = ula_stationary_cov(precision, gamma);
  const Matrix emp = empirical_cov(gamma, 100000, 20000, 71);
  const double match = (emp - predicted).norm() / predicted.norm();

  const double bias_full =
      (empirical_cov(gamma, 2000000, 50000, 72) - target_cov).norm();
  const double bias_half =
      (empirical_cov(gamma / 2, 2000000, 100000, 73) - target_cov).norm();
  const double ratio = bias_half / bias_full;

  const bool ok = match <= 0.03 && ratio <= 0.6;
  CHECK(report(7, "stationary covariance matched; bias halves with gamma", ok,
               "covariance mismatch " + fmt(match) +
                   " (tolerance 0.03); bias ratio at gamma/2 " + fmt(ratio) +
                   " (tolerance 0.6)"));
}

TEST_CASE("criterion 8: every analytic gradient survives finite differences") {
  double worst = 0.0;
  auto track = [&](double fd, double an) {
    worst = std::max(worst, testsup::rel_err(fd, an));
  };

  // Regression likelihood, both arguments.
  for (int i = 0; i < 20; ++i) {
    Rng rng = testsup::test_rng(80 + static_cast<std::uint64_t>(i));
    const int k = 4, d = 2, n = 6;
    LinearGaussianModel model(k, d, 0.3);
    const Matrix phi = testsup::random_matrix(k, d, rng);
    const Vector z = rng.normal_vector(d);
    const ClientDataset data =
        testsup::random_regression(phi, z, n, 0.3, rng);
    const LoglikGrad grad = model.loglik_grad(data, phi, z);
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < d; ++b)
        track(testsup::fd_slope([&](double t) {
                Matrix p = phi;
                p(a, b) += t;
                return model.loglik(data, p, z);
              }),
              grad.phi(a, b));
    for (int j = 0; j < d; ++j)
      track(testsup::fd_slope([&](double t) {
              Vector w = z;
              w[j] += t;
              return model.loglik(data, phi, w);
            }),
            grad.z[j]);
  }

  // Classification likelihood, both arguments.
  for (int i = 0; i < 20; ++i) {
    Rng rng = testsup::test_rng(81000 + static_cast<std::uint64_t>(i));
    const int k = 3, d_rep = 2, classes = 3, n = 8;
    SoftmaxModel model(k, d_rep, classes);
    const Matrix phi = testsup::random_matrix(k, d_rep, rng);
    const Vector z = rng.normal_vector(d_rep * classes);
    const ClientDataset data =
        testsup::random_classification(n, k, classes, rng);
    const LoglikGrad grad = model.loglik_grad(data, phi, z);
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < d_rep; ++b)
        track(testsup::fd_slope([&](double t) {
                Matrix p = phi;
                p(a, b) += t;
                return model.loglik(data, p, z);
              }),
              grad.phi(a, b));
    for (int j = 0; j < d_rep * classes; ++j)
      track(testsup::fd_slope([&](double t) {
              Vector w = z;
              w[j] += t;
              return model.loglik(data, phi, w);
            }),
            grad.z[j]);
  }

  // Prior density in all three arguments.
  for (int i = 0; i < 20; ++i) {
    Rng rng = testsup::test_rng(82000 + static_cast<std::uint64_t>(i));
    const int d = 3;
    const Vector z = rng.normal_vector(d);
    const Vector mu = rng.normal_vector(d);
    const double sigma = 0.5 + rng.uniform();
    const PriorGrad grad = prior_grad(z, mu, sigma);
    for (int j = 0; j < d; ++j) {
      track(testsup::fd_slope([&](double t) {
              Vector m = mu;
              m[j] += t;
              return prior_logdensity(z, m, sigma);
            }),
            grad.mu[j]);
      track(testsup::fd_slope([&](double t) {
              Vector w = z;
              w[j] += t;
              return prior_logdensity(w, mu, sigma);
            }),
            grad.z[j]);
    }
    track(testsup::fd_slope(
              [&](double t) { return prior_logdensity(z, mu, sigma + t); }),
          grad.sigma);
  }

  // Closed-form marginal in phi, mu, and sigma.
  for (int i = 0; i < 20; ++i) {
    Rng rng = testsup::test_rng(83000 + static_cast<std::uint64_t>(i));
    const int k = 4, d = 2, n = 6;
    const Matrix gen_phi = testsup::random_matrix(k, d, rng);
    const Vector gen_z = rng.normal_vector(d);
    const ClientDataset data =
        testsup::random_regression(gen_phi, gen_z, n, 0.3, rng);
    GlobalParams theta;
    theta.phi = testsup::random_matrix(k, d, rng) / std::sqrt(double(k));
    theta.mu = 0.5 * rng.normal_vector(d);
    theta.sigma = 0.6 + 0.8 * rng.uniform();
    const MarginalResult oracle = marginal_oracle(data, theta);
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < d; ++b)
        track(testsup::fd_slope([&](double t) {
                GlobalParams th = theta;
                th.phi(a, b) += t;
                return marginal_oracle(data, th).logml;
              }),
              oracle.grad_phi(a, b));
    for (int j = 0; j < d; ++j)
      track(testsup::fd_slope([&](double t) {
              GlobalParams th = theta;
              th.mu[j] += t;
              return marginal_oracle(data, th).logml;
            }),
            oracle.grad_mu[j]);
    track(testsup::fd_slope([&](double t) {
            GlobalParams th = theta;
            th.sigma += t;
            return marginal_oracle(data, th).logml;
          }),
          oracle.grad_sigma);
  }

  const bool ok = worst <= 1e-4;
  CHECK(report(8, "analytic gradients match finite differences", ok,
               "worst relative error " + fmt(worst) + " (tolerance 1e-4)"));
}

TEST_CASE("criterion 9: predictive uncertainty behaves on the mixture task") {
  // Entropy separation on trained runs, five seeds through the full harness.
  std::vector<double> separations;
  for (int s = 0; s < 5; ++s) {
    ExperimentConfig cfg;
    cfg.algorithm = "fedsoul";
    cfg.model_kind = "softmax";
    cfg.feature_dim = 2;
    cfg.latent_dim = 2;
    cfg.num_classes = 2;
    cfg.num_clients = 10;
    cfg.n_train = 40;
    cfg.n_eval = 10;
    cfg.master_seed = 9100 + static_cast<std::uint64_t>(s);
    cfg.data_seed = 9000 + static_cast<std::uint64_t>(s);
    cfg.output_dir = fresh_dir("uq_seed" + std::to_string(s));
    cfg.schedules.rounds = 80;
    cfg.schedules.chain_steps = 5;
    cfg.schedules.eta0 = 5e-3;
    cfg.schedules.eta_decay = 0.5;
    cfg.schedules.gamma0 = 5e-3;
    const RunOutcome out = run_experiment(cfg);
    separations.push_back(out.summary.count("entropy_separation")
                              ? out.summary.at("entropy_separation")
                              : -1.0);
  }
  const double sep = median(separations);
  const bool sep_ok = sep > 0.0;

  // Calibration arithmetic on hand-checkable inputs.
  std::vector<Vector> two(2, Vector(2));
  two[0] << 0.2, 0.8;
  two[1] << 0.8, 0.2;
  const CalibrationResult mixed =
      expected_calibration_error(two, std::vector<int>{1, 1});
  std::vector<Vector> sure(1, Vector(2));
  sure[0] << 1.0, 0.0;
  const CalibrationResult perfect =
      expected_calibration_error(sure, std::vector<int>{0});
  const bool ece_ok = std::abs(mixed.ece - 0.3) <= 1e-12 &&
                      mixed.bins[8].count == 2 && perfect.ece <= 1e-15;

  // Per-client reliability curves are written by the study driver.
  ExperimentConfig study;
  study.algorithm = "fedsoul";
  study.model_kind = "softmax";
  study.feature_dim = 2;
  study.latent_dim = 2;
  study.num_classes = 2;
  study.num_clients = 3;
  study.n_train = 20;
  study.n_eval = 8;
  study.master_seed = 9500;
  study.output_dir = fresh_dir("uq_study");
  study.schedules.rounds = 30;
  study.schedules.chain_steps = 5;
  study.schedules.gamma0 = 5e-3;
  study.uq_samples = 80;
  study.uq_burn_in = 80;
  run_uq_study(study);
  namespace fs = std::filesystem;
  bool files_ok = fs::exists(study.output_dir + "/reliability_pooled.csv");
  for (int c = 0; c < 3; ++c)
    files_ok = files_ok &&
               fs::exists(study.output_dir + "/reliability_client_" +
                          std::to_string(c) + ".csv");

  const bool ok = sep_ok && ece_ok && files_ok;
  CHECK(report(9, "OOD entropy above in-distribution; calibration exact", ok,
               "median entropy separation " + fmt(sep) +
                   (ece_ok ? "" : "; calibration example wrong") +
                   (files_ok ? "" : "; reliability curves missing")));
}

TEST_CASE("criterion 10: runs are deterministic and resumable") {
  auto tiny = [&](const std::string& dir, int rounds) {
    ExperimentConfig cfg;
    cfg.algorithm = "fedsoul";
    cfg.master_seed = 77;
    cfg.data_seed = 42;
    cfg.output_dir = dir;
    cfg.feature_dim = 6;
    cfg.latent_dim = 2;
    cfg.num_clients = 6;
    cfg.fraction_small = 0.5;
    cfg.n_small = 4;
    cfg.n_large = 6;
    cfg.schedules.rounds = rounds;
    cfg.schedules.chain_steps = 3;
    cfg.schedules.eta0 = 5e-3;
    cfg.schedules.gamma0 = 2e-3;
    cfg.schedules.avg_start_fraction = 0.0;
    return cfg;
  };

  const std::string dir_a = fresh_dir("det_a");
  const std::string dir_b = fresh_dir("det_b");
  run_experiment(tiny(dir_a, 8));
  run_experiment(tiny(dir_b, 8));
  const bool repeat_ok =
      slurp(dir_a + "/metrics.csv") == slurp(dir_b + "/metrics.csv") &&
      slurp(dir_a + "/summary.json") == slurp(dir_b + "/summary.json") &&
      slurp(dir_a + "/theta_final.json") == slurp(dir_b + "/theta_final.json");

  // Interrupt after three rounds, then resume under the eight-round config.
  const std::string dir_c = fresh_dir("det_resume");
  run_experiment(tiny(dir_c, 3));
  ExperimentConfig full = tiny(dir_c, 8);
  {
    nlohmann::json ckpt =
        nlohmann::json::parse(slurp(dir_c + "/checkpoint.json"));
    ckpt["config"] = serialize_config(full);
    std::ofstream out(dir_c + "/checkpoint.json", std::ios::binary);
    out << ckpt.dump(2) << "\n";
  }
  run_experiment(full, true);
  const bool resume_ok =
      slurp(dir_c + "/metrics.csv") == slurp(dir_a + "/metrics.csv") &&
      slurp(dir_c + "/theta_final.json") == slurp(dir_a + "/theta_final.json");

  const bool ok = repeat_ok && resume_ok;
  CHECK(report(10, "identical seeds byte-identical; resume trace-identical",
               ok,
               std::string(repeat_ok ? "repeat run matched"
                                     : "repeat run differed") +
                   "; " +
                   (resume_ok ? "resumed run matched" : "resumed run differed")));
}
