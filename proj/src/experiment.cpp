#include "fedpop/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fedpop/baselines.hpp"
#include "fedpop/checkpoint.hpp"

namespace fedpop {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fmt_num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

struct RowMetrics {
  std::optional<double> pad, z_raw, z_aligned, gap, acc, ece, h_in, h_ood;
};

constexpr const char* kHeader =
    "round,algorithm,seed,participants,payload_bits,pad,z_error_raw,"
    "z_error_aligned,objective_gap,accuracy,ece,entropy_in,entropy_ood";

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string::size_type start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

// Streams one row per round; flushed eagerly so an aborted run still leaves
// the rounds it completed on disk. On resume, rows after the checkpointed
// round are dropped and rewritten.
class MetricsWriter {
 public:
  MetricsWriter(const std::string& path, int keep_rows_upto) {
    std::vector<std::string> kept;
    if (keep_rows_upto >= 0 && fs::exists(path)) {
      std::ifstream in(path);
      std::string line;
      bool first = true;
      while (std::getline(in, line)) {
        if (first) {
          first = false;
          continue;
        }
        if (line.empty()) continue;
        const std::vector<std::string> fields = split_csv(line);
        if (fields.size() < 5) continue;
        if (std::atoi(fields[0].c_str()) <= keep_rows_upto) {
          kept.push_back(line);
          kept_bits_ += std::atoll(fields[4].c_str());
        }
      }
    }
    out_.open(path, std::ios::trunc);
    if (!out_) throw std::runtime_error("cannot write " + path);
    out_ << kHeader << "\n";
    for (const std::string& line : kept) out_ << line << "\n";
    out_.flush();
  }

  void row(int round, const std::string& algo, std::uint64_t seed,
           std::size_t participants, std::int64_t bits, const RowMetrics& m) {
    const auto cell = [](const std::optional<double>& v) {
      return v ? fmt_num(*v) : std::string("NA");
    };
    out_ << round << ',' << algo << ',' << seed << ',' << participants << ','
         << bits << ',' << cell(m.pad) << ',' << cell(m.z_raw) << ','
         << cell(m.z_aligned) << ',' << cell(m.gap) << ',' << cell(m.acc)
         << ',' << cell(m.ece) << ',' << cell(m.h_in) << ','
         << cell(m.h_ood) << "\n";
    out_.flush();
  }

  std::int64_t kept_bits() const { return kept_bits_; }

 private:
  std::ofstream out_;
  std::int64_t kept_bits_ = 0;
};

bool is_linear_gaussian(const ExperimentConfig& config) {
  return config.model_kind == "linear_gaussian";
}

CentralizedOptions centralized_options(const ExperimentConfig& config) {
  CentralizedOptions opts;
  opts.r_theta = config.schedules.r_theta;
  opts.sigma_min = config.schedules.sigma_min;
  opts.sigma_max = config.schedules.sigma_max;
  opts.hyperprior_lambda = config.hyperprior_lambda;
  return opts;
}

BaselineOptions baseline_options(const ExperimentConfig& config) {
  BaselineOptions opts;
  opts.rounds = config.schedules.rounds;
  opts.local_steps = config.local_steps;
  opts.lr = config.lr;
  opts.master_seed = config.master_seed;
  opts.execution = parse_execution(config.execution);
  return opts;
}

// Exact per-client posterior means at the given parameters; the per-round
// latent-recovery diagnostic for the regression task.
std::vector<Vector> posterior_means(const Problem& problem,
                                    const GlobalParams& theta) {
  std::vector<Vector> out;
  out.reserve(problem.clients.size());
  for (const ClientRecord& c : problem.clients)
    out.push_back(marginal_oracle(c.data, theta).post_mean);
  return out;
}

RowMetrics regression_row(const Problem& problem,
                          const ExperimentConfig& config,
                          const GlobalParams& theta,
                          const GlobalParams& theta_avg,
                          const std::optional<double>& fstar) {
  RowMetrics m;
  m.pad = principal_angle_distance(theta.phi, problem.truth->phi);
  const std::vector<Vector> est = posterior_means(problem, theta);
  m.z_raw = z_error(est, problem.truth->z);
  m.z_aligned = z_error_aligned(est, problem.truth->z);
  if (fstar)
    m.gap = *fstar - marginal_objective(problem.clients, theta_avg,
                                        config.hyperprior_lambda);
  return m;
}

// Pooled point-estimate predictions over every client's evaluation set.
void pooled_predictions(const Model& model,
                        const std::vector<ClientDataset>& sets,
                        const std::function<const Matrix&(std::size_t)>& phi_of,
                        const std::function<Vector(std::size_t)>& z_of,
                        std::vector<Vector>* probs, std::vector<int>* labels) {
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const ClientDataset& set = sets[i];
    const Vector z = z_of(i);
    for (Eigen::Index row = 0; row < set.n(); ++row) {
      probs->push_back(
          model.predict(phi_of(i), z, set.features.row(row).transpose())
              .class_probs);
      if (labels)
        labels->push_back(set.labels[static_cast<std::size_t>(row)]);
    }
  }
}

double pooled_accuracy(const std::vector<Vector>& probs,
                       const std::vector<int>& labels) {
  std::vector<int> preds;
  preds.reserve(probs.size());
  for (const Vector& p : probs) {
    Eigen::Index arg = 0;
    p.maxCoeff(&arg);
    preds.push_back(static_cast<int>(arg));
  }
  return accuracy(preds, labels);
}

double mean_entropy(const std::vector<Vector>& probs) {
  double h = 0.0;
  for (const Vector& p : probs) h += predictive_entropy(p);
  return h / static_cast<double>(probs.size());
}

RowMetrics classification_row(
    const Problem& problem,
    const std::function<const Matrix&(std::size_t)>& phi_of,
    const std::function<Vector(std::size_t)>& z_of) {
  std::vector<Vector> probs;
  std::vector<int> labels;
  pooled_predictions(*problem.model, problem.test, phi_of, z_of, &probs,
                     &labels);
  RowMetrics m;
  m.acc = pooled_accuracy(probs, labels);
  return m;
}

std::map<std::string, double> summarize_pointwise(
    const ExperimentConfig& config, const Problem& problem,
    const std::function<const Matrix&(std::size_t)>& phi_of,
    const std::function<Vector(std::size_t)>& z_of) {
  std::map<std::string, double> out;
  if (is_linear_gaussian(config)) {
    double pad_sum = 0.0;
    std::vector<Vector> est;
    est.reserve(problem.clients.size());
    for (std::size_t i = 0; i < problem.clients.size(); ++i) {
      pad_sum += principal_angle_distance(phi_of(i), problem.truth->phi);
      est.push_back(z_of(i));
    }
    out["final_pad"] = pad_sum / static_cast<double>(problem.clients.size());
    out["final_z_error_raw"] = z_error(est, problem.truth->z);
    out["final_z_error_aligned"] = z_error_aligned(est, problem.truth->z);
  } else {
    std::vector<Vector> probs, ood_probs;
    std::vector<int> labels;
    pooled_predictions(*problem.model, problem.test, phi_of, z_of, &probs,
                       &labels);
    pooled_predictions(*problem.model, problem.ood, phi_of, z_of, &ood_probs,
                       nullptr);
    out["accuracy"] = pooled_accuracy(probs, labels);
    out["ece"] = expected_calibration_error(probs, labels, 10).ece;
    out["entropy_in"] = mean_entropy(probs);
    out["entropy_ood"] = mean_entropy(ood_probs);
    out["entropy_separation"] = out["entropy_ood"] - out["entropy_in"];
  }
  return out;
}

std::map<std::string, double> summarize_fedsoul(
    const ExperimentConfig& config, const Problem& problem,
    const GlobalParams& theta, const GlobalParams& theta_avg,
    const std::optional<double>& fstar) {
  std::map<std::string, double> out;
  if (is_linear_gaussian(config)) {
    out["final_pad"] =
        principal_angle_distance(theta.phi, problem.truth->phi);
    out["final_pad_avg"] =
        principal_angle_distance(theta_avg.phi, problem.truth->phi);
    // Latent estimates the way a deployment would produce them: posterior
    // means from fresh sampling chains at the reported parameters.
    const double gamma = config.uq_gamma.value_or(config.schedules.gamma0);
    std::vector<Vector> est;
    est.reserve(problem.clients.size());
    for (const ClientRecord& c : problem.clients) {
      Rng rng = derive_stream(config.master_seed, StreamKind::Uq,
                              static_cast<std::uint64_t>(c.id), 0);
      const std::vector<Vector> samples =
          local_uq(*problem.model, c.data, theta_avg, config.uq_samples,
                   config.uq_burn_in, gamma, rng);
      Vector mean = Vector::Zero(theta_avg.latent_dim());
      for (const Vector& z : samples) mean += z;
      est.push_back(mean / static_cast<double>(samples.size()));
    }
    out["final_z_error_raw"] = z_error(est, problem.truth->z);
    out["final_z_error_aligned"] = z_error_aligned(est, problem.truth->z);
    out["final_sigma"] = theta_avg.sigma;
    out["final_objective"] = marginal_objective(problem.clients, theta_avg,
                                                config.hyperprior_lambda);
    if (fstar) out["final_objective_gap"] = *fstar - out["final_objective"];
  } else {
    const UncertaintyEval uq =
        evaluate_uncertainty(problem, theta_avg, config);
    out["accuracy"] = uq.accuracy;
    out["ece"] = uq.ece_pooled;
    out["entropy_in"] = uq.entropy_in;
    out["entropy_ood"] = uq.entropy_ood;
    out["entropy_separation"] = uq.separation;
    out["final_sigma"] = theta_avg.sigma;
  }
  return out;
}

std::map<std::string, double> summarize_centralized(
    const ExperimentConfig& config, const Problem& problem,
    const GlobalParams& theta) {
  std::map<std::string, double> out;
  out["final_pad"] = principal_angle_distance(theta.phi, problem.truth->phi);
  const std::vector<Vector> est = posterior_means(problem, theta);
  out["final_z_error_raw"] = z_error(est, problem.truth->z);
  out["final_z_error_aligned"] = z_error_aligned(est, problem.truth->z);
  out["final_sigma"] = theta.sigma;
  out["final_objective"] =
      marginal_objective(problem.clients, theta, config.hyperprior_lambda);
  return out;
}

void write_summary(const std::string& dir, const std::string& algorithm,
                   const std::map<std::string, double>& metrics,
                   const std::string& filename) {
  json j{{"schema_version", 1}, {"algorithm", algorithm}};
  json m = json::object();
  for (const auto& [key, value] : metrics) m[key] = value;
  j["metrics"] = std::move(m);
  std::ofstream out(dir + "/" + filename, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + dir + "/" + filename);
  out << j.dump(2) << "\n";
}

void write_reliability_csv(const std::string& path,
                           const CalibrationResult& curve) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "bin_lower,bin_upper,mean_confidence,mean_accuracy,count\n";
  for (const ReliabilityBin& b : curve.bins)
    out << fmt_num(b.lower) << ',' << fmt_num(b.upper) << ','
        << fmt_num(b.mean_confidence) << ',' << fmt_num(b.mean_accuracy)
        << ',' << b.count << "\n";
}

}  // namespace

Problem build_problem(const ExperimentConfig& config) {
  validate_config(config);
  Problem p;
  if (is_linear_gaussian(config)) {
    SyntheticData data;
    if (!config.dataset_file.empty()) {
      data = load_synthetic(config.dataset_file);
    } else {
      SyntheticSpec spec;
      spec.feature_dim = config.feature_dim;
      spec.latent_dim = config.latent_dim;
      spec.num_clients = config.num_clients;
      spec.fraction_small = config.fraction_small;
      spec.n_small = config.n_small;
      spec.n_large = config.n_large;
      spec.noise_var = config.noise_var;
      data = generate_synthetic(spec, config.effective_data_seed());
    }
    const int k = static_cast<int>(data.truth.phi.rows());
    const int d = static_cast<int>(data.truth.phi.cols());
    p.model =
        std::make_unique<LinearGaussianModel>(k, d, data.truth.noise_var);
    p.truth = std::move(data.truth);
    p.clients = std::move(data.clients);
  } else {
    MixtureData data;
    if (!config.dataset_file.empty()) {
      data = load_mixture(config.dataset_file);
    } else {
      MixtureSpec spec;
      spec.num_clients = config.num_clients;
      spec.n_train = config.n_train;
      spec.n_eval = config.n_eval;
      spec.anchor_sep = config.anchor_sep;
      spec.client_spread = config.client_spread;
      spec.within_sd = config.within_sd;
      spec.ood_shift = config.ood_shift;
      data = generate_mixture(spec, config.effective_data_seed());
    }
    p.model = std::make_unique<SoftmaxModel>(2, config.latent_dim,
                                             config.num_classes);
    p.clients = std::move(data.clients);
    p.test = std::move(data.test);
    p.ood = std::move(data.ood);
  }
  for (ClientRecord& c : p.clients)
    c.participation_prob = config.participation_prob;
  std::sort(p.clients.begin(), p.clients.end(),
            [](const ClientRecord& a, const ClientRecord& b) {
              return a.id < b.id;
            });
  return p;
}

GlobalParams initial_theta(const ExperimentConfig& config,
                           const Model& model) {
  GlobalParams theta;
  const double scale = config.phi_scale.value_or(
      1.0 / std::sqrt(static_cast<double>(model.feature_dim())));
  Rng rng = derive_stream(config.master_seed, StreamKind::ThetaInit, 0, 0);
  theta.phi = Matrix(model.feature_dim(), model.phi_cols());
  for (Eigen::Index i = 0; i < theta.phi.rows(); ++i)
    for (Eigen::Index j = 0; j < theta.phi.cols(); ++j)
      theta.phi(i, j) = scale * rng.normal();
  theta.mu = Vector::Zero(model.latent_dim());
  theta.sigma = config.sigma0;
  return theta;
}

RunOutcome run_experiment(const ExperimentConfig& config, bool resume) {
  validate_config(config);
  if (config.algorithm == "centralized" && !is_linear_gaussian(config))
    throw std::runtime_error(
        "config: the centralized reference needs the linear-Gaussian model");
  if (config.objective_gap && !is_linear_gaussian(config))
    throw std::runtime_error(
        "config: objective_gap needs the linear-Gaussian model");
  if (config.kernel == "exact_gaussian" && !is_linear_gaussian(config))
    throw std::runtime_error(
        "config: the exact_gaussian kernel needs the linear-Gaussian model");

  fs::create_directories(config.output_dir);
  {
    std::ofstream cfg_out(config.output_dir + "/config.ini", std::ios::trunc);
    cfg_out << serialize_config(config);
  }

  Problem problem = build_problem(config);
  const Model& model = *problem.model;
  const GlobalParams theta0 = initial_theta(config, model);
  const bool lg = is_linear_gaussian(config);

  std::optional<double> fstar;
  if (config.objective_gap && config.algorithm != "centralized")
    fstar =
        centralized_map(problem.clients, theta0, centralized_options(config))
            .objective;

  RunOutcome outcome;
  outcome.output_dir = config.output_dir;
  outcome.algorithm = config.algorithm;
  const std::string metrics_path = config.output_dir + "/metrics.csv";
  const std::string params_path = config.output_dir + "/theta_final.json";
  std::int64_t total_bits = 0;

  if (config.algorithm == "fedsoul") {
    FedOptions fopts;
    fopts.schedules = config.schedules;
    fopts.kernel = parse_kernel(config.kernel);
    fopts.compressor = {parse_compressor(config.compressor),
                        config.quant_levels};
    fopts.mode = parse_mode(config.mode);
    fopts.weight_rule = parse_weight_rule(config.weight_rule);
    fopts.execution = parse_execution(config.execution);
    fopts.hyperprior_lambda = config.hyperprior_lambda;
    fopts.master_seed = config.master_seed;

    FedSoulEngine engine(model, problem.clients, theta0, fopts);
    const std::string ckpt_path = config.output_dir + "/checkpoint.json";
    int keep = -1;
    if (resume) {
      if (!fs::exists(ckpt_path))
        throw std::runtime_error("resume requested but no checkpoint at " +
                                 ckpt_path);
      const LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
      if (ckpt.config_text != serialize_config(config))
        throw std::runtime_error(
            "resume: config does not match the checkpointed run");
      engine.restore(ckpt.snapshot);
      keep = ckpt.snapshot.round;
    }
    MetricsWriter writer(metrics_path, keep);
    total_bits += writer.kept_bits();

    while (engine.rounds_done() < config.schedules.rounds) {
      const RoundTrace trace = engine.step();
      total_bits += trace.upload_bits;
      RowMetrics m;
      if (lg) {
        m = regression_row(problem, config, trace.theta, trace.theta_avg,
                           fstar);
      } else {
        // Cheap monitor: one plug-in latent per client (current chain state
        // when stateful, the prior mean otherwise).
        const std::vector<ClientRecord>& recs = engine.clients();
        m = classification_row(
            problem, [&](std::size_t) -> const Matrix& { return trace.theta.phi; },
            [&](std::size_t i) {
              return recs[i].chain ? recs[i].chain->z : trace.theta.mu;
            });
      }
      writer.row(trace.round, "fedsoul", config.master_seed,
                 trace.participants.size(), trace.upload_bits, m);
      if (config.checkpoint_every > 0 &&
          trace.round % config.checkpoint_every == 0)
        save_checkpoint(ckpt_path, config, engine.snapshot());
    }
    save_checkpoint(ckpt_path, config, engine.snapshot());
    save_params(params_path, engine.theta(), engine.theta_avg());
    outcome.summary = summarize_fedsoul(config, problem, engine.theta(),
                                        engine.theta_avg(), fstar);
  } else if (config.algorithm == "fedavg") {
    MetricsWriter writer(metrics_path, -1);
    const BaselineOptions bopts = baseline_options(config);
    const FedAvgObserver observer = [&](int round,
                                        const std::vector<int>& active,
                                        const Matrix& phi, const Vector& z,
                                        std::int64_t bits) {
      total_bits += bits;
      RowMetrics m;
      if (lg) {
        m.pad = principal_angle_distance(phi, problem.truth->phi);
        const std::vector<Vector> est(problem.clients.size(), z);
        m.z_raw = z_error(est, problem.truth->z);
        m.z_aligned = z_error_aligned(est, problem.truth->z);
      } else {
        m = classification_row(
            problem, [&](std::size_t) -> const Matrix& { return phi; },
            [&](std::size_t) { return z; });
      }
      writer.row(round, "fedavg", config.master_seed, active.size(), bits, m);
    };
    const FedAvgResult res =
        run_fedavg(model, problem.clients, theta0.phi,
                   Vector::Zero(model.latent_dim()), bopts, observer);
    GlobalParams final_params;
    final_params.phi = res.phi;
    final_params.mu = res.z_shared;
    final_params.sigma = config.schedules.sigma_min;
    save_params(params_path, final_params, final_params);
    outcome.summary = summarize_pointwise(
        config, problem,
        [&](std::size_t) -> const Matrix& { return res.phi; },
        [&](std::size_t) { return res.z_shared; });
  } else if (config.algorithm == "fedrep") {
    MetricsWriter writer(metrics_path, -1);
    const BaselineOptions bopts = baseline_options(config);
    const FedRepObserver observer =
        [&](int round, const std::vector<int>& active, const Matrix& phi,
            const std::vector<Vector>& heads, std::int64_t bits) {
          total_bits += bits;
          RowMetrics m;
          if (lg) {
            m.pad = principal_angle_distance(phi, problem.truth->phi);
            m.z_raw = z_error(heads, problem.truth->z);
            m.z_aligned = z_error_aligned(heads, problem.truth->z);
          } else {
            m = classification_row(
                problem, [&](std::size_t) -> const Matrix& { return phi; },
                [&](std::size_t i) { return heads[i]; });
          }
          writer.row(round, "fedrep", config.master_seed, active.size(), bits,
                     m);
        };
    FedRepResult res =
        run_fedrep(model, problem.clients, theta0.phi, bopts, observer);
    // Final heads refit at the final representation, for every client.
    for (std::size_t i = 0; i < problem.clients.size(); ++i)
      res.z_by_client[i] = fedrep_head_fit(model, problem.clients[i].data,
                                           res.phi, res.z_by_client[i], bopts);
    GlobalParams final_params;
    final_params.phi = res.phi;
    final_params.mu = Vector::Zero(model.latent_dim());
    final_params.sigma = config.schedules.sigma_max;
    save_params(params_path, final_params, final_params);
    outcome.summary = summarize_pointwise(
        config, problem,
        [&](std::size_t) -> const Matrix& { return res.phi; },
        [&](std::size_t i) { return res.z_by_client[i]; });
  } else if (config.algorithm == "local_only") {
    MetricsWriter writer(metrics_path, -1);
    const BaselineOptions bopts = baseline_options(config);
    const LocalOnlyObserver observer = [&](int round,
                                           const std::vector<Matrix>& phis,
                                           const std::vector<Vector>& zs) {
      RowMetrics m;
      if (lg) {
        double pad_sum = 0.0;
        for (const Matrix& phi : phis)
          pad_sum += principal_angle_distance(phi, problem.truth->phi);
        m.pad = pad_sum / static_cast<double>(phis.size());
        m.z_raw = z_error(zs, problem.truth->z);
        m.z_aligned = z_error_aligned(zs, problem.truth->z);
      } else {
        m = classification_row(
            problem,
            [&](std::size_t i) -> const Matrix& { return phis[i]; },
            [&](std::size_t i) { return zs[i]; });
      }
      writer.row(round, "local_only", config.master_seed,
                 problem.clients.size(), 0, m);
    };
    const LocalOnlyResult res =
        run_local_only(model, problem.clients, theta0.phi, bopts, observer);
    save_client_params(config.output_dir + "/client_params.json",
                       res.phi_by_client, res.z_by_client);
    outcome.summary = summarize_pointwise(
        config, problem,
        [&](std::size_t i) -> const Matrix& { return res.phi_by_client[i]; },
        [&](std::size_t i) { return res.z_by_client[i]; });
  } else {  // centralized
    const CentralizedResult res =
        centralized_map(problem.clients, theta0, centralized_options(config));
    MetricsWriter writer(metrics_path, -1);
    RowMetrics m =
        regression_row(problem, config, res.theta, res.theta, std::nullopt);
    writer.row(0, "centralized", config.master_seed, problem.clients.size(),
               0, m);
    save_params(params_path, res.theta, res.theta);
    outcome.summary = summarize_centralized(config, problem, res.theta);
    outcome.summary["iterations"] = static_cast<double>(res.iterations);
    outcome.summary["converged"] = res.converged ? 1.0 : 0.0;
    outcome.summary["grad_norm"] = res.grad_norm;
  }

  outcome.summary["master_seed"] = static_cast<double>(config.master_seed);
  outcome.summary["rounds"] = static_cast<double>(config.schedules.rounds);
  outcome.summary["payload_bits_total"] = static_cast<double>(total_bits);
  if (fstar) outcome.summary["reference_objective"] = *fstar;
  write_summary(config.output_dir, config.algorithm, outcome.summary,
                "summary.json");
  return outcome;
}

std::string generate_dataset(const ExperimentConfig& config,
                             const std::string& out_path) {
  validate_config(config);
  std::string path = out_path;
  if (path.empty()) path = config.dataset_file;
  if (path.empty()) path = config.output_dir + "/dataset.json";
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  if (is_linear_gaussian(config)) {
    SyntheticSpec spec;
    spec.feature_dim = config.feature_dim;
    spec.latent_dim = config.latent_dim;
    spec.num_clients = config.num_clients;
    spec.fraction_small = config.fraction_small;
    spec.n_small = config.n_small;
    spec.n_large = config.n_large;
    spec.noise_var = config.noise_var;
    save_synthetic(path, generate_synthetic(spec, config.effective_data_seed()));
  } else {
    MixtureSpec spec;
    spec.num_clients = config.num_clients;
    spec.n_train = config.n_train;
    spec.n_eval = config.n_eval;
    spec.anchor_sep = config.anchor_sep;
    spec.client_spread = config.client_spread;
    spec.within_sd = config.within_sd;
    spec.ood_shift = config.ood_shift;
    save_mixture(path, generate_mixture(spec, config.effective_data_seed()));
  }
  return path;
}

std::map<std::string, double> evaluate_run(const std::string& run_dir) {
  const ExperimentConfig config = load_config(run_dir + "/config.ini");
  Problem problem = build_problem(config);
  const Model& model = *problem.model;

  std::optional<double> fstar;
  if (config.objective_gap && config.algorithm != "centralized" &&
      is_linear_gaussian(config))
    fstar = centralized_map(problem.clients, initial_theta(config, model),
                            centralized_options(config))
                .objective;

  std::map<std::string, double> result;
  if (config.algorithm == "fedsoul") {
    const LoadedParams lp = load_params(run_dir + "/theta_final.json");
    result =
        summarize_fedsoul(config, problem, lp.theta, lp.theta_avg, fstar);
  } else if (config.algorithm == "fedavg") {
    const LoadedParams lp = load_params(run_dir + "/theta_final.json");
    result = summarize_pointwise(
        config, problem,
        [&](std::size_t) -> const Matrix& { return lp.theta.phi; },
        [&](std::size_t) { return lp.theta.mu; });
  } else if (config.algorithm == "fedrep") {
    const LoadedParams lp = load_params(run_dir + "/theta_final.json");
    const BaselineOptions bopts = baseline_options(config);
    std::vector<Vector> heads;
    heads.reserve(problem.clients.size());
    for (const ClientRecord& c : problem.clients)
      heads.push_back(fedrep_head_fit(model, c.data, lp.theta.phi,
                                      Vector::Zero(model.latent_dim()),
                                      bopts));
    result = summarize_pointwise(
        config, problem,
        [&](std::size_t) -> const Matrix& { return lp.theta.phi; },
        [&](std::size_t i) { return heads[i]; });
  } else if (config.algorithm == "local_only") {
    const LoadedClientParams lp =
        load_client_params(run_dir + "/client_params.json");
    if (lp.phi.size() != problem.clients.size())
      throw std::runtime_error("evaluate: stored client count differs");
    result = summarize_pointwise(
        config, problem,
        [&](std::size_t i) -> const Matrix& { return lp.phi[i]; },
        [&](std::size_t i) { return lp.z[i]; });
  } else {  // centralized
    const LoadedParams lp = load_params(run_dir + "/theta_final.json");
    result = summarize_centralized(config, problem, lp.theta);
  }
  write_summary(run_dir, config.algorithm, result, "evaluation.json");
  return result;
}

int compare_runs(const std::vector<std::string>& run_dirs, std::ostream& out) {
  // Metric columns of metrics.csv, in emission order; +1 means higher wins,
  // -1 lower wins, 0 means no natural direction (no winner flagged).
  struct MetricCol {
    const char* name;
    int col;
    int direction;
  };
  static const MetricCol kCols[] = {
      {"pad", 5, -1},           {"z_error_raw", 6, -1},
      {"z_error_aligned", 7, -1}, {"objective_gap", 8, -1},
      {"accuracy", 9, +1},      {"ece", 10, -1},
      {"entropy_in", 11, 0},    {"entropy_ood", 12, 0},
  };

  struct Entry {
    std::string label;
    std::string algorithm;
    std::uint64_t data_seed = 0;
    std::map<long, std::vector<std::string>> rows;  // round -> metric fields
  };
  std::vector<Entry> entries;
  std::set<long> rounds;
  for (const std::string& dir : run_dirs) {
    Entry e;
    std::string base = std::filesystem::path(dir).filename().string();
    if (base.empty())
      base = std::filesystem::path(dir).parent_path().filename().string();
    e.label = base.empty() ? dir : base;
    for (const Entry& prev : entries)
      if (prev.label == e.label) e.label += "_" + std::to_string(entries.size());

    std::ifstream cfg_in(dir + "/config.ini");
    if (!cfg_in)
      throw std::runtime_error("compare: cannot open " + dir + "/config.ini");
    std::stringstream cfg_text;
    cfg_text << cfg_in.rdbuf();
    const ExperimentConfig cfg = parse_config(cfg_text.str());
    e.algorithm = cfg.algorithm;
    e.data_seed = cfg.effective_data_seed();

    std::ifstream in(dir + "/metrics.csv");
    if (!in)
      throw std::runtime_error("compare: cannot open " + dir + "/metrics.csv");
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
      if (first) {
        first = false;
        continue;
      }
      if (line.empty()) continue;
      std::vector<std::string> fields = split_csv(line);
      if (fields.size() < 13)
        throw std::runtime_error("compare: malformed metrics row in " + dir);
      const long round = std::stol(fields[0]);
      std::vector<std::string> metrics(std::size(kCols));
      for (std::size_t m = 0; m < std::size(kCols); ++m)
        metrics[m] = fields[static_cast<std::size_t>(kCols[m].col)];
      rounds.insert(round);
      e.rows[round] = std::move(metrics);
    }
    entries.push_back(std::move(e));
  }
  if (entries.empty()) throw std::runtime_error("compare: no runs given");
  for (const Entry& e : entries)
    if (e.data_seed != entries.front().data_seed)
      throw std::runtime_error(
          "compare: runs use different data seeds (" + entries.front().label +
          " vs " + e.label + "); comparisons must be paired");

  out << "round";
  for (std::size_t m = 0; m < std::size(kCols); ++m)
    for (const Entry& e : entries) out << ',' << kCols[m].name << ':' << e.label;
  out << "\n";
  for (long round : rounds) {
    out << round;
    for (std::size_t m = 0; m < std::size(kCols); ++m)
      for (const Entry& e : entries) {
        const auto it = e.rows.find(round);
        out << ',' << (it == e.rows.end() ? "NA" : it->second[m]);
      }
    out << "\n";
  }

  // Winner flags at each run's final round (directional metrics only).
  for (std::size_t m = 0; m < std::size(kCols); ++m) {
    if (kCols[m].direction == 0) continue;
    std::string best_label;
    double best = 0.0;
    int contenders = 0;
    for (const Entry& e : entries) {
      if (e.rows.empty()) continue;
      const std::string& cell = e.rows.rbegin()->second[m];
      if (cell == "NA") continue;
      const double value = std::stod(cell);
      ++contenders;
      const bool better = best_label.empty() ||
                          (kCols[m].direction < 0 ? value < best : value > best);
      if (better) {
        best = value;
        best_label = e.label;
      }
    }
    if (contenders >= 2)
      out << "# winner " << kCols[m].name << ": " << best_label << " ("
          << fmt_num(best) << ")\n";
  }
  return static_cast<int>(entries.size());
}

UncertaintyEval evaluate_uncertainty(const Problem& problem,
                                     const GlobalParams& theta,
                                     const ExperimentConfig& config) {
  if (problem.test.empty() || problem.ood.empty())
    throw std::runtime_error(
        "evaluate_uncertainty: the task has no held-out evaluation sets");
  const Model& model = *problem.model;
  const double gamma = config.uq_gamma.value_or(config.schedules.gamma0);

  UncertaintyEval out;
  std::vector<Vector> pooled_probs, pooled_ood;
  std::vector<int> pooled_labels;
  for (std::size_t i = 0; i < problem.clients.size(); ++i) {
    const ClientRecord& client = problem.clients[i];
    Rng rng = derive_stream(config.master_seed, StreamKind::Uq,
                            static_cast<std::uint64_t>(client.id), 0);
    const std::vector<Vector> samples =
        local_uq(model, client.data, theta, config.uq_samples,
                 config.uq_burn_in, gamma, rng);

    const auto posterior_probs = [&](const ClientDataset& set) {
      std::vector<Vector> probs;
      probs.reserve(static_cast<std::size_t>(set.n()));
      for (Eigen::Index row = 0; row < set.n(); ++row) {
        const Vector x = set.features.row(row).transpose();
        Vector mean;
        for (const Vector& z : samples) {
          const Vector p = model.predict(theta.phi, z, x).class_probs;
          if (mean.size() == 0)
            mean = p;
          else
            mean += p;
        }
        probs.push_back(mean / static_cast<double>(samples.size()));
      }
      return probs;
    };

    const std::vector<Vector> test_probs = posterior_probs(problem.test[i]);
    const std::vector<Vector> ood_probs = posterior_probs(problem.ood[i]);
    out.client_ids.push_back(client.id);
    out.client_curves.push_back(expected_calibration_error(
        test_probs, problem.test[i].labels, 10));
    pooled_probs.insert(pooled_probs.end(), test_probs.begin(),
                        test_probs.end());
    pooled_ood.insert(pooled_ood.end(), ood_probs.begin(), ood_probs.end());
    pooled_labels.insert(pooled_labels.end(), problem.test[i].labels.begin(),
                         problem.test[i].labels.end());
  }
  out.pooled_curve =
      expected_calibration_error(pooled_probs, pooled_labels, 10);
  out.ece_pooled = out.pooled_curve.ece;
  out.accuracy = pooled_accuracy(pooled_probs, pooled_labels);
  out.entropy_in = mean_entropy(pooled_probs);
  out.entropy_ood = mean_entropy(pooled_ood);
  out.separation = out.entropy_ood - out.entropy_in;
  return out;
}

RunOutcome run_uq_study(const ExperimentConfig& config) {
  if (config.model_kind != "softmax")
    throw std::runtime_error(
        "config: the uncertainty study runs on the softmax mixture task");
  RunOutcome outcome = run_experiment(config, false);
  const LoadedParams lp =
      load_params(config.output_dir + "/theta_final.json");
  Problem problem = build_problem(config);
  const UncertaintyEval uq =
      evaluate_uncertainty(problem, lp.theta_avg, config);

  write_reliability_csv(config.output_dir + "/reliability_pooled.csv",
                        uq.pooled_curve);
  for (std::size_t i = 0; i < uq.client_ids.size(); ++i)
    write_reliability_csv(config.output_dir + "/reliability_client_" +
                              std::to_string(uq.client_ids[i]) + ".csv",
                          uq.client_curves[i]);

  std::map<std::string, double> metrics;
  metrics["accuracy"] = uq.accuracy;
  metrics["ece_pooled"] = uq.ece_pooled;
  metrics["entropy_in"] = uq.entropy_in;
  metrics["entropy_ood"] = uq.entropy_ood;
  metrics["entropy_separation"] = uq.separation;
  write_summary(config.output_dir, config.algorithm, metrics,
                "uq_summary.json");
  for (const auto& [key, value] : metrics)
    outcome.summary["uq_" + key] = value;
  return outcome;
}

}  // namespace fedpop
