#include "fedpop/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace fedpop {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw std::runtime_error("config: " + where + ": " + what);
}

double to_double(const std::string& where, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) fail(where, "trailing characters in '" + v + "'");
    return x;
  } catch (const std::runtime_error&) {
    throw;
  } catch (const std::exception&) {
    fail(where, "expected a number, got '" + v + "'");
  }
}

int to_int(const std::string& where, const std::string& v) {
  int out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    fail(where, "expected an integer, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& where, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    fail(where, "expected an unsigned integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& where, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail(where, "expected a boolean, got '" + v + "'");
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig c;
  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, Setter> setters = {
      {".schema_version",
       [&](const std::string& w, const std::string& v) {
         c.schema_version = to_int(w, v);
         if (c.schema_version != 1)
           fail(w, "unsupported schema_version " + v + " (expected 1)");
       }},
      {"experiment.algorithm",
       [&](const std::string&, const std::string& v) { c.algorithm = v; }},
      {"experiment.master_seed",
       [&](const std::string& w, const std::string& v) {
         c.master_seed = to_u64(w, v);
       }},
      {"experiment.data_seed",
       [&](const std::string& w, const std::string& v) {
         c.data_seed = to_u64(w, v);
       }},
      {"experiment.output_dir",
       [&](const std::string&, const std::string& v) { c.output_dir = v; }},
      {"model.kind",
       [&](const std::string&, const std::string& v) { c.model_kind = v; }},
      {"model.feature_dim",
       [&](const std::string& w, const std::string& v) {
         c.feature_dim = to_int(w, v);
       }},
      {"model.latent_dim",
       [&](const std::string& w, const std::string& v) {
         c.latent_dim = to_int(w, v);
       }},
      {"model.num_classes",
       [&](const std::string& w, const std::string& v) {
         c.num_classes = to_int(w, v);
       }},
      {"model.noise_var",
       [&](const std::string& w, const std::string& v) {
         c.noise_var = to_double(w, v);
       }},
      {"data.num_clients",
       [&](const std::string& w, const std::string& v) {
         c.num_clients = to_int(w, v);
       }},
      {"data.fraction_small",
       [&](const std::string& w, const std::string& v) {
         c.fraction_small = to_double(w, v);
       }},
      {"data.n_small",
       [&](const std::string& w, const std::string& v) {
         c.n_small = to_int(w, v);
       }},
      {"data.n_large",
       [&](const std::string& w, const std::string& v) {
         c.n_large = to_int(w, v);
       }},
      {"data.dataset_file",
       [&](const std::string&, const std::string& v) { c.dataset_file = v; }},
      {"data.n_train",
       [&](const std::string& w, const std::string& v) {
         c.n_train = to_int(w, v);
       }},
      {"data.n_eval",
       [&](const std::string& w, const std::string& v) {
         c.n_eval = to_int(w, v);
       }},
      {"data.anchor_sep",
       [&](const std::string& w, const std::string& v) {
         c.anchor_sep = to_double(w, v);
       }},
      {"data.client_spread",
       [&](const std::string& w, const std::string& v) {
         c.client_spread = to_double(w, v);
       }},
      {"data.within_sd",
       [&](const std::string& w, const std::string& v) {
         c.within_sd = to_double(w, v);
       }},
      {"data.ood_shift",
       [&](const std::string& w, const std::string& v) {
         c.ood_shift = to_double(w, v);
       }},
      {"schedules.rounds",
       [&](const std::string& w, const std::string& v) {
         c.schedules.rounds = to_int(w, v);
       }},
      {"schedules.chain_steps",
       [&](const std::string& w, const std::string& v) {
         c.schedules.chain_steps = to_int(w, v);
       }},
      {"schedules.eta0",
       [&](const std::string& w, const std::string& v) {
         c.schedules.eta0 = to_double(w, v);
       }},
      {"schedules.eta_decay",
       [&](const std::string& w, const std::string& v) {
         c.schedules.eta_decay = to_double(w, v);
       }},
      {"schedules.gamma",
       [&](const std::string& w, const std::string& v) {
         c.schedules.gamma0 = to_double(w, v);
       }},
      {"schedules.gamma_decay",
       [&](const std::string& w, const std::string& v) {
         c.schedules.gamma_decay = to_double(w, v);
       }},
      {"schedules.r_theta",
       [&](const std::string& w, const std::string& v) {
         c.schedules.r_theta = to_double(w, v);
       }},
      {"schedules.sigma_min",
       [&](const std::string& w, const std::string& v) {
         c.schedules.sigma_min = to_double(w, v);
       }},
      {"schedules.sigma_max",
       [&](const std::string& w, const std::string& v) {
         c.schedules.sigma_max = to_double(w, v);
       }},
      {"schedules.avg_start_fraction",
       [&](const std::string& w, const std::string& v) {
         c.schedules.avg_start_fraction = to_double(w, v);
       }},
      {"federation.kernel",
       [&](const std::string&, const std::string& v) { c.kernel = v; }},
      {"federation.compressor",
       [&](const std::string&, const std::string& v) { c.compressor = v; }},
      {"federation.quant_levels",
       [&](const std::string& w, const std::string& v) {
         c.quant_levels = to_int(w, v);
       }},
      {"federation.mode",
       [&](const std::string&, const std::string& v) { c.mode = v; }},
      {"federation.participation_prob",
       [&](const std::string& w, const std::string& v) {
         c.participation_prob = to_double(w, v);
       }},
      {"federation.weight_rule",
       [&](const std::string&, const std::string& v) { c.weight_rule = v; }},
      {"federation.hyperprior_lambda",
       [&](const std::string& w, const std::string& v) {
         c.hyperprior_lambda = to_double(w, v);
       }},
      {"federation.execution",
       [&](const std::string&, const std::string& v) { c.execution = v; }},
      {"federation.checkpoint_every",
       [&](const std::string& w, const std::string& v) {
         c.checkpoint_every = to_int(w, v);
       }},
      {"baseline.local_steps",
       [&](const std::string& w, const std::string& v) {
         c.local_steps = to_int(w, v);
       }},
      {"baseline.lr",
       [&](const std::string& w, const std::string& v) {
         c.lr = to_double(w, v);
       }},
      {"init.sigma0",
       [&](const std::string& w, const std::string& v) {
         c.sigma0 = to_double(w, v);
       }},
      {"init.phi_scale",
       [&](const std::string& w, const std::string& v) {
         c.phi_scale = to_double(w, v);
       }},
      {"metrics.objective_gap",
       [&](const std::string& w, const std::string& v) {
         c.objective_gap = to_bool(w, v);
       }},
      {"metrics.uq_samples",
       [&](const std::string& w, const std::string& v) {
         c.uq_samples = to_int(w, v);
       }},
      {"metrics.uq_burn_in",
       [&](const std::string& w, const std::string& v) {
         c.uq_burn_in = to_int(w, v);
       }},
      {"metrics.uq_gamma",
       [&](const std::string& w, const std::string& v) {
         c.uq_gamma = to_double(w, v);
       }},
  };

  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto comment = line.find('#');
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') fail(where, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) fail(where, "empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(where, "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail(where, "empty key");
    const std::string full = section + "." + key;
    const auto it = setters.find(full);
    if (it == setters.end())
      fail(where, "unknown key '" + key + "' in section [" + section + "]");
    it->second("[" + section + "] " + key, value);
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream out;
  out.precision(17);
  out << "schema_version = " << c.schema_version << "\n\n";
  out << "[experiment]\n";
  out << "algorithm = " << c.algorithm << "\n";
  out << "master_seed = " << c.master_seed << "\n";
  if (c.data_seed) out << "data_seed = " << *c.data_seed << "\n";
  out << "output_dir = " << c.output_dir << "\n\n";
  out << "[model]\n";
  out << "kind = " << c.model_kind << "\n";
  out << "feature_dim = " << c.feature_dim << "\n";
  out << "latent_dim = " << c.latent_dim << "\n";
  out << "num_classes = " << c.num_classes << "\n";
  out << "noise_var = " << c.noise_var << "\n\n";
  out << "[data]\n";
  out << "num_clients = " << c.num_clients << "\n";
  out << "fraction_small = " << c.fraction_small << "\n";
  out << "n_small = " << c.n_small << "\n";
  out << "n_large = " << c.n_large << "\n";
  if (!c.dataset_file.empty()) out << "dataset_file = " << c.dataset_file << "\n";
  out << "n_train = " << c.n_train << "\n";
  out << "n_eval = " << c.n_eval << "\n";
  out << "anchor_sep = " << c.anchor_sep << "\n";
  out << "client_spread = " << c.client_spread << "\n";
  out << "within_sd = " << c.within_sd << "\n";
  out << "ood_shift = " << c.ood_shift << "\n\n";
  out << "[schedules]\n";
  out << "rounds = " << c.schedules.rounds << "\n";
  out << "chain_steps = " << c.schedules.chain_steps << "\n";
  out << "eta0 = " << c.schedules.eta0 << "\n";
  out << "eta_decay = " << c.schedules.eta_decay << "\n";
  out << "gamma = " << c.schedules.gamma0 << "\n";
  out << "gamma_decay = " << c.schedules.gamma_decay << "\n";
  out << "r_theta = " << c.schedules.r_theta << "\n";
  out << "sigma_min = " << c.schedules.sigma_min << "\n";
  out << "sigma_max = " << c.schedules.sigma_max << "\n";
  out << "avg_start_fraction = " << c.schedules.avg_start_fraction << "\n\n";
  out << "[federation]\n";
  out << "kernel = " << c.kernel << "\n";
  out << "compressor = " << c.compressor << "\n";
  out << "quant_levels = " << c.quant_levels << "\n";
  out << "mode = " << c.mode << "\n";
  out << "participation_prob = " << c.participation_prob << "\n";
  out << "weight_rule = " << c.weight_rule << "\n";
  out << "hyperprior_lambda = " << c.hyperprior_lambda << "\n";
  out << "execution = " << c.execution << "\n";
  out << "checkpoint_every = " << c.checkpoint_every << "\n\n";
  out << "[baseline]\n";
  out << "local_steps = " << c.local_steps << "\n";
  out << "lr = " << c.lr << "\n\n";
  out << "[init]\n";
  out << "sigma0 = " << c.sigma0 << "\n";
  if (c.phi_scale) out << "phi_scale = " << *c.phi_scale << "\n";
  out << "\n[metrics]\n";
  out << "objective_gap = " << (c.objective_gap ? "true" : "false") << "\n";
  out << "uq_samples = " << c.uq_samples << "\n";
  out << "uq_burn_in = " << c.uq_burn_in << "\n";
  if (c.uq_gamma) out << "uq_gamma = " << *c.uq_gamma << "\n";
  return out.str();
}

namespace {
[[noreturn]] void bad_field(const std::string& field, const std::string& why) {
  throw std::runtime_error("config: " + field + ": " + why);
}
}  // namespace

void validate_config(const ExperimentConfig& c) {
  const auto expect = [](bool ok, const std::string& field,
                         const std::string& why) {
    if (!ok) bad_field(field, why);
  };
  expect(c.algorithm == "fedsoul" || c.algorithm == "fedavg" ||
             c.algorithm == "fedrep" || c.algorithm == "local_only" ||
             c.algorithm == "centralized",
         "[experiment] algorithm", "unknown algorithm '" + c.algorithm + "'");
  expect(c.model_kind == "linear_gaussian" || c.model_kind == "softmax",
         "[model] kind", "unknown model '" + c.model_kind + "'");
  expect(c.feature_dim >= 1, "[model] feature_dim", "must be >= 1");
  expect(c.latent_dim >= 1, "[model] latent_dim", "must be >= 1");
  expect(c.num_classes >= 2, "[model] num_classes", "must be >= 2");
  expect(c.noise_var > 0.0, "[model] noise_var", "must be > 0");
  expect(c.num_clients >= 1, "[data] num_clients", "must be >= 1");
  expect(c.fraction_small >= 0.0 && c.fraction_small <= 1.0,
         "[data] fraction_small", "must lie in [0, 1]");
  expect(c.n_small >= 1 && c.n_large >= 1, "[data] n_small/n_large",
         "must be >= 1");
  expect(c.n_train >= 1 && c.n_eval >= 1, "[data] n_train/n_eval",
         "must be >= 1");
  expect(c.schedules.rounds >= 0, "[schedules] rounds", "must be >= 0");
  expect(c.schedules.chain_steps >= 1, "[schedules] chain_steps",
         "must be >= 1");
  expect(c.schedules.eta0 > 0.0, "[schedules] eta0", "must be > 0");
  expect(c.schedules.eta_decay >= 0.0, "[schedules] eta_decay",
         "must be >= 0");
  expect(c.schedules.gamma0 > 0.0, "[schedules] gamma", "must be > 0");
  expect(c.schedules.gamma_decay >= 0.0, "[schedules] gamma_decay",
         "must be >= 0");
  expect(c.schedules.r_theta > 0.0, "[schedules] r_theta", "must be > 0");
  expect(c.schedules.sigma_min > 0.0, "[schedules] sigma_min", "must be > 0");
  expect(c.schedules.sigma_max >= c.schedules.sigma_min,
         "[schedules] sigma_max", "must be >= sigma_min");
  expect(c.schedules.avg_start_fraction >= 0.0 &&
             c.schedules.avg_start_fraction < 1.0,
         "[schedules] avg_start_fraction", "must lie in [0, 1)");
  parse_kernel(c.kernel);
  parse_compressor(c.compressor);
  parse_mode(c.mode);
  parse_weight_rule(c.weight_rule);
  parse_execution(c.execution);
  expect(c.quant_levels >= 1, "[federation] quant_levels", "must be >= 1");
  expect(c.participation_prob >= 0.0 && c.participation_prob <= 1.0,
         "[federation] participation_prob", "must lie in [0, 1]");
  expect(c.hyperprior_lambda >= 0.0, "[federation] hyperprior_lambda",
         "must be >= 0");
  expect(c.checkpoint_every >= 0, "[federation] checkpoint_every",
         "must be >= 0");
  expect(c.local_steps >= 1, "[baseline] local_steps", "must be >= 1");
  expect(c.lr > 0.0, "[baseline] lr", "must be > 0");
  expect(c.sigma0 >= c.schedules.sigma_min &&
             c.sigma0 <= c.schedules.sigma_max,
         "[init] sigma0", "must lie in [sigma_min, sigma_max]");
  if (c.phi_scale)
    expect(*c.phi_scale > 0.0, "[init] phi_scale", "must be > 0");
  expect(c.uq_samples >= 1, "[metrics] uq_samples", "must be >= 1");
  expect(c.uq_burn_in >= 0, "[metrics] uq_burn_in", "must be >= 0");
  if (c.uq_gamma)
    expect(*c.uq_gamma > 0.0, "[metrics] uq_gamma", "must be > 0");
  if (c.model_kind == "linear_gaussian")
    expect(c.latent_dim <= c.feature_dim, "[model] latent_dim",
           "cannot exceed feature_dim for the linear-Gaussian model");
  if (c.model_kind == "softmax")
    expect(c.feature_dim == 2, "[model] feature_dim",
           "the mixture task generates 2-dimensional inputs");
}

KernelKind parse_kernel(const std::string& name) {
  if (name == "ula") return KernelKind::Ula;
  if (name == "exact_gaussian") return KernelKind::ExactGaussian;
  bad_field("[federation] kernel", "unknown kernel '" + name + "'");
}

CompressorKind parse_compressor(const std::string& name) {
  if (name == "identity") return CompressorKind::Identity;
  if (name == "stochastic_quant") return CompressorKind::StochasticQuant;
  bad_field("[federation] compressor", "unknown compressor '" + name + "'");
}

ChainMode parse_mode(const std::string& name) {
  if (name == "stateful") return ChainMode::Stateful;
  if (name == "stateless") return ChainMode::Stateless;
  bad_field("[federation] mode", "unknown mode '" + name + "'");
}

WeightRule parse_weight_rule(const std::string& name) {
  if (name == "active_fraction") return WeightRule::ActiveFraction;
  if (name == "inverse_prob") return WeightRule::InverseProb;
  bad_field("[federation] weight_rule", "unknown weight rule '" + name + "'");
}

Execution parse_execution(const std::string& name) {
  if (name == "parallel") return Execution::Parallel;
  if (name == "serial") return Execution::Serial;
  bad_field("[federation] execution", "unknown execution mode '" + name + "'");
}

}  // namespace fedpop
