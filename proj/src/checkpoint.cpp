#include "fedpop/checkpoint.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace fedpop {

namespace {

using nlohmann::json;

json to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

json to_json(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

Matrix matrix_from(const json& j) {
  if (!j.is_array()) throw std::runtime_error("checkpoint: expected a matrix");
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  if (rows == 0) return Matrix(0, 0);
  const Eigen::Index cols = static_cast<Eigen::Index>(j.at(0).size());
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const json& row = j.at(static_cast<std::size_t>(i));
    if (static_cast<Eigen::Index>(row.size()) != cols)
      throw std::runtime_error("checkpoint: ragged matrix");
    for (Eigen::Index k = 0; k < cols; ++k)
      m(i, k) = row.at(static_cast<std::size_t>(k)).get<double>();
  }
  return m;
}

Vector vector_from(const json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i)
    v[i] = j.at(static_cast<std::size_t>(i)).get<double>();
  return v;
}

json params_to_json(const GlobalParams& theta) {
  return json{{"phi", to_json(theta.phi)},
              {"mu", to_json(theta.mu)},
              {"sigma", theta.sigma}};
}

GlobalParams params_from_json(const json& j) {
  GlobalParams theta;
  theta.phi = matrix_from(j.at("phi"));
  theta.mu = vector_from(j.at("mu"));
  theta.sigma = j.at("sigma").get<double>();
  return theta;
}

// Write-to-temp-then-rename so an interrupted save never corrupts the
// previous checkpoint.
void atomic_write(const std::string& path, const std::string& body) {
  const std::filesystem::path target(path);
  if (target.has_parent_path())
    std::filesystem::create_directories(target.parent_path());
  const std::filesystem::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << body;
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, target);
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  json j;
  in >> j;
  return j;
}

json dataset_to_json(const ClientDataset& d) {
  json out{{"features", to_json(d.features)}, {"noise_var", d.noise_var}};
  if (!d.labels.empty())
    out["labels"] = d.labels;
  else
    out["targets"] = to_json(d.targets);
  return out;
}

ClientDataset dataset_from_json(const json& j) {
  ClientDataset d;
  d.features = matrix_from(j.at("features"));
  d.noise_var = j.at("noise_var").get<double>();
  if (j.contains("labels"))
    d.labels = j.at("labels").get<std::vector<int>>();
  else
    d.targets = vector_from(j.at("targets"));
  return d;
}

}  // namespace

void save_checkpoint(const std::string& path, const ExperimentConfig& config,
                     const FedSoulEngine::Snapshot& snapshot) {
  json chains = json::array();
  for (const ChainState& c : snapshot.chains)
    chains.push_back(json{{"z", to_json(c.z)}, {"steps", c.steps}});
  const json j{{"schema_version", 1},
               {"config", serialize_config(config)},
               {"round", snapshot.round},
               {"theta", params_to_json(snapshot.theta)},
               {"avg_sum", params_to_json(snapshot.avg_sum)},
               {"avg_weight", snapshot.avg_weight},
               {"chains", std::move(chains)}};
  atomic_write(path, j.dump(2) + "\n");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  const json j = read_json(path);
  if (j.at("schema_version").get<int>() != 1)
    throw std::runtime_error("checkpoint: unsupported schema version in " +
                             path);
  LoadedCheckpoint out;
  out.config_text = j.at("config").get<std::string>();
  out.snapshot.round = j.at("round").get<int>();
  out.snapshot.theta = params_from_json(j.at("theta"));
  out.snapshot.avg_sum = params_from_json(j.at("avg_sum"));
  out.snapshot.avg_weight = j.at("avg_weight").get<double>();
  for (const json& c : j.at("chains")) {
    ChainState state;
    state.z = vector_from(c.at("z"));
    state.steps = c.at("steps").get<std::int64_t>();
    out.snapshot.chains.push_back(std::move(state));
  }
  return out;
}

void save_synthetic(const std::string& path, const SyntheticData& data) {
  json clients = json::array();
  for (const ClientRecord& c : data.clients)
    clients.push_back(json{{"id", c.id},
                           {"data", dataset_to_json(c.data)},
                           {"participation_prob", c.participation_prob}});
  json zs = json::array();
  for (const Vector& z : data.truth.z) zs.push_back(to_json(z));
  const json j{{"schema_version", 1},
               {"kind", "synthetic_regression"},
               {"truth",
                json{{"phi", to_json(data.truth.phi)},
                     {"z", std::move(zs)},
                     {"noise_var", data.truth.noise_var}}},
               {"clients", std::move(clients)}};
  atomic_write(path, j.dump(2) + "\n");
}

SyntheticData load_synthetic(const std::string& path) {
  const json j = read_json(path);
  if (j.at("kind").get<std::string>() != "synthetic_regression")
    throw std::runtime_error("dataset: " + path +
                             " is not a synthetic regression file");
  SyntheticData out;
  out.truth.phi = matrix_from(j.at("truth").at("phi"));
  out.truth.noise_var = j.at("truth").at("noise_var").get<double>();
  for (const json& z : j.at("truth").at("z"))
    out.truth.z.push_back(vector_from(z));
  for (const json& c : j.at("clients")) {
    ClientRecord rec;
    rec.id = c.at("id").get<int>();
    rec.data = dataset_from_json(c.at("data"));
    rec.participation_prob = c.at("participation_prob").get<double>();
    out.clients.push_back(std::move(rec));
  }
  return out;
}

void save_mixture(const std::string& path, const MixtureData& data) {
  json clients = json::array();
  for (std::size_t i = 0; i < data.clients.size(); ++i) {
    clients.push_back(
        json{{"id", data.clients[i].id},
             {"train", dataset_to_json(data.clients[i].data)},
             {"test", dataset_to_json(data.test[i])},
             {"ood", dataset_to_json(data.ood[i])},
             {"participation_prob", data.clients[i].participation_prob}});
  }
  const json j{{"schema_version", 1},
               {"kind", "mixture_classification"},
               {"clients", std::move(clients)}};
  atomic_write(path, j.dump(2) + "\n");
}

MixtureData load_mixture(const std::string& path) {
  const json j = read_json(path);
  if (j.at("kind").get<std::string>() != "mixture_classification")
    throw std::runtime_error("dataset: " + path +
                             " is not a mixture classification file");
  MixtureData out;
  for (const json& c : j.at("clients")) {
    ClientRecord rec;
    rec.id = c.at("id").get<int>();
    rec.data = dataset_from_json(c.at("train"));
    rec.participation_prob = c.at("participation_prob").get<double>();
    out.clients.push_back(std::move(rec));
    out.test.push_back(dataset_from_json(c.at("test")));
    out.ood.push_back(dataset_from_json(c.at("ood")));
  }
  return out;
}

void save_params(const std::string& path, const GlobalParams& theta,
                 const GlobalParams& theta_avg) {
  const json j{{"schema_version", 1},
               {"theta", params_to_json(theta)},
               {"theta_avg", params_to_json(theta_avg)}};
  atomic_write(path, j.dump(2) + "\n");
}

LoadedParams load_params(const std::string& path) {
  const json j = read_json(path);
  return {params_from_json(j.at("theta")),
          params_from_json(j.at("theta_avg"))};
}

void save_client_params(const std::string& path,
                        const std::vector<Matrix>& phi,
                        const std::vector<Vector>& z) {
  json entries = json::array();
  for (std::size_t i = 0; i < phi.size(); ++i)
    entries.push_back(json{{"phi", to_json(phi[i])}, {"z", to_json(z[i])}});
  const json j{{"schema_version", 1}, {"clients", std::move(entries)}};
  atomic_write(path, j.dump(2) + "\n");
}

LoadedClientParams load_client_params(const std::string& path) {
  const json j = read_json(path);
  LoadedClientParams out;
  for (const json& e : j.at("clients")) {
    out.phi.push_back(matrix_from(e.at("phi")));
    out.z.push_back(vector_from(e.at("z")));
  }
  return out;
}

}  // namespace fedpop
