#include "fedpop/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fedpop {

namespace {

Matrix orthonormal_columns(int rows, int cols, Rng& rng) {
  Matrix g(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Matrix> qr(g);
  return qr.householderQ() * Matrix::Identity(rows, cols);
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec,
                                 std::uint64_t data_seed) {
  if (spec.num_clients < 1 || spec.feature_dim < 1 || spec.latent_dim < 1)
    throw std::invalid_argument("generate_synthetic: dimensions must be >= 1");
  if (spec.latent_dim > spec.feature_dim)
    throw std::invalid_argument(
        "generate_synthetic: latent_dim cannot exceed feature_dim");
  if (spec.fraction_small < 0.0 || spec.fraction_small > 1.0)
    throw std::invalid_argument(
        "generate_synthetic: fraction_small outside [0, 1]");
  if (spec.noise_var <= 0.0)
    throw std::invalid_argument("generate_synthetic: noise_var must be > 0");

  Rng global = derive_stream(data_seed, StreamKind::DataGen, 0, 0);

  SyntheticData out;
  out.truth.phi =
      orthonormal_columns(spec.feature_dim, spec.latent_dim, global);
  out.truth.noise_var = spec.noise_var;

  const int b = spec.num_clients;
  const int n_small_clients =
      static_cast<int>(std::ceil(spec.fraction_small * b));
  std::vector<int> sizes(static_cast<std::size_t>(b), spec.n_large);
  for (int i = 0; i < n_small_clients && i < b; ++i)
    sizes[static_cast<std::size_t>(i)] = spec.n_small;
  shuffle(sizes, global);

  const double noise_sd = std::sqrt(spec.noise_var);
  for (int id = 0; id < b; ++id) {
    Rng rng = derive_stream(data_seed, StreamKind::DataGen,
                            static_cast<std::uint64_t>(id), 1);
    const Vector z = rng.normal_vector(spec.latent_dim);
    const int n = sizes[static_cast<std::size_t>(id)];
    ClientDataset data;
    data.features = Matrix(n, spec.feature_dim);
    data.targets = Vector(n);
    data.noise_var = spec.noise_var;
    for (int row = 0; row < n; ++row) {
      const Vector x = rng.normal_vector(spec.feature_dim);
      data.features.row(row) = x.transpose();
      data.targets[row] = x.dot(out.truth.phi * z) + noise_sd * rng.normal();
    }
    out.truth.z.push_back(z);
    out.clients.push_back({id, std::move(data), 1.0, std::nullopt});
  }
  return out;
}

MixtureData generate_mixture(const MixtureSpec& spec, std::uint64_t data_seed) {
  if (spec.num_clients < 1 || spec.n_train < 1 || spec.n_eval < 1)
    throw std::invalid_argument("generate_mixture: sizes must be >= 1");

  const Vector anchor0 = (Vector(2) << -spec.anchor_sep / 2.0, 0.0).finished();
  const Vector anchor1 = (Vector(2) << spec.anchor_sep / 2.0, 0.0).finished();
  const Vector ood_offset = (Vector(2) << 0.0, spec.ood_shift).finished();

  MixtureData out;
  for (int id = 0; id < spec.num_clients; ++id) {
    Rng rng = derive_stream(data_seed, StreamKind::DataGen,
                            static_cast<std::uint64_t>(id), 2);
    std::vector<Vector> means = {anchor0 + spec.client_spread * rng.normal_vector(2),
                                 anchor1 + spec.client_spread * rng.normal_vector(2)};

    const auto draw = [&](int n, const Vector& offset) {
      ClientDataset data;
      data.features = Matrix(n, 2);
      data.labels.resize(static_cast<std::size_t>(n));
      for (int row = 0; row < n; ++row) {
        const int label = rng.uniform() < 0.5 ? 0 : 1;
        const Vector x = means[static_cast<std::size_t>(label)] +
                         spec.within_sd * rng.normal_vector(2) + offset;
        data.features.row(row) = x.transpose();
        data.labels[static_cast<std::size_t>(row)] = label;
      }
      return data;
    };

    const Vector no_shift = Vector::Zero(2);
    out.clients.push_back({id, draw(spec.n_train, no_shift), 1.0, std::nullopt});
    out.test.push_back(draw(spec.n_eval, no_shift));
    out.ood.push_back(draw(spec.n_eval, ood_offset));
  }
  return out;
}

TrainTestSplit split_dataset(const ClientDataset& data, std::uint64_t seed,
                             double train_fraction) {
  const Eigen::Index n = data.n();
  if (n < 2)
    throw std::invalid_argument("split_dataset: need at least two rows");
  if (train_fraction <= 0.0 || train_fraction >= 1.0)
    throw std::invalid_argument("split_dataset: fraction must be in (0, 1)");

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng = derive_stream(seed, StreamKind::DataGen, 0, 3);
  shuffle(order, rng);

  Eigen::Index train_n = static_cast<Eigen::Index>(
      std::llround(train_fraction * static_cast<double>(n)));
  train_n = std::clamp<Eigen::Index>(train_n, 1, n - 1);

  const auto take = [&](Eigen::Index from, Eigen::Index count) {
    ClientDataset part;
    part.features = Matrix(count, data.features.cols());
    part.noise_var = data.noise_var;
    const bool classify = !data.labels.empty();
    if (classify)
      part.labels.resize(static_cast<std::size_t>(count));
    else
      part.targets = Vector(count);
    for (Eigen::Index i = 0; i < count; ++i) {
      const Eigen::Index src = order[static_cast<std::size_t>(from + i)];
      part.features.row(i) = data.features.row(src);
      if (classify)
        part.labels[static_cast<std::size_t>(i)] =
            data.labels[static_cast<std::size_t>(src)];
      else
        part.targets[i] = data.targets[src];
    }
    return part;
  };

  TrainTestSplit split;
  split.train = take(0, train_n);
  split.test = take(train_n, n - train_n);
  return split;
}

}  // namespace fedpop
