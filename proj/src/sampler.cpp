#include "fedpop/sampler.hpp"

#include <cmath>

namespace fedpop {

Vector ula_step(const Vector& z, double gamma, const Drift& drift, Rng& rng) {
  if (gamma <= 0.0) throw std::invalid_argument("ula_step: gamma must be positive");
  const Vector noise = rng.normal_vector(z.size());
  return z + gamma * drift(z) + std::sqrt(2.0 * gamma) * noise;
}

ChainRun run_ula(const ChainState& start, int steps, double gamma,
                 const Drift& drift, Rng& rng, double blowup) {
  if (steps < 0) throw std::invalid_argument("run_ula: steps must be >= 0");
  ChainRun run;
  run.samples.reserve(static_cast<std::size_t>(steps));
  run.state = start;
  for (int m = 0; m < steps; ++m) {
    run.state.z = ula_step(run.state.z, gamma, drift, rng);
    run.state.steps += 1;
    if (!run.state.z.allFinite() || run.state.z.norm() > blowup)
      throw ChainDivergence(m + 1, run.state.z);
    run.samples.push_back(run.state.z);
  }
  return run;
}

std::vector<Vector> exact_gaussian_samples(const ClientDataset& data,
                                           const GlobalParams& theta,
                                           int count, Rng& rng) {
  if (count < 0)
    throw std::invalid_argument("exact_gaussian_samples: count must be >= 0");
  const MarginalResult m = marginal_oracle(data, theta);
  const Eigen::LLT<Matrix> llt(m.post_cov);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error(
        "exact_gaussian_samples: posterior covariance not positive definite");
  const Matrix root = llt.matrixL();
  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i)
    out.push_back(m.post_mean + root * rng.normal_vector(m.post_mean.size()));
  return out;
}

Matrix ula_stationary_cov(const Matrix& precision, double gamma) {
  if (precision.rows() != precision.cols())
    throw std::invalid_argument("ula_stationary_cov: precision must be square");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(precision);
  if (eig.info() != Eigen::Success)
    throw std::runtime_error("ula_stationary_cov: eigendecomposition failed");
  const Vector lambda = eig.eigenvalues();
  if (lambda.minCoeff() <= 0.0)
    throw std::invalid_argument(
        "ula_stationary_cov: precision must be positive definite");
  if (gamma <= 0.0 || gamma >= 2.0 / lambda.maxCoeff())
    throw std::invalid_argument(
        "ula_stationary_cov: need 0 < gamma < 2 / lambda_max");
  Vector scale(lambda.size());
  for (Eigen::Index i = 0; i < lambda.size(); ++i)
    scale[i] = 1.0 / (lambda[i] * (1.0 - gamma * lambda[i] / 2.0));
  return eig.eigenvectors() * scale.asDiagonal() *
         eig.eigenvectors().transpose();
}

}  // namespace fedpop
