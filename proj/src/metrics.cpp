#include "fedpop/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fedpop {

namespace {

// Orthonormal basis of the column span, rejecting rank-deficient input so a
// collapsed representation cannot masquerade as a nearby subspace.
Matrix orthonormalize(const Matrix& m) {
  Eigen::ColPivHouseholderQR<Matrix> qr(m);
  if (qr.rank() < m.cols())
    throw std::invalid_argument(
        "principal_angle_distance: basis is rank-deficient");
  Matrix q = qr.householderQ() * Matrix::Identity(m.rows(), m.cols());
  return q;
}

Matrix stack(const std::vector<Vector>& vs) {
  if (vs.empty()) throw std::invalid_argument("metrics: empty latent list");
  Matrix m(vs[0].size(), static_cast<Eigen::Index>(vs.size()));
  for (std::size_t i = 0; i < vs.size(); ++i) {
    if (vs[i].size() != m.rows())
      throw std::invalid_argument("metrics: inconsistent latent lengths");
    m.col(static_cast<Eigen::Index>(i)) = vs[i];
  }
  return m;
}

}  // namespace

double principal_angle_distance(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows())
    throw std::invalid_argument(
        "principal_angle_distance: ambient dimensions differ");
  if (a.cols() == 0 || b.cols() == 0)
    throw std::invalid_argument("principal_angle_distance: empty basis");
  const Matrix u1 = orthonormalize(a);
  const Matrix u2 = orthonormalize(b);
  const Matrix residual = u2 - u1 * (u1.transpose() * u2);
  Eigen::JacobiSVD<Matrix> svd(residual);
  return svd.singularValues()[0];
}

double z_error(const std::vector<Vector>& estimate,
               const std::vector<Vector>& truth) {
  if (estimate.size() != truth.size())
    throw std::invalid_argument("z_error: list sizes differ");
  if (estimate.empty()) throw std::invalid_argument("z_error: empty lists");
  double total = 0.0;
  for (std::size_t i = 0; i < estimate.size(); ++i)
    total += (estimate[i] - truth[i]).norm();
  return total / static_cast<double>(estimate.size());
}

Matrix procrustes_rotation(const std::vector<Vector>& estimate,
                           const std::vector<Vector>& truth) {
  const Matrix e = stack(estimate);
  const Matrix t = stack(truth);
  if (e.rows() != t.rows())
    throw std::invalid_argument("procrustes: latent dimensions differ");
  // minimise ||Q E - T||_F over orthogonal Q: Q = U V^T from svd(T E^T)
  Eigen::JacobiSVD<Matrix> svd(t * e.transpose(),
                               Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

double z_error_aligned(const std::vector<Vector>& estimate,
                       const std::vector<Vector>& truth) {
  const Matrix q = procrustes_rotation(estimate, truth);
  std::vector<Vector> rotated;
  rotated.reserve(estimate.size());
  for (const Vector& z : estimate) rotated.push_back(q * z);
  return z_error(rotated, truth);
}

CalibrationResult expected_calibration_error(const std::vector<Vector>& probs,
                                             const std::vector<int>& labels,
                                             int n_bins) {
  if (probs.size() != labels.size())
    throw std::invalid_argument("ece: probs/labels sizes differ");
  if (probs.empty()) throw std::invalid_argument("ece: empty inputs");
  if (n_bins < 1) throw std::invalid_argument("ece: need at least one bin");
  for (const Vector& p : probs) {
    if (p.size() == 0 || p.minCoeff() < -1e-12 ||
        std::abs(p.sum() - 1.0) > 1e-6)
      throw std::invalid_argument("ece: predictions must be distributions");
  }

  CalibrationResult out;
  out.bins.resize(static_cast<std::size_t>(n_bins));
  for (int b = 0; b < n_bins; ++b) {
    out.bins[static_cast<std::size_t>(b)].lower = b / double(n_bins);
    out.bins[static_cast<std::size_t>(b)].upper = (b + 1) / double(n_bins);
  }

  std::vector<double> conf_sum(static_cast<std::size_t>(n_bins), 0.0);
  std::vector<double> acc_sum(static_cast<std::size_t>(n_bins), 0.0);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    Eigen::Index arg = 0;
    const double conf = probs[i].maxCoeff(&arg);
    const int bin = std::min(static_cast<int>(conf * n_bins), n_bins - 1);
    const std::size_t b = static_cast<std::size_t>(bin);
    out.bins[b].count += 1;
    conf_sum[b] += conf;
    acc_sum[b] += (static_cast<int>(arg) == labels[i]) ? 1.0 : 0.0;
  }

  const double n = static_cast<double>(probs.size());
  for (std::size_t b = 0; b < out.bins.size(); ++b) {
    if (out.bins[b].count == 0) continue;
    out.bins[b].mean_confidence = conf_sum[b] / out.bins[b].count;
    out.bins[b].mean_accuracy = acc_sum[b] / out.bins[b].count;
    out.ece += (out.bins[b].count / n) *
               std::abs(out.bins[b].mean_confidence - out.bins[b].mean_accuracy);
  }
  return out;
}

double predictive_entropy(const Vector& probs) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    const double p = probs[i];
    if (p < 0.0 || p > 1.0 + 1e-12)
      throw std::invalid_argument("predictive_entropy: not a probability");
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

double accuracy(const std::vector<int>& predicted,
                const std::vector<int>& labels) {
  if (predicted.size() != labels.size())
    throw std::invalid_argument("accuracy: sizes differ");
  if (predicted.empty()) throw std::invalid_argument("accuracy: empty inputs");
  double hits = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i)
    if (predicted[i] == labels[i]) hits += 1.0;
  return hits / static_cast<double>(predicted.size());
}

}  // namespace fedpop
