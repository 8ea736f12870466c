#include "fedpop/model.hpp"

#include <cmath>

namespace fedpop {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}
}  // namespace

// ---------------------------------------------------------------------------
// Linear-Gaussian model

void LinearGaussianModel::check(const ClientDataset& data, const Matrix& phi,
                                const Vector& z) const {
  require(phi.rows() == k_ && phi.cols() == d_,
          "linear_gaussian: phi has wrong shape");
  require(z.size() == d_, "linear_gaussian: z has wrong length");
  require(data.features.cols() == k_,
          "linear_gaussian: feature dimension mismatch");
  require(data.targets.size() == data.features.rows(),
          "linear_gaussian: targets/features length mismatch");
  require(data.noise_var > 0.0, "linear_gaussian: noise_var must be positive");
}

double LinearGaussianModel::loglik(const ClientDataset& data,
                                   const Matrix& phi, const Vector& z) const {
  check(data, phi, z);
  const double tau2 = data.noise_var;
  const Vector r = data.targets - data.features * (phi * z);
  const double n = static_cast<double>(data.n());
  return -0.5 * n * (kLog2Pi + std::log(tau2)) -
         r.squaredNorm() / (2.0 * tau2);
}

LoglikGrad LinearGaussianModel::loglik_grad(const ClientDataset& data,
                                            const Matrix& phi,
                                            const Vector& z) const {
  check(data, phi, z);
  const double tau2 = data.noise_var;
  const Vector r = data.targets - data.features * (phi * z);
  LoglikGrad g;
  g.z = phi.transpose() * (data.features.transpose() * r) / tau2;
  g.phi = (data.features.transpose() * r) * z.transpose() / tau2;
  return g;
}

Prediction LinearGaussianModel::predict(const Matrix& phi, const Vector& z,
                                        const Vector& x) const {
  require(x.size() == k_, "linear_gaussian: input has wrong length");
  Prediction p;
  p.mean = x.dot(phi * z);
  p.var = noise_var_;
  return p;
}

// ---------------------------------------------------------------------------
// Softmax model

void SoftmaxModel::check(const ClientDataset& data, const Matrix& phi,
                         const Vector& z) const {
  require(phi.rows() == k_ && phi.cols() == d_rep_,
          "softmax: phi has wrong shape");
  require(z.size() == latent_dim(), "softmax: z has wrong length");
  require(data.features.cols() == k_, "softmax: feature dimension mismatch");
  require(static_cast<Eigen::Index>(data.labels.size()) ==
              data.features.rows(),
          "softmax: labels/features length mismatch");
}

Vector SoftmaxModel::class_probs(const Matrix& phi, const Vector& z,
                                 const Vector& x) const {
  const Vector rep = phi.transpose() * x;
  Vector logits(classes_);
  for (int c = 0; c < classes_; ++c)
    logits[c] = z.segment(c * d_rep_, d_rep_).dot(rep);
  const double m = logits.maxCoeff();
  Vector p = (logits.array() - m).exp();
  p /= p.sum();
  return p;
}

double SoftmaxModel::loglik(const ClientDataset& data, const Matrix& phi,
                            const Vector& z) const {
  check(data, phi, z);
  double total = 0.0;
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    const int y = data.labels[static_cast<std::size_t>(i)];
    require(y >= 0 && y < classes_, "softmax: label out of range");
    const Vector p = class_probs(phi, z, data.features.row(i).transpose());
    total += std::log(p[y]);
  }
  return total;
}

LoglikGrad SoftmaxModel::loglik_grad(const ClientDataset& data,
                                     const Matrix& phi, const Vector& z) const {
  check(data, phi, z);
  LoglikGrad g;
  g.phi = Matrix::Zero(k_, d_rep_);
  g.z = Vector::Zero(latent_dim());
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    const Vector x = data.features.row(i).transpose();
    const int y = data.labels[static_cast<std::size_t>(i)];
    require(y >= 0 && y < classes_, "softmax: label out of range");
    const Vector rep = phi.transpose() * x;
    const Vector p = class_probs(phi, z, x);
    Vector grad_rep = Vector::Zero(d_rep_);
    for (int c = 0; c < classes_; ++c) {
      const double coeff = (c == y ? 1.0 : 0.0) - p[c];
      g.z.segment(c * d_rep_, d_rep_) += coeff * rep;
      grad_rep += coeff * z.segment(c * d_rep_, d_rep_);
    }
    g.phi += x * grad_rep.transpose();
  }
  return g;
}

Prediction SoftmaxModel::predict(const Matrix& phi, const Vector& z,
                                 const Vector& x) const {
  require(x.size() == k_, "softmax: input has wrong length");
  require(z.size() == latent_dim(), "softmax: z has wrong length");
  Prediction p;
  p.class_probs = class_probs(phi, z, x);
  return p;
}

// ---------------------------------------------------------------------------
// Prior

double prior_logdensity(const Vector& z, const Vector& mu, double sigma) {
  require(z.size() == mu.size(), "prior: z/mu length mismatch");
  require(sigma > 0.0, "prior: sigma must be positive");
  const double d = static_cast<double>(z.size());
  return -0.5 * d * kLog2Pi - d * std::log(sigma) -
         (z - mu).squaredNorm() / (2.0 * sigma * sigma);
}

PriorGrad prior_grad(const Vector& z, const Vector& mu, double sigma) {
  require(z.size() == mu.size(), "prior: z/mu length mismatch");
  require(sigma > 0.0, "prior: sigma must be positive");
  PriorGrad g;
  const Vector delta = z - mu;
  const double s2 = sigma * sigma;
  g.mu = delta / s2;
  g.sigma = -static_cast<double>(z.size()) / sigma +
            delta.squaredNorm() / (s2 * sigma);
  g.z = -delta / s2;
  return g;
}

Vector posterior_grad_z(const Model& model, const ClientDataset& data,
                        const GlobalParams& theta, const Vector& z) {
  const LoglikGrad lg = model.loglik_grad(data, theta.phi, z);
  return lg.z + prior_grad(z, theta.mu, theta.sigma).z;
}

// ---------------------------------------------------------------------------
// Marginal oracle (linear-Gaussian only)

MarginalResult marginal_oracle(const ClientDataset& data,
                               const GlobalParams& theta) {
  const Eigen::Index n = data.n();
  const Eigen::Index d = theta.latent_dim();
  require(theta.phi.cols() == d, "marginal_oracle: phi/mu shape mismatch");
  require(data.features.cols() == theta.phi.rows(),
          "marginal_oracle: feature dimension mismatch");
  require(data.targets.size() == n,
          "marginal_oracle: targets/features length mismatch");
  require(theta.sigma > 0.0, "marginal_oracle: sigma must be positive");
  require(data.noise_var > 0.0, "marginal_oracle: noise_var must be positive");

  const double tau2 = data.noise_var;
  const double s2 = theta.sigma * theta.sigma;
  const Matrix G = data.features * theta.phi;  // n x d

  const Matrix gram = G * G.transpose();
  const Matrix cov_y =
      tau2 * Matrix::Identity(n, n) + s2 * gram;  // marginal covariance of y
  const Eigen::LLT<Matrix> llt(cov_y);
  require(llt.info() == Eigen::Success,
          "marginal_oracle: marginal covariance not positive definite");

  const Vector r = data.targets - G * theta.mu;
  const Vector a = llt.solve(r);  // cov_y^{-1} (y - G mu)
  const Matrix cov_y_inv = llt.solve(Matrix::Identity(n, n));

  double logdet = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    logdet += 2.0 * std::log(llt.matrixL()(i, i));

  MarginalResult out;
  out.logml = -0.5 * (static_cast<double>(n) * kLog2Pi + logdet + r.dot(a));

  out.grad_mu = G.transpose() * a;
  out.grad_sigma = theta.sigma * ((G.transpose() * a).squaredNorm() -
                                  (cov_y_inv * gram).trace());
  // d logml / d G = a (mu)^T + sigma^2 (a a^T - cov_y^{-1}) G, then chain
  // through G = X phi.
  const Matrix grad_G =
      a * theta.mu.transpose() + s2 * (a * a.transpose() - cov_y_inv) * G;
  out.grad_phi = data.features.transpose() * grad_G;

  // Posterior over z: precision = G^T G / tau^2 + I / sigma^2.
  const Matrix prec =
      G.transpose() * G / tau2 + Matrix::Identity(d, d) / s2;
  const Eigen::LLT<Matrix> post_llt(prec);
  require(post_llt.info() == Eigen::Success,
          "marginal_oracle: posterior precision not positive definite");
  out.post_cov = post_llt.solve(Matrix::Identity(d, d));
  out.post_mean =
      post_llt.solve(G.transpose() * data.targets / tau2 + theta.mu / s2);
  return out;
}

// ---------------------------------------------------------------------------

Vector flatten_rowmajor(const Matrix& m) {
  Vector v(m.size());
  Eigen::Index pos = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) v[pos++] = m(i, j);
  return v;
}

Matrix unflatten_rowmajor(const Vector& v, Eigen::Index rows,
                          Eigen::Index cols) {
  require(v.size() == rows * cols, "unflatten: size mismatch");
  Matrix m(rows, cols);
  Eigen::Index pos = 0;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = v[pos++];
  return m;
}

}  // namespace fedpop
