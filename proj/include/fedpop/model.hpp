#pragma once

#include <memory>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace fedpop {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Shared representation phi (k x d_rep), population prior N(mu, sigma^2 I)
// over the per-client latent z.
struct GlobalParams {
  Matrix phi;
  Vector mu;
  double sigma = 1.0;

  Eigen::Index latent_dim() const { return mu.size(); }
};

struct ClientDataset {
  Matrix features;          // n x k
  Vector targets;           // regression targets (empty for classification)
  std::vector<int> labels;  // class labels (empty for regression)
  double noise_var = 1.0;   // observation noise for the regression model

  Eigen::Index n() const { return features.rows(); }
};

struct LoglikGrad {
  Matrix phi;  // d loglik / d phi, k x d_rep
  Vector z;    // d loglik / d z
};

struct PriorGrad {
  Vector mu;
  double sigma = 0.0;
  Vector z;  // gradient of log N(z; mu, sigma^2 I) with respect to z
};

struct Prediction {
  double mean = 0.0;      // regression
  double var = 0.0;       // regression
  Vector class_probs;     // classification
};

// A personalised model: likelihood of one client's data given the shared
// representation and that client's latent vector.
class Model {
 public:
  virtual ~Model() = default;

  virtual int feature_dim() const = 0;  // k
  virtual int phi_cols() const = 0;     // columns of phi
  virtual int latent_dim() const = 0;   // length of z
  virtual bool is_classifier() const = 0;

  virtual double loglik(const ClientDataset& data, const Matrix& phi,
                        const Vector& z) const = 0;
  virtual LoglikGrad loglik_grad(const ClientDataset& data, const Matrix& phi,
                                 const Vector& z) const = 0;
  virtual Prediction predict(const Matrix& phi, const Vector& z,
                             const Vector& x) const = 0;
};

// y | x, z ~ N((X phi z), tau^2), tau^2 taken from the dataset.
class LinearGaussianModel : public Model {
 public:
  LinearGaussianModel(int feature_dim, int latent_dim,
                      double predictive_noise_var = 0.1)
      : k_(feature_dim), d_(latent_dim), noise_var_(predictive_noise_var) {}

  int feature_dim() const override { return k_; }
  int phi_cols() const override { return d_; }
  int latent_dim() const override { return d_; }
  bool is_classifier() const override { return false; }

  double loglik(const ClientDataset& data, const Matrix& phi,
                const Vector& z) const override;
  LoglikGrad loglik_grad(const ClientDataset& data, const Matrix& phi,
                         const Vector& z) const override;
  Prediction predict(const Matrix& phi, const Vector& z,
                     const Vector& x) const override;

 private:
  void check(const ClientDataset& data, const Matrix& phi,
             const Vector& z) const;

  int k_;
  int d_;
  double noise_var_;  // used for predictive variance on new inputs
};

// Multiclass logistic head on top of the shared representation: the latent z
// stacks one weight vector per class (row-major: class c occupies
// z[c*d_rep .. (c+1)*d_rep)), logits_c = w_c . (phi^T x).
class SoftmaxModel : public Model {
 public:
  SoftmaxModel(int feature_dim, int rep_dim, int num_classes)
      : k_(feature_dim), d_rep_(rep_dim), classes_(num_classes) {}

  int feature_dim() const override { return k_; }
  int phi_cols() const override { return d_rep_; }
  int latent_dim() const override { return d_rep_ * classes_; }
  int num_classes() const { return classes_; }
  bool is_classifier() const override { return true; }

  double loglik(const ClientDataset& data, const Matrix& phi,
                const Vector& z) const override;
  LoglikGrad loglik_grad(const ClientDataset& data, const Matrix& phi,
                         const Vector& z) const override;
  Prediction predict(const Matrix& phi, const Vector& z,
                     const Vector& x) const override;

 private:
  void check(const ClientDataset& data, const Matrix& phi,
             const Vector& z) const;
  Vector class_probs(const Matrix& phi, const Vector& z,
                     const Vector& x) const;

  int k_;
  int d_rep_;
  int classes_;
};

// Population prior N(mu, sigma^2 I) over z.
double prior_logdensity(const Vector& z, const Vector& mu, double sigma);
PriorGrad prior_grad(const Vector& z, const Vector& mu, double sigma);

// Gradient of log p(z | data, phi, beta) with respect to z: likelihood term
// plus prior term. This is the drift used by the Langevin kernel.
Vector posterior_grad_z(const Model& model, const ClientDataset& data,
                        const GlobalParams& theta, const Vector& z);

// Closed-form marginal quantities for the linear-Gaussian model, used as the
// reference the sampling-based estimators are checked against. With G = X phi:
//   y ~ N(G mu, tau^2 I + sigma^2 G G^T)
struct MarginalResult {
  double logml = 0.0;
  Matrix grad_phi;
  Vector grad_mu;
  double grad_sigma = 0.0;
  Vector post_mean;
  Matrix post_cov;
};

MarginalResult marginal_oracle(const ClientDataset& data,
                               const GlobalParams& theta);

// Row-major flattening used for the uploaded phi-gradient payload.
Vector flatten_rowmajor(const Matrix& m);
Matrix unflatten_rowmajor(const Vector& v, Eigen::Index rows,
                          Eigen::Index cols);

}  // namespace fedpop
