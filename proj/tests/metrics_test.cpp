#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include <Eigen/SVD>

#include "fedpop/metrics.hpp"
#include "test_support.hpp"

using namespace fedpop;
using namespace testsup;

namespace {

// Independent principal-angle oracle: orthonormalise both, then
// sqrt(1 - sigma_min(U1^T U2)^2).
double pad_oracle(const Matrix& a, const Matrix& b) {
  const Matrix u1 = Eigen::HouseholderQR<Matrix>(a)
                        .householderQ() *
                    Matrix::Identity(a.rows(), a.cols());
  const Matrix u2 = Eigen::HouseholderQR<Matrix>(b)
                        .householderQ() *
                    Matrix::Identity(b.rows(), b.cols());
  Eigen::JacobiSVD<Matrix> svd(u1.transpose() * u2);
  const double smin = svd.singularValues().minCoeff();
  return std::sqrt(std::max(0.0, 1.0 - smin * smin));
}

Matrix rotation2(double angle) {
  Matrix q(2, 2);
  q << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
  return q;
}

double sum_sq_error(const Matrix& q, const std::vector<Vector>& est,
                    const std::vector<Vector>& truth) {
  double total = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i)
    total += (q * est[i] - truth[i]).squaredNorm();
  return total;
}

}  // namespace

TEST_CASE("identical column spans have zero distance") {
  Rng rng = test_rng(60);
  const Matrix a = random_matrix(6, 2, rng);
  Matrix r(2, 2);
  r << 2.0, 1.0, -0.5, 3.0;  // invertible, far from orthogonal
  CHECK(principal_angle_distance(a, a * r) < 1e-10);
  CHECK(principal_angle_distance(a, a) < 1e-12);
}

TEST_CASE("orthogonal spans have distance one") {
  Matrix e1 = Matrix::Zero(2, 1);
  e1(0, 0) = 1.0;
  Matrix e2 = Matrix::Zero(2, 1);
  e2(1, 0) = 1.0;
  CHECK(principal_angle_distance(e1, e2) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("a known rotation angle comes back as its sine") {
  Matrix e1 = Matrix::Zero(2, 1);
  e1(0, 0) = 1.0;
  const double angle = 0.3;
  Matrix rotated(2, 1);
  rotated << std::cos(angle), std::sin(angle);
  CHECK(principal_angle_distance(e1, rotated) ==
        doctest::Approx(std::sin(angle)).epsilon(1e-12));
}

TEST_CASE("distance agrees with the SVD oracle on random pairs") {
  for (int trial = 0; trial < 10; ++trial) {
    Rng rng = test_rng(61, static_cast<std::uint64_t>(trial));
    const Matrix a = random_matrix(20, 2, rng);
    const Matrix b = random_matrix(20, 2, rng);
    CHECK(std::abs(principal_angle_distance(a, b) - pad_oracle(a, b)) < 1e-8);
    // symmetry and invariance to a change of basis on either side
    CHECK(std::abs(principal_angle_distance(a, b) -
                   principal_angle_distance(b, a)) < 1e-10);
    const Matrix r = random_matrix(2, 2, rng) + 3.0 * Matrix::Identity(2, 2);
    CHECK(std::abs(principal_angle_distance(a * r, b) -
                   principal_angle_distance(a, b)) < 1e-9);
  }
}

TEST_CASE("rank-deficient inputs are rejected") {
  Matrix degenerate = Matrix::Zero(4, 2);
  degenerate.col(0).setOnes();
  degenerate.col(1) = 2.0 * degenerate.col(0);
  Rng rng = test_rng(62);
  const Matrix fine = random_matrix(4, 2, rng);
  CHECK_THROWS_AS(principal_angle_distance(degenerate, fine),
                  std::invalid_argument);
  CHECK_THROWS_AS(principal_angle_distance(fine, Matrix::Zero(4, 2)),
                  std::invalid_argument);
}

TEST_CASE("z_error is the mean Euclidean distance") {
  std::vector<Vector> truth{Vector::Zero(2), Vector::Zero(2)};
  std::vector<Vector> est{Vector::Zero(2), Vector::Zero(2)};
  est[0] << 3.0, 4.0;
  CHECK(z_error(est, truth) == doctest::Approx(2.5).epsilon(1e-14));
  CHECK(z_error(truth, truth) == 0.0);

  std::vector<Vector> single{est[0]};
  std::vector<Vector> origin{Vector::Zero(2)};
  CHECK(z_error(single, origin) == doctest::Approx(5.0).epsilon(1e-14));
}

TEST_CASE("Procrustes alignment removes a planted rotation") {
  Rng rng = test_rng(63);
  const Matrix q0 = rotation2(1.1);
  std::vector<Vector> truth, est;
  for (int i = 0; i < 30; ++i) {
    truth.push_back(rng.normal_vector(2));
    est.push_back(q0 * truth.back());
  }
  CHECK(z_error(est, truth) > 0.5);  // raw error sees the rotation
  CHECK(z_error_aligned(est, truth) < 1e-10);

  const Matrix q = procrustes_rotation(est, truth);
  CHECK((q.transpose() * q - Matrix::Identity(2, 2)).norm() < 1e-12);

  // also with a reflection planted
  Matrix flip = Matrix::Identity(2, 2);
  flip(1, 1) = -1.0;
  std::vector<Vector> reflected;
  for (const Vector& t : truth) reflected.push_back(flip * t);
  CHECK(z_error_aligned(reflected, truth) < 1e-10);
}

TEST_CASE("Procrustes solution matches a dense rotation grid") {
  Rng rng = test_rng(64);
  std::vector<Vector> truth, est;
  const Matrix planted = rotation2(0.7);
  for (int i = 0; i < 25; ++i) {
    truth.push_back(rng.normal_vector(2));
    est.push_back(planted * truth.back() + 0.1 * rng.normal_vector(2));
  }
  // The declared objective is the summed squared distance; the SVD solution
  // must beat every orthogonal matrix on a dense grid of them.
  const Matrix q = procrustes_rotation(est, truth);
  const double reported = sum_sq_error(q, est, truth);

  double best = std::numeric_limits<double>::infinity();
  Matrix flip = Matrix::Identity(2, 2);
  flip(1, 1) = -1.0;
  for (int step = 0; step < 14400; ++step) {
    const double angle = 2.0 * M_PI * step / 14400.0;
    best = std::min(best, sum_sq_error(rotation2(angle), est, truth));
    best = std::min(best, sum_sq_error(rotation2(angle) * flip, est, truth));
  }
  CHECK(reported <= best + 1e-9);  // the SVD solution is at least as good
  CHECK(reported >= best - 1e-4);  // and the grid nearly reaches it
}

TEST_CASE("ECE hand examples") {
  // all confident and correct: perfectly calibrated
  std::vector<Vector> sure(4, Vector::Zero(2));
  for (Vector& p : sure) p << 1.0, 0.0;
  std::vector<int> labels{0, 0, 0, 0};
  CHECK(expected_calibration_error(sure, labels).ece ==
        doctest::Approx(0.0).epsilon(1e-14));

  // two examples at confidence 0.8, one correct: |0.5 - 0.8| = 0.3
  std::vector<Vector> pair(2, Vector::Zero(2));
  pair[0] << 0.8, 0.2;
  pair[1] << 0.8, 0.2;
  const CalibrationResult r =
      expected_calibration_error(pair, std::vector<int>{0, 1});
  CHECK(r.ece == doctest::Approx(0.3).epsilon(1e-12));
  REQUIRE(r.bins.size() == 10);
  int total = 0;
  for (const ReliabilityBin& b : r.bins) total += b.count;
  CHECK(total == 2);
  CHECK(r.bins[8].count == 2);  // 0.8 falls in [0.8, 0.9)
  CHECK(r.bins[8].mean_confidence == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(r.bins[8].mean_accuracy == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.bins[8].lower == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(r.bins[8].upper == doctest::Approx(0.9).epsilon(1e-12));
}

TEST_CASE("ECE is permutation invariant and inside [0,1]") {
  Rng rng = test_rng(65);
  std::vector<Vector> probs;
  std::vector<int> labels;
  for (int i = 0; i < 50; ++i) {
    Vector p(3);
    for (int c = 0; c < 3; ++c) p[c] = rng.uniform() + 0.05;
    p /= p.sum();
    probs.push_back(p);
    labels.push_back(static_cast<int>(rng.below(3)));
  }
  const double base = expected_calibration_error(probs, labels).ece;
  CHECK(base >= 0.0);
  CHECK(base <= 1.0);

  std::vector<std::size_t> order(probs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng shuffle_rng = test_rng(66);
  fedpop::shuffle(order, shuffle_rng);
  std::vector<Vector> probs2;
  std::vector<int> labels2;
  for (std::size_t i : order) {
    probs2.push_back(probs[i]);
    labels2.push_back(labels[i]);
  }
  CHECK(expected_calibration_error(probs2, labels2).ece ==
        doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("ECE contract violations") {
  std::vector<Vector> empty;
  CHECK_THROWS_AS(expected_calibration_error(empty, {}), std::invalid_argument);

  std::vector<Vector> bad(1, Vector::Zero(2));
  bad[0] << 0.9, 0.3;  // does not sum to one
  CHECK_THROWS_AS(expected_calibration_error(bad, std::vector<int>{0}),
                  std::invalid_argument);

  std::vector<Vector> fine(1, Vector::Zero(2));
  fine[0] << 0.6, 0.4;
  CHECK_THROWS_AS(expected_calibration_error(fine, std::vector<int>{0}, 0),
                  std::invalid_argument);
}

TEST_CASE("predictive entropy closed forms") {
  Vector onehot = Vector::Zero(4);
  onehot[2] = 1.0;
  CHECK(predictive_entropy(onehot) == doctest::Approx(0.0).epsilon(1e-14));

  const Vector uniform = Vector::Constant(7, 1.0 / 7.0);
  CHECK(predictive_entropy(uniform) ==
        doctest::Approx(std::log(7.0)).epsilon(1e-12));

  Vector skew(3);
  skew << 0.5, 0.25, 0.25;
  CHECK(predictive_entropy(skew) ==
        doctest::Approx(1.0397207708399179).epsilon(1e-13));  // 1.5 ln 2
}

TEST_CASE("entropy of a mixture dominates the mixture of entropies") {
  Rng rng = test_rng(67);
  for (int trial = 0; trial < 20; ++trial) {
    Vector p(4), q(4);
    for (int c = 0; c < 4; ++c) {
      p[c] = rng.uniform() + 0.01;
      q[c] = rng.uniform() + 0.01;
    }
    p /= p.sum();
    q /= q.sum();
    const Vector mix = 0.5 * (p + q);
    CHECK(predictive_entropy(mix) >=
          0.5 * (predictive_entropy(p) + predictive_entropy(q)) - 1e-12);
  }
}

TEST_CASE("accuracy is the fraction of exact matches") {
  const std::vector<int> labels{1, 0, 2, 1};
  CHECK(accuracy(labels, labels) == 1.0);
  CHECK(accuracy({0, 1, 0, 0}, {1, 0, 2, 2}) == 0.0);
  CHECK(accuracy({1, 0, 2, 0}, labels) == doctest::Approx(0.75));
  CHECK_THROWS_AS(accuracy({}, {}), std::invalid_argument);
  CHECK_THROWS_AS(accuracy({1}, {1, 2}), std::invalid_argument);
}
