#pragma once

#include <vector>

#include "fedpop/model.hpp"

namespace fedpop {

// Distance between the column spans of two matrices: spectral norm of
// (I - U1 U1^T) U2 after orthonormalising each input. 0 when the spans
// coincide, 1 when some direction of one is orthogonal to the other.
double principal_angle_distance(const Matrix& a, const Matrix& b);

// Mean Euclidean error between estimated and true client latents.
double z_error(const std::vector<Vector>& estimate,
               const std::vector<Vector>& truth);

// Orthogonal matrix Q minimising sum_i ||Q z_est_i - z_true_i||^2, i.e. the
// Procrustes alignment that absorbs the rotational non-identifiability of
// the representation.
Matrix procrustes_rotation(const std::vector<Vector>& estimate,
                           const std::vector<Vector>& truth);

double z_error_aligned(const std::vector<Vector>& estimate,
                       const std::vector<Vector>& truth);

struct ReliabilityBin {
  double lower = 0.0;        // bin edges on the confidence axis
  double upper = 0.0;
  double mean_confidence = 0.0;
  double mean_accuracy = 0.0;
  int count = 0;
};

struct CalibrationResult {
  double ece = 0.0;
  std::vector<ReliabilityBin> bins;  // always n_bins entries, empty bins too
};

// Expected calibration error with equal-width bins over the max predicted
// probability. probs[i] is a distribution over classes; labels[i] the truth.
CalibrationResult expected_calibration_error(
    const std::vector<Vector>& probs, const std::vector<int>& labels,
    int n_bins = 10);

// Shannon entropy of a predictive distribution, nats; 0 log 0 = 0.
double predictive_entropy(const Vector& probs);

double accuracy(const std::vector<int>& predicted,
                const std::vector<int>& labels);

}  // namespace fedpop
