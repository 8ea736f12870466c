#include "fedpop/compression.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fedpop {

Vector compress(const CompressorSpec& spec, const Vector& v, Rng& rng) {
  if (!v.allFinite())
    throw std::invalid_argument("compress: non-finite input");
  if (spec.kind == CompressorKind::Identity) return v;
  const int s = spec.levels;
  if (s < 1)
    throw std::invalid_argument("compress: levels must be >= 1");
  const double norm = v.norm();
  if (norm == 0.0) return Vector::Zero(v.size());
  Vector out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double u = std::abs(v[i]) / norm;  // in [0, 1]
    double level = std::floor(u * s);
    if (level >= s) level = s - 1;  // u == 1 exactly
    const double frac = u * s - level;
    if (rng.uniform() < frac) level += 1.0;
    const double sign = v[i] < 0.0 ? -1.0 : 1.0;
    out[i] = norm * sign * (level / s);
  }
  return out;
}

double compression_variance_bound(const CompressorSpec& spec,
                                  Eigen::Index dim) {
  if (spec.kind == CompressorKind::Identity) return 0.0;
  const double d = static_cast<double>(dim);
  const double s = static_cast<double>(spec.levels);
  return std::min(d / (s * s), std::sqrt(d) / s);
}

std::int64_t payload_bits(const CompressorSpec& spec, Eigen::Index dim) {
  if (spec.kind == CompressorKind::Identity) return 32 * dim;
  // one norm scalar plus ceil(log2(s+1)) bits per coordinate for sign+level
  const double bits_per_coord =
      std::ceil(std::log2(static_cast<double>(spec.levels) + 1.0));
  return static_cast<std::int64_t>(bits_per_coord) * dim + 32;
}

}  // namespace fedpop
