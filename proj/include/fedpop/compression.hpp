#pragma once

#include <cstdint>

#include "fedpop/model.hpp"
#include "fedpop/rng.hpp"

namespace fedpop {

enum class CompressorKind { Identity, StochasticQuant };

struct CompressorSpec {
  CompressorKind kind = CompressorKind::Identity;
  int levels = 1;  // quantisation levels s (StochasticQuant only)
};

// Unbiased compression of an uploaded gradient. StochasticQuant is the
// norm/sign/level scheme: each coordinate is snapped to one of s levels of
// |v_i| / ||v||, randomised so the expectation equals v.
Vector compress(const CompressorSpec& spec, const Vector& v, Rng& rng);

// Worst-case relative variance omega: E||C(v) - v||^2 <= omega ||v||^2.
double compression_variance_bound(const CompressorSpec& spec,
                                  Eigen::Index dim);

// Bits on the wire for one compressed vector of the given length.
std::int64_t payload_bits(const CompressorSpec& spec, Eigen::Index dim);

}  // namespace fedpop
