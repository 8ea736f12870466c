#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include <Eigen/Dense>

namespace fedpop {

// Counter-style random streams. Every consumer derives its own short-lived
// stream from (master_seed, kind, id, round), so serial and OpenMP execution
// see identical draws and resumption needs no saved generator state beyond
// the master seed and the round index.
enum class StreamKind : std::uint64_t {
  DataGen = 1,
  Participation = 2,
  Chain = 3,
  Compression = 4,
  Prediction = 5,
  ChainInit = 6,
  Uq = 7,
  Test = 8,
  ThetaInit = 9,
};

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}
}  // namespace detail

// SplitMix64 generator; statistically solid for simulation use and cheap to
// construct, which matters because we spawn one stream per (client, round).
class Rng {
 public:
  using result_type = std::uint64_t;

  Rng() : state_(0) {}
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<std::uint64_t>::max();
  }

  result_type operator()() { return detail::splitmix64(state_); }

  double uniform() {
    // 53-bit mantissa draw in [0, 1)
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
  }

  // Box-Muller without the cached spare, so the stream position is a pure
  // function of the number of draws.
  double normal() {
    const double u1 = static_cast<double>(((*this)() >> 11) + 1) * 0x1.0p-53;
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  Eigen::VectorXd normal_vector(Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  // Unbiased integer in [0, n) via rejection; avoids the implementation-defined
  // behaviour of std::uniform_int_distribution.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = max() - max() % n;
    std::uint64_t x;
    do {
      x = (*this)();
    } while (x >= limit);
    return x % n;
  }

 private:
  std::uint64_t state_;
};

// Key derivation: hash the four components through splitmix so that distinct
// (kind, id, round) triples give statistically independent streams.
inline Rng derive_stream(std::uint64_t master_seed, StreamKind kind,
                         std::uint64_t id = 0, std::uint64_t round = 0) {
  std::uint64_t s = master_seed;
  detail::splitmix64(s);
  s ^= 0x6A09E667F3BCC908ull + static_cast<std::uint64_t>(kind);
  detail::splitmix64(s);
  s ^= 0xBB67AE8584CAA73Bull + id;
  detail::splitmix64(s);
  s ^= 0x3C6EF372FE94F82Bull + round;
  const std::uint64_t final_state = detail::splitmix64(s);
  return Rng(final_state);
}

// Deterministic Fisher-Yates; std::shuffle's permutation order is not pinned
// by the standard.
template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace fedpop
