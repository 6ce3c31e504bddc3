#pragma once

#include "moka/common.hpp"

#include <cmath>
#include <cstdint>

namespace moka {

// Counter-based generator: every draw is a pure function of
// (seed, stream id, counter), so independent streams can be split off a
// single master seed without coordination and the sequence is identical
// across platforms.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id)
      : key_(mix(mix(seed) ^ mix(stream_id * kGamma + 1))) {}

  std::uint64_t next_u64() { return mix(key_ + (++counter_) * kGamma); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + uniform() * (hi - lo); }

  int uniform_int(int n) {  // [0, n)
    return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
  }

  // Standard normal via Box-Muller; one spare cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * 3.14159265358979323846 * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ull;

  // splitmix64 finalizer
  static std::uint64_t mix(std::uint64_t z) {
    z += kGamma;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Stream for a named parameter: the name hash is the stream id, so two runs
// with the same master seed draw identical matrices for identically named
// parameters regardless of construction order.
inline RngStream named_stream(std::uint64_t seed, std::string_view name) {
  return RngStream(seed, fnv1a64(name));
}

// Uniform Kaiming init: entries in [-b, b], b = sqrt(6 / fan_in) with
// fan_in = cols (the input dimension of the projection).
template <typename Scalar>
MatX<Scalar> kaiming_uniform(Index rows, Index cols, RngStream& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(cols));
  MatX<Scalar> m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j)
      m(i, j) = static_cast<Scalar>(rng.uniform(-bound, bound));
  return m;
}

template <typename Scalar>
MatX<Scalar> gaussian_matrix(Index rows, Index cols, double stddev, RngStream& rng) {
  MatX<Scalar> m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j)
      m(i, j) = static_cast<Scalar>(stddev * rng.normal());
  return m;
}

}  // namespace moka
