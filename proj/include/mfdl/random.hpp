#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace mfdl {

/// splitmix64 finalizer; used to derive independent stream seeds.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Seed for the stream identified by (seed, stream). Streams keyed this way
/// make sharded sampling independent of how work is split across threads.
inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
  return mix64(mix64(seed) ^ mix64(stream + 0x632be59bd9b4e019ULL));
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  return Rng(stream_seed(seed, stream));
}

/// Standard normal draw. Marsaglia polar method, written out so results do
/// not depend on the standard library's normal_distribution.
class NormalSampler {
 public:
  double operator()(Rng& rng) {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = uniform(rng) * 2.0 - 1.0;
      v = uniform(rng) * 2.0 - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  /// Uniform on [0, 1) with 53 random bits.
  static double uniform(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
  }

 private:
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace mfdl
