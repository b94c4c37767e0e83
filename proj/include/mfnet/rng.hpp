#pragma once

#include <cstdint>
#include <cmath>
#include <vector>

#include "mfnet/common.hpp"

namespace mfnet {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// xoshiro256** stream. Self-contained so draws are bit-identical across
/// platforms and standard-library versions.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  /// Independent substream for task `index` under a master seed.
  static RandomStream substream(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t sm = seed ^ (0x9e3779b97f4a7c15ULL * (index + 1));
    return RandomStream(splitmix64(sm));
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Exact Poisson draw via chunked Knuth multiplication (additivity keeps
  /// the per-chunk mean small enough that exp(-mean) does not underflow).
  std::uint64_t poisson(double mean) {
    if (mean < 0.0) throw ConfigError("poisson: negative mean");
    std::uint64_t total = 0;
    while (mean > 25.0) {
      total += poisson_knuth(25.0);
      mean -= 25.0;
    }
    total += poisson_knuth(mean);
    return total;
  }

  /// Draw an index from a categorical law given its cumulative weights
  /// (last entry == 1 up to rounding).
  std::size_t categorical(const std::vector<double>& cumulative) {
    const double u = uniform();
    std::size_t lo = 0, hi = cumulative.size() - 1;
    while (lo < hi) {
      const std::size_t mid = (lo + hi) / 2;
      if (u < cumulative[mid])
        hi = mid;
      else
        lo = mid + 1;
    }
    return lo;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t poisson_knuth(double mean) {
    if (mean <= 0.0) return 0;
    const double limit = std::exp(-mean);
    std::uint64_t k = 0;
    double prod = uniform();
    while (prod > limit) {
      ++k;
      prod *= uniform();
    }
    return k;
  }

  std::uint64_t s_[4];
};

inline std::vector<double> cumulative_weights(const std::vector<double>& w) {
  std::vector<double> c(w.size());
  double run = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    run += w[i];
    c[i] = run;
  }
  if (!c.empty()) c.back() = 1.0;
  return c;
}

}  // namespace mfnet
