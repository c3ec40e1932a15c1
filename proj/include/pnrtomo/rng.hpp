#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace pnrtomo::rng {

// SplitMix64 step, also used as a 64-bit mixing function
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// small counter-style generator; cheap to construct, so every pulse of a
// simulation gets its own stream keyed by (seed, pulse index) and results do
// not depend on how pulses are split across threads
class Stream {
 public:
  explicit Stream(std::uint64_t state) : state_(state) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    return mix64(state_);
  }

  // uniform on (0,1); never returns an exact endpoint
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Box-Muller, one variate per call
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Poisson sampler: product-of-uniforms for small means, Hormann's
  // transformed rejection (PTRS) for large ones
  long poisson(double lambda) {
    if (lambda < 0.0) throw std::invalid_argument("poisson: negative mean");
    if (lambda == 0.0) return 0;
    if (lambda < 30.0) return poisson_knuth(lambda);
    return poisson_ptrs(lambda);
  }

  // geometric counting distribution f_k = q^k (1-q), k = 0,1,...
  // sampled by inversion of the closed-form CDF
  long geometric_from_mean(double mean) {
    if (mean < 0.0) throw std::invalid_argument("geometric: negative mean");
    if (mean == 0.0) return 0;
    double q = mean / (1.0 + mean);
    double u = uniform();
    return static_cast<long>(std::floor(std::log(u) / std::log(q)));
  }

 private:
  long poisson_knuth(double lambda) {
    double limit = std::exp(-lambda);
    double prod = 1.0;
    long k = -1;
    do {
      prod *= uniform();
      ++k;
    } while (prod > limit);
    return k;
  }

  long poisson_ptrs(double lambda) {
    const double slam = std::sqrt(lambda);
    const double loglam = std::log(lambda);
    const double b = 0.931 + 2.53 * slam;
    const double a = -0.059 + 0.02483 * b;
    const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    const double v_r = 0.9277 - 3.6224 / (b - 2.0);
    for (;;) {
      double u = uniform() - 0.5;
      double v = uniform();
      double us = 0.5 - std::fabs(u);
      double kf = std::floor((2.0 * a / us + b) * u + lambda + 0.43);
      if (us >= 0.07 && v <= v_r) return static_cast<long>(kf);
      if (kf < 0.0 || (us < 0.013 && v > us)) continue;
      if (std::log(v) + std::log(inv_alpha) - std::log(a / (us * us) + b) <=
          kf * loglam - lambda - std::lgamma(kf + 1.0)) {
        return static_cast<long>(kf);
      }
    }
  }

  std::uint64_t state_;
};

// a key identifies a reproducible family of streams; split() derives an
// independent child key, stream(i) opens the i-th member
struct Key {
  std::uint64_t value = 0;

  Key split(std::uint64_t salt) const {
    return Key{mix64(value ^ (0x9E3779B97F4A7C15ull * (salt + 1)))};
  }
  Stream stream(std::uint64_t index) const {
    return Stream(mix64(value ^ (0xD1B54A32D192ED03ull * (index + 1))));
  }
};

}  // namespace pnrtomo::rng
