#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <utility>
#include <vector>

namespace doa {

/// SplitMix64 finalizer; used to decorrelate user seeds before seeding the engine.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seeded generator with a fully specified output sequence.
///
/// The engine is std::mt19937_64, whose sequence is fixed by the standard.
/// Distributions are implemented here rather than through <random>
/// distributions, which are implementation defined:
///   uniform()        53 high bits of one engine draw, in [0, 1)
///   complex_normal() one Box-Muller pair (u1, u2), r = sqrt(-2 ln(1 - u1)),
///                    returns (r cos(2 pi u2) + j r sin(2 pi u2)) / sqrt(2),
///                    i.e. CN(0, 1)
///   normal()         real part of the same construction, unscaled
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix_seed(seed)) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double normal() {
    const auto [r, phase] = box_muller();
    return r * std::cos(phase);
  }

  std::complex<double> complex_normal() {
    const auto [r, phase] = box_muller();
    return {r * std::cos(phase) / std::numbers::sqrt2, r * std::sin(phase) / std::numbers::sqrt2};
  }

  /// Uniform integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n) {
    // rejection sampling keeps this unbiased and implementation independent
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  std::mt19937_64& engine() { return engine_; }

 private:
  struct Polar {
    double r;
    double phase;
  };

  Polar box_muller() {
    const double u1 = uniform();
    const double u2 = uniform();
    return {std::sqrt(-2.0 * std::log1p(-u1)), 2.0 * std::numbers::pi * u2};
  }

  std::mt19937_64 engine_;
};

/// Fisher-Yates shuffle driven by Rng::below (std::shuffle is implementation defined).
template <typename T>
void shuffle(std::vector<T>& values, Rng& rng) {
  for (std::size_t i = values.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(values[i - 1], values[j]);
  }
}

}  // namespace doa
