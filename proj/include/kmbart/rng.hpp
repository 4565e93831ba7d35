#pragma once

#include <cstdint>
#include <random>

namespace kmbart {

// Seeded generator used for every stochastic decision (init, dropout, masks,
// shuffles, sampling). Distribution code is written out here instead of
// using <random> distributions, whose outputs differ between standard
// libraries.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  static constexpr result_type min() { return std::mt19937_64::min(); }
  static constexpr result_type max() { return std::mt19937_64::max(); }
  result_type operator()() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform integer on [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  // Standard normal via Box-Muller; consumes two uniforms per call.
  double normal();

  // Gamma(shape, 1), Marsaglia-Tsang.
  double gamma(double shape);

 private:
  std::mt19937_64 engine_;
};

// splitmix64 finalizer over (a, b); derives independent sub-seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace kmbart
