#include "fedadapt/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "fedadapt/error.hpp"

namespace fedadapt {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double SeededRng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::uint64_t SeededRng::uniform_index(std::uint64_t n) {
  if (n == 0) throw ConfigError("uniform_index: empty range");
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double SeededRng::normal(double mean, double stddev) {
  double u1 = uniform();
  const double u2 = uniform();
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  const double r = std::sqrt(-2.0 * std::log(u1));
  return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
}

double SeededRng::gamma(double shape) {
  if (!(shape > 0.0)) throw ConfigError("gamma: shape must be positive");
  if (shape < 1.0) {
    // Boost with U^(1/shape).
    double u = uniform();
    if (u <= 0.0) u = 0x1.0p-53;
    return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
      return d * v;
  }
}

SeededRng SeededRng::fork(std::uint64_t tag) const {
  return SeededRng(mix_seed(seed_, tag));
}

}  // namespace fedadapt
