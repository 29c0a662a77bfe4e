#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace fedadapt {

/// Portable seeded random stream.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. The standard distributions are not portable across library
/// implementations, so every conversion to doubles, indices and normals is
/// done here with explicit formulas.
class SeededRng {
 public:
  static constexpr std::string_view kAlgorithm = "mt19937_64";

  explicit SeededRng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform();

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);

  /// Box-Muller normal; consumes two uniforms per call.
  double normal(double mean = 0.0, double stddev = 1.0);

  /// Marsaglia-Tsang gamma sampler with unit scale.
  double gamma(double shape);

  /// Independent child stream derived from this stream's seed and a tag.
  /// Does not advance the parent.
  SeededRng fork(std::uint64_t tag) const;

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

/// SplitMix64 finalizer, used to derive child seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace fedadapt
