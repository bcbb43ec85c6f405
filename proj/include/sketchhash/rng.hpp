#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace sketchhash {

/// Seeded generator with a fully specified algorithm.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. The std distributions are implementation-defined, so every
/// derived draw is spelled out here:
///   below(n)  : rejection sampling on the raw 64-bit output (no modulo bias)
///   uniform() : top 53 bits scaled by 2^-53, in [0, 1)
///   normal()  : Box-Muller on two uniforms, one value per call
///   shuffle() : Fisher-Yates from the back, j = below(i + 1)
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  std::uint64_t below(std::uint64_t n);
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

/// Derives an independent stream seed from a base seed and a tag (splitmix64).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);

}  // namespace sketchhash
