#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace rmoe {

// SplitMix64 generator. Hand-rolled so that identical seeds give identical
// streams on every platform; the standard <random> distributions make no
// such promise.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();

  // Uniform in [0, 1), using the top 53 bits.
  double next_unit();

  double next_uniform(double lo, double hi);

  // Standard normal via Box-Muller.
  double next_gaussian();

  std::vector<double> uniform_vector(std::size_t n, double lo, double hi);

  // Fisher-Yates.
  void shuffle(std::vector<int>& values);

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Derives an independent sub-stream seed from a root seed, a stream name
// ("data", "init", "attack", "shuffle", ...) and an index. Every source of
// randomness in the library is seeded through this so one root seed pins a
// whole run.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream,
                          std::uint64_t index = 0);

// FNV-1a over raw bytes; used for config hashes and artifact checksums.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace rmoe
