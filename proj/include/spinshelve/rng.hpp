#pragma once

// Deterministic random numbers for the shot-noise path. mt19937_64 gives a
// standard-pinned stream; the distributions are hand-rolled so sampled data
// is reproducible across library versions.

#include <cstdint>
#include <random>

namespace spinshelve {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  double uniform() {  // [0, 1)
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double normal();

  // Poisson sample: Knuth multiplication for small means, PTRS transformed
  // rejection for large ones.
  long poisson(double mean);

 private:
  std::mt19937_64 engine_;
};

// Per-sweep-point seed derivation; parallel scans stay reproducible because
// each point owns an independent stream.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  return base ^ index;
}

}  // namespace spinshelve
