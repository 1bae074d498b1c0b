#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace vivo {

// All randomness in the project flows through this wrapper. The raw stream
// is std::mt19937_64 (bit-exact across platforms by the standard); the
// mappings below are hand-rolled because the std:: distribution objects are
// implementation-defined and would break cross-platform reproducibility.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Unbiased integer in [0, n) via rejection sampling.
  size_t uniform_index(size_t n);

  // Double in [0, 1) with 53 random bits.
  double uniform_real();

  // Standard normal via Box-Muller (the spare value is cached).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.empty()) return;
    for (size_t i = v.size() - 1; i > 0; --i) {
      std::swap(v[i], v[uniform_index(i + 1)]);
    }
  }

  // k distinct indices drawn uniformly from [0, n), in draw order.
  std::vector<size_t> sample_without_replacement(size_t n, size_t k);

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Deterministic seed derivation (splitmix64 over the mixed words). Used to
// give every (run, step, example) its own independent stream so that runs
// are resumable without serializing generator state.
uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b = 0);

}  // namespace vivo
