#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "qbret/core.hpp"

namespace qbret {

// Deterministic random source. std::*_distribution output is
// implementation-defined, so every randomized component draws through this
// wrapper instead; mt19937_64 output itself is pinned by the standard.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // [0, 1)
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n); n must be > 0
  uint64_t index(uint64_t n) { return gen_() % n; }

  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * kPi * u2);
    have_spare_ = true;
    return r * std::cos(2.0 * kPi * u2);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[index(i)]);
    }
  }

  // First k elements of a random permutation of [0, n).
  std::vector<uint32_t> sample_indices(uint32_t n, uint32_t k) {
    std::vector<uint32_t> idx(n);
    for (uint32_t i = 0; i < n; ++i) idx[i] = i;
    for (uint32_t i = 0; i < k && i + 1 < n; ++i) {
      uint32_t j = i + static_cast<uint32_t>(index(n - i));
      std::swap(idx[i], idx[j]);
    }
    idx.resize(std::min(n, k));
    return idx;
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace qbret
