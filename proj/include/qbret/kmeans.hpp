#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace qbret {

struct KmeansResult {
  uint32_t k = 0;
  uint32_t dim = 0;
  std::vector<float> centroids;       // k * dim
  std::vector<uint32_t> assignment;   // per sample point
  std::vector<double> sse_history;    // SSE at each assignment step
  uint32_t iterations = 0;

  std::span<const float> centroid(uint32_t i) const {
    return {centroids.data() + size_t(i) * dim, dim};
  }
};

// Lloyd's algorithm with k-means++ seeding. Deterministic per seed; empty
// clusters are re-seeded from the point farthest from its centroid. Requires
// count >= k. Stops early when the assignment stabilizes.
KmeansResult train_kmeans(std::span<const float> sample, size_t count,
                          uint32_t dim, uint32_t k, uint32_t max_iters,
                          uint64_t seed);

}  // namespace qbret
