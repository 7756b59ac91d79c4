#include "qbret/kmeans.hpp"

#include <cmath>
#include <limits>

#include "qbret/core.hpp"
#include "qbret/rng.hpp"

namespace qbret {
namespace {

double sq_dist(const float* a, const float* b, uint32_t dim) {
  double acc = 0.0;
  for (uint32_t i = 0; i < dim; ++i) {
    double d = double(a[i]) - double(b[i]);
    acc += d * d;
  }
  return acc;
}

}  // namespace

KmeansResult train_kmeans(std::span<const float> sample, size_t count,
                          uint32_t dim, uint32_t k, uint32_t max_iters,
                          uint64_t seed) {
  if (dim == 0) throw UsageError("train_kmeans: dimension must be > 0");
  if (sample.size() != count * size_t(dim)) {
    throw UsageError("train_kmeans: sample size does not match count*dim");
  }
  if (k == 0 || count < k) {
    throw UsageError("train_kmeans: need at least k sample points");
  }

  Rng rng(seed);
  KmeansResult res;
  res.k = k;
  res.dim = dim;
  res.centroids.assign(size_t(k) * dim, 0.0f);

  const float* data = sample.data();
  auto point = [&](size_t i) { return data + i * dim; };

  // k-means++ seeding: first center uniform, then proportional to the
  // squared distance to the nearest chosen center.
  std::vector<double> best_sq(count, std::numeric_limits<double>::max());
  size_t first = size_t(rng.index(count));
  std::copy(point(first), point(first) + dim, res.centroids.begin());
  for (uint32_t c = 1; c < k; ++c) {
    const float* prev = res.centroids.data() + size_t(c - 1) * dim;
    double total = 0.0;
    for (size_t i = 0; i < count; ++i) {
      double d = sq_dist(point(i), prev, dim);
      if (d < best_sq[i]) best_sq[i] = d;
      total += best_sq[i];
    }
    size_t chosen = count;  // invalid
    if (total > 0.0) {
      double target = rng.uniform() * total;
      double acc = 0.0;
      for (size_t i = 0; i < count; ++i) {
        acc += best_sq[i];
        if (acc > target) {
          chosen = i;
          break;
        }
      }
      if (chosen == count) chosen = count - 1;  // rounding fallthrough
    }
    if (chosen == count || best_sq[chosen] == 0.0) {
      // All remaining mass on duplicates: take the first point that is not
      // an exact copy of a chosen center, else just the first point.
      chosen = 0;
      for (size_t i = 0; i < count; ++i) {
        if (best_sq[i] > 0.0) {
          chosen = i;
          break;
        }
      }
    }
    std::copy(point(chosen), point(chosen) + dim,
              res.centroids.begin() + size_t(c) * dim);
  }

  res.assignment.assign(count, 0);
  std::vector<double> sums(size_t(k) * dim);
  std::vector<size_t> sizes(k);
  std::vector<double> point_sq(count);

  for (uint32_t iter = 0; iter < max_iters; ++iter) {
    // Assignment step.
    bool changed = false;
    double sse = 0.0;
    for (size_t i = 0; i < count; ++i) {
      double best = std::numeric_limits<double>::max();
      uint32_t best_c = 0;
      for (uint32_t c = 0; c < k; ++c) {
        double d = sq_dist(point(i), res.centroids.data() + size_t(c) * dim,
                           dim);
        if (d < best) {
          best = d;
          best_c = c;
        }
      }
      if (res.assignment[i] != best_c) {
        res.assignment[i] = best_c;
        changed = true;
      }
      point_sq[i] = best;
      sse += best;
    }
    res.sse_history.push_back(sse);
    res.iterations = iter + 1;
    if (!changed && iter > 0) break;

    // Update step.
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(sizes.begin(), sizes.end(), 0);
    for (size_t i = 0; i < count; ++i) {
      uint32_t c = res.assignment[i];
      double* dst = sums.data() + size_t(c) * dim;
      const float* src = point(i);
      for (uint32_t d = 0; d < dim; ++d) dst[d] += src[d];
      sizes[c]++;
    }
    for (uint32_t c = 0; c < k; ++c) {
      if (sizes[c] == 0) {
        // Re-seed from the point farthest from its centroid.
        size_t far = 0;
        double far_d = -1.0;
        for (size_t i = 0; i < count; ++i) {
          if (point_sq[i] > far_d) {
            far_d = point_sq[i];
            far = i;
          }
        }
        std::copy(point(far), point(far) + dim,
                  res.centroids.begin() + size_t(c) * dim);
        res.assignment[far] = c;
        point_sq[far] = 0.0;
        continue;
      }
      float* dst = res.centroids.data() + size_t(c) * dim;
      const double* src = sums.data() + size_t(c) * dim;
      for (uint32_t d = 0; d < dim; ++d) {
        dst[d] = static_cast<float>(src[d] / double(sizes[c]));
      }
    }
  }
  return res;
}

}  // namespace qbret
