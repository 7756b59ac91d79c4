#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

#include "qbret/core.hpp"

namespace qbret {

// Static 2-d kd-tree over keypoint positions, median splits, used for the
// spatial range queries of match expansion.
class KdTree2D {
 public:
  KdTree2D() = default;

  explicit KdTree2D(const std::vector<Keypoint>& kps) {
    xs_.reserve(kps.size());
    ys_.reserve(kps.size());
    for (const auto& kp : kps) {
      xs_.push_back(kp.x);
      ys_.push_back(kp.y);
    }
    idx_.resize(kps.size());
    std::iota(idx_.begin(), idx_.end(), 0u);
    if (!idx_.empty()) build(0, idx_.size(), 0);
  }

  // Indices of points with Euclidean distance <= r from (cx, cy); closed
  // bound. Output order is unspecified.
  void radius_query(double cx, double cy, double r,
                    std::vector<uint32_t>& out) const {
    out.clear();
    if (idx_.empty() || r < 0.0) return;
    query(0, idx_.size(), 0, cx, cy, r, r * r, out);
  }

  size_t size() const { return idx_.size(); }

 private:
  static constexpr size_t kLeaf = 8;

  void build(size_t lo, size_t hi, int axis) {
    if (hi - lo <= kLeaf) return;
    size_t mid = (lo + hi) / 2;
    auto cmp = [&](uint32_t a, uint32_t b) {
      return axis == 0 ? xs_[a] < xs_[b] : ys_[a] < ys_[b];
    };
    std::nth_element(idx_.begin() + lo, idx_.begin() + mid, idx_.begin() + hi,
                     cmp);
    build(lo, mid, 1 - axis);
    build(mid + 1, hi, 1 - axis);
  }

  void query(size_t lo, size_t hi, int axis, double cx, double cy, double r,
             double r_sq, std::vector<uint32_t>& out) const {
    if (hi - lo <= kLeaf) {
      for (size_t i = lo; i < hi; ++i) {
        uint32_t p = idx_[i];
        double dx = xs_[p] - cx, dy = ys_[p] - cy;
        if (dx * dx + dy * dy <= r_sq) out.push_back(p);
      }
      return;
    }
    size_t mid = (lo + hi) / 2;
    uint32_t p = idx_[mid];
    double dx = xs_[p] - cx, dy = ys_[p] - cy;
    if (dx * dx + dy * dy <= r_sq) out.push_back(p);
    double split_delta = axis == 0 ? cx - xs_[p] : cy - ys_[p];
    if (split_delta <= r) query(lo, mid, 1 - axis, cx, cy, r, r_sq, out);
    if (-split_delta <= r) query(mid + 1, hi, 1 - axis, cx, cy, r, r_sq, out);
  }

  std::vector<double> xs_, ys_;
  std::vector<uint32_t> idx_;
};

}  // namespace qbret
