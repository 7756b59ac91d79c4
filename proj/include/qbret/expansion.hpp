#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "qbret/core.hpp"
#include "qbret/kdtree2d.hpp"
#include "qbret/pq.hpp"

namespace qbret {

// Thresholds of the match-expansion stage. Angles are radians internally;
// parameter files carry degrees.
struct ExpansionParams {
  double delta_xy = 6.0;    // spatial range multiplier of the reference scale
  double delta_s = 0.8;     // lower bound on min/max scale ratio, in (0, 1)
  double delta_dv = 26.2;   // feature distance threshold
  double delta_alpha = deg2rad(24.3);   // positional angle threshold
  std::optional<double> delta_r;        // gradient angle threshold, off if absent
  double delta_dxy = 0.49;  // lower bound on the scale-normalized distance ratio
  int max_depth = 1;        // 0 = expansion off, 1 = ME, 2 = MER
  bool use_affine = true;   // Mahalanobis ranges when shape matrices exist

  void validate() const;  // throws UsageError
  static ExpansionParams from_json_file(const std::filesystem::path& path);
  void to_json_file(const std::filesystem::path& path) const;
};

// Compressed per-image descriptor codes: m-byte non-residual PQ codes for
// real descriptors (distances via an m*s*s inter-centroid table), raw codes
// with Hamming distances for binary ones.
struct CodeMatrix {
  DescriptorKind kind = DescriptorKind::real;
  size_t rows = 0;
  uint32_t row_bytes = 0;  // PQ code bytes per row (real)
  uint32_t words = 0;      // words per code (binary)
  std::vector<uint8_t> pq;
  std::vector<uint64_t> bin;

  std::span<const uint8_t> pq_row(size_t i) const {
    return {pq.data() + i * row_bytes, row_bytes};
  }
  std::span<const uint64_t> bin_row(size_t i) const {
    return {bin.data() + i * words, words};
  }
};

class CompressedStore {
 public:
  CompressedStore() = default;

  // Real datasets need the codebooks' compression sub-quantizers; binary
  // datasets keep their raw codes.
  static CompressedStore build(const std::vector<ImageRecord>& database,
                               const Codebooks* books);

  DescriptorKind kind() const { return kind_; }
  uint32_t code_bytes() const { return pq_.m; }
  size_t image_count() const { return images_.size(); }
  const CodeMatrix& image_codes(uint32_t image_index) const {
    return images_[image_index];
  }
  const std::vector<std::string>& image_ids() const { return image_ids_; }

  // Encode foreign descriptors (the query image) into the store's code space.
  CodeMatrix encode(const DescriptorTable& table) const;

  // sqrt of the summed per-block inter-centroid squared distances (real), or
  // the Hamming distance (binary). Symmetric.
  double code_distance(const CodeMatrix& a, size_t row_a, const CodeMatrix& b,
                       size_t row_b) const;
  double feature_distance(uint32_t image_a, size_t idx_a, uint32_t image_b,
                          size_t idx_b) const;

  const std::vector<double>& pair_table() const { return table_; }

  void save(const std::filesystem::path& path) const;
  static CompressedStore load(const std::filesystem::path& path);

 private:
  DescriptorKind kind_ = DescriptorKind::real;
  PqCodebooks pq_;                // compression sub-quantizers (real)
  std::vector<double> table_;    // m * s * s squared centroid distances
  std::vector<CodeMatrix> images_;
  std::vector<std::string> image_ids_;
  uint32_t bits_ = 0;  // binary code length

  void build_pair_table();
};

// One side of an expansion: keypoints, their codes, and the spatial tree.
struct ExpandView {
  const ImageRecord* record = nullptr;
  const CodeMatrix* codes = nullptr;
  const KdTree2D* tree = nullptr;
};

// Indices of keypoints (excluding ref_idx) within spatial range
// ref.scale * delta_xy of the reference keypoint — Mahalanobis range when the
// reference carries an affine shape and use_affine is set — that also pass
// the min/max scale-ratio test against delta_s. Closed bounds.
std::vector<uint32_t> spatial_neighbors(const ImageRecord& image,
                                        const KdTree2D& tree, uint32_t ref_idx,
                                        const ExpansionParams& params);

// Single-level expansion around the seed: rotation-normalized neighbors of
// both reference keypoints are swept by positional angle and paired
// one-to-one under the angular, gradient, feature-distance and
// distance-ratio thresholds. Returns the seed plus accepted pairs, one
// correspondence per query feature.
std::vector<Correspondence> expand_match(const Correspondence& seed,
                                         const ExpandView& query,
                                         const ExpandView& db,
                                         const CompressedStore& store,
                                         const ExpansionParams& params);

// Breadth-first recursive variant: every accepted pair at depth < max_depth
// becomes a reference pair. max_depth 0 returns only the seed.
std::vector<Correspondence> expand_recursive(const Correspondence& seed,
                                             const ExpandView& query,
                                             const ExpandView& db,
                                             const CompressedStore& store,
                                             const ExpansionParams& params);

}  // namespace qbret
