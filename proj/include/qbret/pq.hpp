#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "qbret/core.hpp"

namespace qbret {

struct Neighbor {
  uint32_t image_index = 0;
  uint32_t keypoint_index = 0;
  double distance = 0.0;  // metric-space estimate (not squared)
  uint64_t global_id = 0;
};

// kNN search surface shared by the PQ and MIH backends. Results are sorted
// by (distance, global id); length <= k.
class KnnIndex {
 public:
  virtual ~KnnIndex() = default;
  virtual DescriptorKind kind() const = 0;
  virtual std::vector<Neighbor> query(const DescriptorTable& table, size_t row,
                                      int k, int multi_assign_c) const = 0;
  virtual const std::vector<std::string>& image_ids() const = 0;
  virtual const std::vector<uint32_t>& image_feature_counts() const = 0;
  virtual size_t total_features() const = 0;
  // Identity of the codebook training data, empty when not applicable.
  virtual const std::string& trained_on() const {
    static const std::string empty;
    return empty;
  }
  virtual void save(std::ostream& out) const = 0;
};

struct CoarseCodebook {
  uint32_t v = 0;
  uint32_t dim = 0;
  std::vector<float> centroids;  // v * dim

  std::span<const float> centroid(uint32_t i) const {
    return {centroids.data() + size_t(i) * dim, dim};
  }
  uint32_t nearest(std::span<const float> q) const;
  // The c nearest cells, ascending by distance then index.
  std::vector<uint32_t> nearest_cells(std::span<const float> q,
                                      uint32_t c) const;
};

struct PqCodebooks {
  uint32_t m = 0;       // sub-quantizers
  uint32_t s = 0;       // centroids per sub-quantizer, <= 256
  uint32_t subdim = 0;  // dim / m
  std::vector<float> centroids;  // m * s * subdim

  std::span<const float> sub_centroid(uint32_t block, uint32_t j) const {
    return {centroids.data() + (size_t(block) * s + j) * subdim, subdim};
  }
  // Per-block nearest sub-centroid of v (non-residual encoding).
  std::vector<uint8_t> encode(std::span<const float> v) const;
  void encode_into(std::span<const float> v, uint8_t* out) const;
};

// Per-block nearest sub-centroid of (v - coarse_centroid).
std::vector<uint8_t> encode_residual(std::span<const float> v,
                                     std::span<const float> coarse_centroid,
                                     const PqCodebooks& codebooks);

// Everything trained by `train-codebooks`: the coarse vocabulary, the
// residual sub-quantizers for the inverted file, and the non-residual
// sub-quantizers used to compress descriptors for match expansion.
struct Codebooks {
  uint32_t dim = 0;
  CoarseCodebook coarse;
  PqCodebooks residual;
  PqCodebooks compression;
  std::string trained_on;  // manifest identity, checked against eval sets

  void save(const std::filesystem::path& path) const;
  static Codebooks load(const std::filesystem::path& path);
};

struct CodebookTrainParams {
  uint32_t coarse_v = 2048;
  uint32_t pq_m = 8;
  uint32_t pq_s = 256;
  uint32_t kmeans_iters = 25;
  uint64_t seed = 1;
  size_t max_samples = 200000;  // deterministic stride subsample above this
};

Codebooks train_codebooks(const std::vector<ImageRecord>& train,
                          const CodebookTrainParams& params,
                          const std::string& trained_on);

// Inverted-file product quantization over real descriptors: every feature
// sits in the cell of its nearest coarse centroid with an m-byte residual
// code; queries scan the c nearest cells with an asymmetric lookup table.
class IvfPqIndex : public KnnIndex {
 public:
  static IvfPqIndex build(const std::vector<ImageRecord>& database,
                          const Codebooks& books);

  DescriptorKind kind() const override { return DescriptorKind::real; }
  std::vector<Neighbor> query(const DescriptorTable& table, size_t row, int k,
                              int multi_assign_c) const override;
  std::vector<Neighbor> query_vector(std::span<const float> q, int k,
                                     int multi_assign_c) const;
  const std::vector<std::string>& image_ids() const override {
    return image_ids_;
  }
  const std::vector<uint32_t>& image_feature_counts() const override {
    return image_counts_;
  }
  size_t total_features() const override { return total_features_; }

  uint32_t cells() const { return coarse_.v; }
  size_t cell_size(uint32_t cell) const { return cell_ids_[cell].size(); }
  const std::string& trained_on() const override { return trained_on_; }

  void save(std::ostream& out) const override;
  static IvfPqIndex load_payload(std::istream& in, const std::string& what);

 private:
  CoarseCodebook coarse_;
  PqCodebooks pq_;
  std::string trained_on_;
  std::vector<std::string> image_ids_;
  std::vector<uint32_t> image_counts_;
  std::vector<uint64_t> image_offsets_;  // prefix sums for global ids
  std::vector<std::vector<uint64_t>> cell_ids_;
  std::vector<std::vector<uint8_t>> cell_codes_;  // m bytes per entry
  size_t total_features_ = 0;

  void locate(uint64_t global_id, uint32_t& image, uint32_t& kp) const;
};

// Single-file container shared by both index kinds.
void save_index(const KnnIndex& index, const std::filesystem::path& path);
std::unique_ptr<KnnIndex> load_index(const std::filesystem::path& path);

}  // namespace qbret
