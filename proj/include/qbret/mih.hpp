#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <unordered_map>
#include <vector>

#include "qbret/core.hpp"
#include "qbret/pq.hpp"

namespace qbret {

// Exact Hamming kNN over binary codes: the b-bit code is split into t
// disjoint substrings, each indexed in its own hash table; queries probe
// substring variants in order of increasing bit-flip radius until the
// pigeonhole bound certifies the k-th distance.
class MihIndex : public KnnIndex {
 public:
  struct QueryStats {
    uint32_t last_radius = 0;       // highest fully processed radius
    uint64_t buckets_probed = 0;
    uint64_t candidates_checked = 0;
  };

  // t must divide the bit length and substrings must fit 32 bits.
  static MihIndex build(const std::vector<ImageRecord>& database, uint32_t t);

  static uint32_t default_tables(uint32_t bits) { return bits / 32; }

  DescriptorKind kind() const override { return DescriptorKind::binary; }
  std::vector<Neighbor> query(const DescriptorTable& table, size_t row, int k,
                              int multi_assign_c) const override;
  std::vector<Neighbor> query_code(std::span<const uint64_t> code, int k,
                                   QueryStats* stats = nullptr) const;
  const std::vector<std::string>& image_ids() const override {
    return image_ids_;
  }
  const std::vector<uint32_t>& image_feature_counts() const override {
    return image_counts_;
  }
  size_t total_features() const override { return count_; }

  uint32_t bits() const { return bits_; }
  uint32_t tables() const { return tables_count_; }
  uint32_t substring_length() const { return sub_len_; }
  size_t table_occupancy(uint32_t table) const;

  void save(std::ostream& out) const override;

  friend std::unique_ptr<KnnIndex> load_mih_payload(std::istream& in,
                                                    const std::string& what);

 private:
  uint32_t bits_ = 0;
  uint32_t tables_count_ = 0;
  uint32_t sub_len_ = 0;
  size_t count_ = 0;
  size_t words_ = 0;  // words per code
  std::vector<uint64_t> codes_;  // count_ * words_, verification side table
  std::vector<std::unordered_map<uint32_t, std::vector<uint32_t>>> tables_;
  std::vector<std::string> image_ids_;
  std::vector<uint32_t> image_counts_;
  std::vector<uint64_t> image_offsets_;

  uint32_t substring(size_t code_idx, uint32_t table) const;
  static uint32_t extract(std::span<const uint64_t> code, uint32_t start,
                          uint32_t len);
  void index_all();
  void locate(uint64_t global_id, uint32_t& image, uint32_t& kp) const;
};

std::unique_ptr<KnnIndex> load_mih_payload(std::istream& in,
                                           const std::string& what);

}  // namespace qbret
