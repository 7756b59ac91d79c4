#include "qbret/mih.hpp"

#include <algorithm>
#include <istream>
#include <ostream>

namespace qbret {
namespace {

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in, const std::string& what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError("truncated stream while reading " + what);
  return v;
}

// Calls visit(value) for every variant of `base` (a len-bit value) at exactly
// Hamming distance `radius`.
template <class Visit>
void enumerate_flips(uint32_t base, uint32_t len, uint32_t radius,
                     Visit&& visit) {
  if (radius == 0) {
    visit(base);
    return;
  }
  // Iterative combination walk over flipped bit positions.
  std::vector<uint32_t> pos(radius);
  for (uint32_t i = 0; i < radius; ++i) pos[i] = i;
  while (true) {
    uint32_t v = base;
    for (uint32_t p : pos) v ^= (1u << p);
    visit(v);
    // Next combination.
    int i = int(radius) - 1;
    while (i >= 0 && pos[i] == len - radius + uint32_t(i)) --i;
    if (i < 0) break;
    ++pos[i];
    for (uint32_t j = uint32_t(i) + 1; j < radius; ++j) {
      pos[j] = pos[j - 1] + 1;
    }
  }
}

}  // namespace

uint32_t MihIndex::extract(std::span<const uint64_t> code, uint32_t start,
                           uint32_t len) {
  size_t w = start >> 6;
  uint32_t off = start & 63;
  uint64_t v = code[w] >> off;
  if (off + len > 64 && w + 1 < code.size()) {
    v |= code[w + 1] << (64 - off);
  }
  uint32_t mask = len >= 32 ? 0xffffffffu : ((1u << len) - 1u);
  return static_cast<uint32_t>(v) & mask;
}

uint32_t MihIndex::substring(size_t code_idx, uint32_t table) const {
  std::span<const uint64_t> code{codes_.data() + code_idx * words_, words_};
  return extract(code, table * sub_len_, sub_len_);
}

MihIndex MihIndex::build(const std::vector<ImageRecord>& database,
                         uint32_t t) {
  MihIndex index;
  if (database.empty()) {
    throw UsageError("build_mih: empty database");
  }
  uint32_t bits = database.front().descriptors.dim;
  for (const auto& rec : database) {
    if (rec.descriptors.kind != DescriptorKind::binary) {
      throw UsageError("MIH indexes binary descriptors only");
    }
    if (rec.descriptors.dim != bits) {
      throw UsageError("build_mih: non-uniform code lengths");
    }
  }
  if (t == 0 || bits % t != 0) {
    throw UsageError("build_mih: table count must divide the bit length");
  }
  if (bits / t > 32) {
    throw UsageError("build_mih: substring length must be <= 32 bits");
  }

  index.bits_ = bits;
  index.tables_count_ = t;
  index.sub_len_ = bits / t;
  index.words_ = (size_t(bits) + 63) / 64;

  uint64_t offset = 0;
  for (const auto& rec : database) {
    index.image_ids_.push_back(rec.image_id);
    index.image_counts_.push_back(
        static_cast<uint32_t>(rec.descriptors.size()));
    index.image_offsets_.push_back(offset);
    index.codes_.insert(index.codes_.end(),
                        rec.descriptors.binary_data.begin(),
                        rec.descriptors.binary_data.end());
    offset += rec.descriptors.size();
  }
  index.count_ = offset;
  index.index_all();
  return index;
}

void MihIndex::index_all() {
  tables_.assign(tables_count_, {});
  for (size_t i = 0; i < count_; ++i) {
    for (uint32_t t = 0; t < tables_count_; ++t) {
      tables_[t][substring(i, t)].push_back(static_cast<uint32_t>(i));
    }
  }
}

size_t MihIndex::table_occupancy(uint32_t table) const {
  size_t total = 0;
  for (const auto& [key, bucket] : tables_[table]) total += bucket.size();
  return total;
}

void MihIndex::locate(uint64_t global_id, uint32_t& image,
                      uint32_t& kp) const {
  auto it = std::upper_bound(image_offsets_.begin(), image_offsets_.end(),
                             global_id);
  image = static_cast<uint32_t>(std::distance(image_offsets_.begin(), it) - 1);
  kp = static_cast<uint32_t>(global_id - image_offsets_[image]);
}

std::vector<Neighbor> MihIndex::query(const DescriptorTable& table, size_t row,
                                      int k, int /*multi_assign_c*/) const {
  if (table.kind != DescriptorKind::binary) {
    throw UsageError("query descriptor kind does not match the index");
  }
  if (table.dim != bits_) {
    throw UsageError("query bit length does not match the index");
  }
  return query_code(table.binary_row(row), k);
}

std::vector<Neighbor> MihIndex::query_code(std::span<const uint64_t> code,
                                           int k, QueryStats* stats) const {
  if (k < 1) throw UsageError("k must be >= 1");
  if (count_ == 0) return {};

  const size_t k_eff = std::min<size_t>(size_t(k), count_);
  std::vector<uint32_t> query_subs(tables_count_);
  for (uint32_t t = 0; t < tables_count_; ++t) {
    query_subs[t] = extract(code, t * sub_len_, sub_len_);
  }

  std::vector<uint8_t> seen(count_, 0);
  // All verified candidates; ties at the k-th distance are resolved on the
  // full set by (distance, id).
  std::vector<std::pair<int, uint32_t>> candidates;
  QueryStats local;

  auto kth_distance = [&]() -> int {
    // k_eff-th smallest distance among candidates.
    std::nth_element(candidates.begin(), candidates.begin() + (k_eff - 1),
                     candidates.end());
    return candidates[k_eff - 1].first;
  };

  uint32_t radius = 0;
  for (; radius <= sub_len_; ++radius) {
    for (uint32_t t = 0; t < tables_count_; ++t) {
      const auto& tbl = tables_[t];
      enumerate_flips(query_subs[t], sub_len_, radius, [&](uint32_t variant) {
        local.buckets_probed++;
        auto it = tbl.find(variant);
        if (it == tbl.end()) return;
        for (uint32_t id : it->second) {
          if (seen[id]) continue;
          seen[id] = 1;
          local.candidates_checked++;
          int d = hamming_distance_words(
              code, {codes_.data() + size_t(id) * words_, words_});
          candidates.emplace_back(d, id);
        }
      });
    }
    local.last_radius = radius;
    // Pigeonhole: any unseen code at full distance <= d_k would share a
    // substring within floor(d_k / t) of the query, hence be seen already.
    if (candidates.size() >= k_eff &&
        uint32_t(kth_distance()) / tables_count_ <= radius) {
      break;
    }
  }

  std::sort(candidates.begin(), candidates.end());
  candidates.resize(std::min(candidates.size(), k_eff));

  std::vector<Neighbor> out;
  out.reserve(candidates.size());
  for (const auto& [dist, id] : candidates) {
    Neighbor n;
    n.global_id = id;
    locate(id, n.image_index, n.keypoint_index);
    n.distance = double(dist);
    out.push_back(n);
  }
  if (stats) *stats = local;
  return out;
}

void MihIndex::save(std::ostream& out) const {
  write_pod(out, static_cast<uint32_t>(DescriptorKind::binary));
  write_pod(out, bits_);
  write_pod(out, tables_count_);
  write_pod(out, static_cast<uint32_t>(image_ids_.size()));
  for (size_t i = 0; i < image_ids_.size(); ++i) {
    write_pod(out, static_cast<uint32_t>(image_ids_[i].size()));
    out.write(image_ids_[i].data(), std::streamsize(image_ids_[i].size()));
    write_pod(out, image_counts_[i]);
  }
  write_pod(out, static_cast<uint64_t>(count_));
  out.write(reinterpret_cast<const char*>(codes_.data()),
            std::streamsize(codes_.size() * sizeof(uint64_t)));
}

std::unique_ptr<KnnIndex> load_mih_payload(std::istream& in,
                                           const std::string& what) {
  auto index = std::make_unique<MihIndex>();
  index->bits_ = read_pod<uint32_t>(in, what);
  index->tables_count_ = read_pod<uint32_t>(in, what);
  index->sub_len_ = index->bits_ / index->tables_count_;
  index->words_ = (size_t(index->bits_) + 63) / 64;
  uint32_t images = read_pod<uint32_t>(in, what);
  uint64_t offset = 0;
  for (uint32_t i = 0; i < images; ++i) {
    uint32_t len = read_pod<uint32_t>(in, what);
    std::string id(len, '\0');
    in.read(id.data(), len);
    if (!in) throw DataError("truncated stream while reading " + what);
    index->image_ids_.push_back(std::move(id));
    uint32_t count = read_pod<uint32_t>(in, what);
    index->image_counts_.push_back(count);
    index->image_offsets_.push_back(offset);
    offset += count;
  }
  index->count_ = read_pod<uint64_t>(in, what);
  if (index->count_ != offset) {
    throw DataError("inconsistent feature counts in " + what);
  }
  index->codes_.resize(index->count_ * index->words_);
  in.read(reinterpret_cast<char*>(index->codes_.data()),
          std::streamsize(index->codes_.size() * sizeof(uint64_t)));
  if (!in) throw DataError("truncated stream while reading " + what);
  index->index_all();
  return index;
}

}  // namespace qbret
