#include "qbret/expansion.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <unordered_set>

#include <json.hpp>

namespace qbret {
namespace {

constexpr char kStoreMagic[4] = {'Q', 'B', 'C', 'S'};
constexpr uint32_t kStoreVersion = 1;

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

}  // namespace

void ExpansionParams::validate() const {
  if (!(delta_xy > 0.0)) throw UsageError("delta_xy must be > 0");
  if (!(delta_s > 0.0 && delta_s < 1.0)) {
    throw UsageError("delta_s must lie in (0, 1)");
  }
  if (!(delta_dv >= 0.0)) throw UsageError("delta_dv must be >= 0");
  if (!(delta_alpha > 0.0 && delta_alpha <= kPi)) {
    throw UsageError("delta_alpha must lie in (0, 180] degrees");
  }
  if (delta_r && !(*delta_r > 0.0 && *delta_r <= kPi)) {
    throw UsageError("delta_r must lie in (0, 180] degrees when present");
  }
  if (!(delta_dxy > 0.0 && delta_dxy <= 1.0)) {
    throw UsageError("delta_dxy must lie in (0, 1]");
  }
  if (max_depth < 0 || max_depth > 2) {
    throw UsageError("max_depth must be 0, 1 or 2");
  }
}

ExpansionParams ExpansionParams::from_json_file(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open params file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("params file " + path.string() + ": " + e.what());
  }
  ExpansionParams p;
  p.delta_xy = j.value("delta_xy", p.delta_xy);
  p.delta_s = j.value("delta_s", p.delta_s);
  p.delta_dv = j.value("delta_dv", p.delta_dv);
  if (j.contains("delta_alpha")) {
    p.delta_alpha = deg2rad(j["delta_alpha"].get<double>());
  }
  if (j.contains("delta_r") && !j["delta_r"].is_null()) {
    p.delta_r = deg2rad(j["delta_r"].get<double>());
  } else {
    p.delta_r.reset();
  }
  p.delta_dxy = j.value("delta_dxy", p.delta_dxy);
  p.max_depth = j.value("max_depth", p.max_depth);
  p.use_affine = j.value("use_affine", p.use_affine);
  p.validate();
  return p;
}

void ExpansionParams::to_json_file(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["delta_xy"] = delta_xy;
  j["delta_s"] = delta_s;
  j["delta_dv"] = delta_dv;
  j["delta_alpha"] = rad2deg(delta_alpha);
  if (delta_r) {
    j["delta_r"] = rad2deg(*delta_r);
  } else {
    j["delta_r"] = nullptr;
  }
  j["delta_dxy"] = delta_dxy;
  j["max_depth"] = max_depth;
  j["use_affine"] = use_affine;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write params file " + path.string());
  out << j.dump(2) << "\n";
}

CompressedStore CompressedStore::build(
    const std::vector<ImageRecord>& database, const Codebooks* books) {
  CompressedStore store;
  if (database.empty()) return store;
  store.kind_ = database.front().descriptors.kind;

  if (store.kind_ == DescriptorKind::real) {
    if (books == nullptr) {
      throw UsageError("compressing real descriptors requires codebooks");
    }
    store.pq_ = books->compression;
    store.build_pair_table();
  } else {
    store.bits_ = database.front().descriptors.dim;
  }

  for (const auto& rec : database) {
    if (rec.descriptors.kind != store.kind_) {
      throw UsageError("mixed descriptor kinds in compress_store");
    }
    store.image_ids_.push_back(rec.image_id);
    store.images_.push_back(store.encode(rec.descriptors));
  }
  return store;
}

void CompressedStore::build_pair_table() {
  const uint32_t m = pq_.m, s = pq_.s, subdim = pq_.subdim;
  table_.assign(size_t(m) * s * s, 0.0);
  for (uint32_t b = 0; b < m; ++b) {
    for (uint32_t i = 0; i < s; ++i) {
      auto ci = pq_.sub_centroid(b, i);
      for (uint32_t j = 0; j < s; ++j) {
        auto cj = pq_.sub_centroid(b, j);
        double acc = 0.0;
        for (uint32_t d = 0; d < subdim; ++d) {
          double diff = double(ci[d]) - double(cj[d]);
          acc += diff * diff;
        }
        table_[(size_t(b) * s + i) * s + j] = acc;
      }
    }
  }
}

CodeMatrix CompressedStore::encode(const DescriptorTable& table) const {
  if (table.kind != kind_) {
    throw UsageError("descriptor kind does not match the compressed store");
  }
  CodeMatrix codes;
  codes.kind = kind_;
  codes.rows = table.size();
  if (kind_ == DescriptorKind::real) {
    if (table.dim != pq_.m * pq_.subdim) {
      throw UsageError("descriptor dimension does not match the store");
    }
    codes.row_bytes = pq_.m;
    codes.pq.resize(codes.rows * codes.row_bytes);
    for (size_t i = 0; i < codes.rows; ++i) {
      pq_.encode_into(table.real_row(i), codes.pq.data() + i * pq_.m);
    }
  } else {
    if (table.dim != bits_) {
      throw UsageError("code length does not match the store");
    }
    codes.words = static_cast<uint32_t>(table.words_per_code());
    codes.bin = table.binary_data;
  }
  return codes;
}

double CompressedStore::code_distance(const CodeMatrix& a, size_t row_a,
                                      const CodeMatrix& b,
                                      size_t row_b) const {
  if (kind_ == DescriptorKind::real) {
    const uint8_t* ca = a.pq.data() + row_a * a.row_bytes;
    const uint8_t* cb = b.pq.data() + row_b * b.row_bytes;
    const uint32_t s = pq_.s;
    double acc = 0.0;
    for (uint32_t blk = 0; blk < pq_.m; ++blk) {
      acc += table_[(size_t(blk) * s + ca[blk]) * s + cb[blk]];
    }
    return std::sqrt(acc);
  }
  return double(hamming_distance_words(a.bin_row(row_a), b.bin_row(row_b)));
}

double CompressedStore::feature_distance(uint32_t image_a, size_t idx_a,
                                         uint32_t image_b,
                                         size_t idx_b) const {
  return code_distance(images_[image_a], idx_a, images_[image_b], idx_b);
}

void CompressedStore::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write store " + path.string());
  out.write(kStoreMagic, 4);
  write_pod(out, kStoreVersion);
  write_pod(out, static_cast<uint32_t>(kind_));
  if (kind_ == DescriptorKind::real) {
    write_pod(out, pq_.m);
    write_pod(out, pq_.s);
    write_pod(out, pq_.subdim);
    write_pod(out, static_cast<uint64_t>(pq_.centroids.size()));
    out.write(reinterpret_cast<const char*>(pq_.centroids.data()),
              std::streamsize(pq_.centroids.size() * sizeof(float)));
  } else {
    write_pod(out, bits_);
  }
  write_pod(out, static_cast<uint32_t>(images_.size()));
  for (size_t i = 0; i < images_.size(); ++i) {
    write_pod(out, static_cast<uint32_t>(image_ids_[i].size()));
    out.write(image_ids_[i].data(), std::streamsize(image_ids_[i].size()));
    const CodeMatrix& cm = images_[i];
    write_pod(out, static_cast<uint64_t>(cm.rows));
    if (kind_ == DescriptorKind::real) {
      out.write(reinterpret_cast<const char*>(cm.pq.data()),
                std::streamsize(cm.pq.size()));
    } else {
      out.write(reinterpret_cast<const char*>(cm.bin.data()),
                std::streamsize(cm.bin.size() * sizeof(uint64_t)));
    }
  }
  if (!out) throw DataError("write failure on " + path.string());
}

CompressedStore CompressedStore::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open store " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kStoreMagic, 4) != 0) {
    throw DataError(path.string() + " is not a compressed store");
  }
  uint32_t version = read_pod<uint32_t>(in, "store version");
  if (version != kStoreVersion) throw DataError("unsupported store version");

  CompressedStore store;
  std::string what = "store " + path.string();
  store.kind_ = static_cast<DescriptorKind>(read_pod<uint32_t>(in, what));
  if (store.kind_ == DescriptorKind::real) {
    store.pq_.m = read_pod<uint32_t>(in, what);
    store.pq_.s = read_pod<uint32_t>(in, what);
    store.pq_.subdim = read_pod<uint32_t>(in, what);
    uint64_t n = read_pod<uint64_t>(in, what);
    store.pq_.centroids.resize(n);
    in.read(reinterpret_cast<char*>(store.pq_.centroids.data()),
            std::streamsize(n * sizeof(float)));
    if (!in) throw DataError("truncated stream while reading " + what);
    store.build_pair_table();
  } else {
    store.bits_ = read_pod<uint32_t>(in, what);
  }
  uint32_t images = read_pod<uint32_t>(in, what);
  for (uint32_t i = 0; i < images; ++i) {
    uint32_t len = read_pod<uint32_t>(in, what);
    std::string id(len, '\0');
    in.read(id.data(), len);
    store.image_ids_.push_back(std::move(id));
    CodeMatrix cm;
    cm.kind = store.kind_;
    cm.rows = read_pod<uint64_t>(in, what);
    if (store.kind_ == DescriptorKind::real) {
      cm.row_bytes = store.pq_.m;
      cm.pq.resize(cm.rows * cm.row_bytes);
      in.read(reinterpret_cast<char*>(cm.pq.data()),
              std::streamsize(cm.pq.size()));
    } else {
      cm.words = (store.bits_ + 63) / 64;
      cm.bin.resize(cm.rows * cm.words);
      in.read(reinterpret_cast<char*>(cm.bin.data()),
              std::streamsize(cm.bin.size() * sizeof(uint64_t)));
    }
    if (!in) throw DataError("truncated stream while reading " + what);
    store.images_.push_back(std::move(cm));
  }
  return store;
}

std::vector<uint32_t> spatial_neighbors(const ImageRecord& image,
                                        const KdTree2D& tree, uint32_t ref_idx,
                                        const ExpansionParams& params) {
  const Keypoint& ref = image.keypoints[ref_idx];
  const double bound = ref.scale * params.delta_xy;
  const bool mahalanobis = params.use_affine && ref.affine.has_value();

  // Mahalanobis ellipses are pruned through their bounding circle.
  double search_radius = bound;
  if (mahalanobis) {
    double lmin = ref.affine->min_eigenvalue();
    search_radius = bound / std::sqrt(std::max(lmin, 1e-12));
  }

  std::vector<uint32_t> in_range;
  tree.radius_query(ref.x, ref.y, search_radius, in_range);

  std::vector<uint32_t> out;
  out.reserve(in_range.size());
  for (uint32_t idx : in_range) {
    if (idx == ref_idx) continue;
    const Keypoint& kp = image.keypoints[idx];
    if (mahalanobis) {
      double dx = kp.x - ref.x, dy = kp.y - ref.y;
      const AffineShape& A = *ref.affine;
      double maha_sq = A.a * dx * dx + 2.0 * A.b * dx * dy + A.c * dy * dy;
      if (maha_sq > bound * bound) continue;
    }
    double ratio = std::min(kp.scale, ref.scale) / std::max(kp.scale, ref.scale);
    if (ratio < params.delta_s) continue;
    out.push_back(idx);
  }
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

struct NeighborInfo {
  uint32_t idx = 0;
  double alpha = 0.0;  // rotation-normalized positional angle
  double grad = 0.0;   // rotation-normalized gradient angle
  double rho = 0.0;    // spatial distance / reference scale
};

std::vector<NeighborInfo> normalized_neighbors(const ExpandView& view,
                                               uint32_t ref_idx,
                                               const ExpansionParams& params) {
  const ImageRecord& image = *view.record;
  const Keypoint& ref = image.keypoints[ref_idx];
  std::vector<uint32_t> idxs =
      spatial_neighbors(image, *view.tree, ref_idx, params);
  std::vector<NeighborInfo> out;
  out.reserve(idxs.size());
  for (uint32_t idx : idxs) {
    const Keypoint& kp = image.keypoints[idx];
    double dx = kp.x - ref.x, dy = kp.y - ref.y;
    NeighborInfo n;
    n.idx = idx;
    n.alpha = normalize_angle(std::atan2(dy, dx) - ref.orientation);
    n.grad = normalize_angle(kp.orientation - ref.orientation);
    n.rho = std::sqrt(dx * dx + dy * dy) / ref.scale;
    out.push_back(n);
  }
  std::sort(out.begin(), out.end(), [](const NeighborInfo& a,
                                       const NeighborInfo& b) {
    if (a.alpha != b.alpha) return a.alpha < b.alpha;
    return a.idx < b.idx;
  });
  return out;
}

struct CandidatePair {
  double d_alpha = 0.0;
  double d_feat = 0.0;
  uint32_t q_idx = 0;
  uint32_t d_idx = 0;

  // Symmetric under swapping the two images so that expansion of (a, b)
  // and (b, a) accepts the same pair set.
  bool operator<(const CandidatePair& o) const {
    if (d_alpha != o.d_alpha) return d_alpha < o.d_alpha;
    if (d_feat != o.d_feat) return d_feat < o.d_feat;
    uint32_t lo = std::min(q_idx, d_idx), olo = std::min(o.q_idx, o.d_idx);
    if (lo != olo) return lo < olo;
    uint32_t hi = std::max(q_idx, d_idx), ohi = std::max(o.q_idx, o.d_idx);
    if (hi != ohi) return hi < ohi;
    return q_idx < o.q_idx;
  }
};

// One sweep around a reference pair; returns accepted (query,db) keypoint
// index pairs in greedy acceptance order.
std::vector<std::pair<uint32_t, uint32_t>> expand_around(
    uint32_t q_ref, uint32_t d_ref, const ExpandView& query,
    const ExpandView& db, const CompressedStore& store,
    const ExpansionParams& params) {
  std::vector<NeighborInfo> q_list = normalized_neighbors(query, q_ref, params);
  std::vector<NeighborInfo> d_list = normalized_neighbors(db, d_ref, params);
  if (q_list.empty() || d_list.empty()) return {};

  // Extend the db list across the -pi/pi seam so a plain interval window
  // covers circular differences.
  struct ExtEntry {
    double alpha;
    uint32_t pos;  // into d_list
  };
  std::vector<ExtEntry> ext;
  ext.reserve(d_list.size() * 2);
  const double da = params.delta_alpha;
  const bool full_circle = 2.0 * da >= 2.0 * kPi - 1e-12;
  for (uint32_t i = 0; i < d_list.size(); ++i) {
    ext.push_back({d_list[i].alpha, i});
    if (!full_circle) {
      if (d_list[i].alpha > kPi - da) ext.push_back({d_list[i].alpha - 2.0 * kPi, i});
      if (d_list[i].alpha < -kPi + da) ext.push_back({d_list[i].alpha + 2.0 * kPi, i});
    }
  }
  std::sort(ext.begin(), ext.end(), [](const ExtEntry& a, const ExtEntry& b) {
    if (a.alpha != b.alpha) return a.alpha < b.alpha;
    return a.pos < b.pos;
  });

  std::vector<CandidatePair> candidates;
  size_t lo = 0, hi = 0;
  for (const NeighborInfo& q : q_list) {
    std::vector<uint32_t> window;
    if (full_circle) {
      window.resize(d_list.size());
      for (uint32_t i = 0; i < d_list.size(); ++i) window[i] = i;
    } else {
      while (lo < ext.size() && ext[lo].alpha < q.alpha - da) ++lo;
      if (hi < lo) hi = lo;
      while (hi < ext.size() && ext[hi].alpha <= q.alpha + da) ++hi;
      for (size_t e = lo; e < hi; ++e) window.push_back(ext[e].pos);
    }
    for (uint32_t pos : window) {
      const NeighborInfo& d = d_list[pos];
      double d_alpha = circular_abs_diff(q.alpha, d.alpha);
      if (d_alpha > params.delta_alpha) continue;
      if (params.delta_r &&
          circular_abs_diff(q.grad, d.grad) > *params.delta_r) {
        continue;
      }
      double ratio;
      double rmax = std::max(q.rho, d.rho);
      if (rmax > 0.0) {
        ratio = std::min(q.rho, d.rho) / rmax;
      } else {
        ratio = 1.0;  // both neighbors coincide with their references
      }
      if (ratio < params.delta_dxy) continue;
      double d_feat =
          store.code_distance(*query.codes, q.idx, *db.codes, d.idx);
      if (d_feat > params.delta_dv) continue;
      candidates.push_back({d_alpha, d_feat, q.idx, d.idx});
    }
  }

  std::sort(candidates.begin(), candidates.end());
  std::unordered_set<uint32_t> used_q, used_d;
  std::vector<std::pair<uint32_t, uint32_t>> accepted;
  for (const CandidatePair& c : candidates) {
    if (used_q.count(c.q_idx) || used_d.count(c.d_idx)) continue;
    used_q.insert(c.q_idx);
    used_d.insert(c.d_idx);
    accepted.emplace_back(c.q_idx, c.d_idx);
  }
  return accepted;
}

Correspondence make_expanded(const Correspondence& seed,
                             const ExpandView& query, const ExpandView& db,
                             uint32_t q_idx, uint32_t d_idx) {
  Correspondence c;
  c.query_kp = query.record->keypoints[q_idx];
  c.db_kp = db.record->keypoints[d_idx];
  c.db_image = seed.db_image;
  c.query_feature_index = q_idx;
  c.db_feature_index = d_idx;
  c.feature_distance = seed.feature_distance;
  c.seed_knn_distance = seed.seed_knn_distance;
  c.is_seed = false;
  return c;
}

}  // namespace

std::vector<Correspondence> expand_match(const Correspondence& seed,
                                         const ExpandView& query,
                                         const ExpandView& db,
                                         const CompressedStore& store,
                                         const ExpansionParams& params) {
  params.validate();
  std::vector<Correspondence> out;
  out.push_back(seed);
  auto pairs = expand_around(seed.query_feature_index, seed.db_feature_index,
                             query, db, store, params);
  for (const auto& [q_idx, d_idx] : pairs) {
    out.push_back(make_expanded(seed, query, db, q_idx, d_idx));
  }
  return out;
}

std::vector<Correspondence> expand_recursive(const Correspondence& seed,
                                             const ExpandView& query,
                                             const ExpandView& db,
                                             const CompressedStore& store,
                                             const ExpansionParams& params) {
  params.validate();
  std::vector<Correspondence> out;
  out.push_back(seed);
  if (params.max_depth <= 0) return out;

  auto pair_key = [](uint32_t q, uint32_t d) {
    return (uint64_t(q) << 32) | d;
  };
  std::unordered_set<uint64_t> visited;
  visited.insert(pair_key(seed.query_feature_index, seed.db_feature_index));
  std::unordered_set<uint32_t> used_q{seed.query_feature_index};
  std::unordered_set<uint32_t> used_d{seed.db_feature_index};

  struct Ref {
    uint32_t q, d;
    int depth;
  };
  std::vector<Ref> queue{{seed.query_feature_index, seed.db_feature_index, 0}};
  size_t head = 0;
  while (head < queue.size()) {
    Ref ref = queue[head++];
    auto pairs = expand_around(ref.q, ref.d, query, db, store, params);
    for (const auto& [q_idx, d_idx] : pairs) {
      if (!visited.insert(pair_key(q_idx, d_idx)).second) continue;
      if (ref.depth + 1 < params.max_depth) {
        queue.push_back({q_idx, d_idx, ref.depth + 1});
      }
      // First acceptance wins; one correspondence per keypoint on each side.
      if (used_q.count(q_idx) || used_d.count(d_idx)) continue;
      used_q.insert(q_idx);
      used_d.insert(d_idx);
      out.push_back(make_expanded(seed, query, db, q_idx, d_idx));
    }
  }
  return out;
}

}  // namespace qbret
