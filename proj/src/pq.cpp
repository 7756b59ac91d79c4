#include "qbret/pq.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <queue>

#include "qbret/kmeans.hpp"
#include "qbret/mih.hpp"

namespace qbret {
namespace {

constexpr char kIndexMagic[4] = {'Q', 'B', 'I', 'X'};
constexpr char kCodebookMagic[4] = {'Q', 'B', 'C', 'B'};
constexpr uint32_t kContainerVersion = 1;

double sq_dist(std::span<const float> a, std::span<const float> b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = double(a[i]) - double(b[i]);
    acc += d * d;
  }
  return acc;
}

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

void write_string(std::ostream& out, const std::string& s) {
  write_pod(out, static_cast<uint32_t>(s.size()));
  out.write(s.data(), std::streamsize(s.size()));
}

std::string read_string(std::istream& in, const std::string& what) {
  uint32_t len = read_pod<uint32_t>(in, what);
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) throw DataError("truncated stream while reading " + what);
  return s;
}

void write_floats(std::ostream& out, const std::vector<float>& v) {
  write_pod(out, static_cast<uint64_t>(v.size()));
  out.write(reinterpret_cast<const char*>(v.data()),
            std::streamsize(v.size() * sizeof(float)));
}

std::vector<float> read_floats(std::istream& in, const std::string& what) {
  uint64_t n = read_pod<uint64_t>(in, what);
  std::vector<float> v(n);
  in.read(reinterpret_cast<char*>(v.data()),
          std::streamsize(n * sizeof(float)));
  if (!in) throw DataError("truncated stream while reading " + what);
  return v;
}

}  // namespace

uint32_t CoarseCodebook::nearest(std::span<const float> q) const {
  double best = std::numeric_limits<double>::max();
  uint32_t best_i = 0;
  for (uint32_t i = 0; i < v; ++i) {
    double d = sq_dist(q, centroid(i));
    if (d < best) {
      best = d;
      best_i = i;
    }
  }
  return best_i;
}

std::vector<uint32_t> CoarseCodebook::nearest_cells(std::span<const float> q,
                                                    uint32_t c) const {
  std::vector<std::pair<double, uint32_t>> dists(v);
  for (uint32_t i = 0; i < v; ++i) dists[i] = {sq_dist(q, centroid(i)), i};
  uint32_t take = std::min(c, v);
  std::partial_sort(dists.begin(), dists.begin() + take, dists.end());
  std::vector<uint32_t> cells(take);
  for (uint32_t i = 0; i < take; ++i) cells[i] = dists[i].second;
  return cells;
}

void PqCodebooks::encode_into(std::span<const float> v, uint8_t* out) const {
  for (uint32_t b = 0; b < m; ++b) {
    std::span<const float> block = v.subspan(size_t(b) * subdim, subdim);
    double best = std::numeric_limits<double>::max();
    uint32_t best_j = 0;
    for (uint32_t j = 0; j < s; ++j) {
      double d = sq_dist(block, sub_centroid(b, j));
      if (d < best) {
        best = d;
        best_j = j;
      }
    }
    out[b] = static_cast<uint8_t>(best_j);
  }
}

std::vector<uint8_t> PqCodebooks::encode(std::span<const float> v) const {
  std::vector<uint8_t> code(m);
  encode_into(v, code.data());
  return code;
}

std::vector<uint8_t> encode_residual(std::span<const float> v,
                                     std::span<const float> coarse_centroid,
                                     const PqCodebooks& codebooks) {
  if (v.size() != coarse_centroid.size()) {
    throw UsageError("encode_residual: dimension mismatch");
  }
  std::vector<float> residual(v.size());
  for (size_t i = 0; i < v.size(); ++i) residual[i] = v[i] - coarse_centroid[i];
  return codebooks.encode(residual);
}

Codebooks train_codebooks(const std::vector<ImageRecord>& train,
                          const CodebookTrainParams& params,
                          const std::string& trained_on) {
  if (train.empty()) throw UsageError("train_codebooks: empty training set");
  if (train.front().descriptors.kind != DescriptorKind::real) {
    throw UsageError("codebooks apply to real-valued descriptors only");
  }
  uint32_t dim = train.front().descriptors.dim;
  if (params.pq_m == 0 || dim % params.pq_m != 0) {
    throw UsageError("pq_m must divide the descriptor dimension");
  }
  if (params.pq_s == 0 || params.pq_s > 256) {
    throw UsageError("pq_s must lie in [1, 256] so codes fit one byte");
  }

  size_t total = 0;
  for (const auto& rec : train) total += rec.descriptors.size();

  // Deterministic stride subsample when the pool is large.
  size_t stride = 1;
  if (total > params.max_samples && params.max_samples > 0) {
    stride = (total + params.max_samples - 1) / params.max_samples;
  }
  std::vector<float> sample;
  sample.reserve((total / stride + 1) * dim);
  size_t seen = 0;
  for (const auto& rec : train) {
    for (size_t i = 0; i < rec.descriptors.size(); ++i, ++seen) {
      if (seen % stride != 0) continue;
      auto row = rec.descriptors.real_row(i);
      sample.insert(sample.end(), row.begin(), row.end());
    }
  }
  size_t count = sample.size() / dim;
  if (count < params.coarse_v || count < params.pq_s) {
    throw UsageError("training set too small for the requested codebooks");
  }

  Codebooks books;
  books.dim = dim;
  books.trained_on = trained_on;

  KmeansResult coarse = train_kmeans(sample, count, dim, params.coarse_v,
                                     params.kmeans_iters, params.seed);
  books.coarse.v = params.coarse_v;
  books.coarse.dim = dim;
  books.coarse.centroids = std::move(coarse.centroids);

  uint32_t subdim = dim / params.pq_m;
  auto train_blocks = [&](bool residual) {
    PqCodebooks pq;
    pq.m = params.pq_m;
    pq.s = params.pq_s;
    pq.subdim = subdim;
    pq.centroids.assign(size_t(params.pq_m) * params.pq_s * subdim, 0.0f);
    std::vector<float> block_sample(count * size_t(subdim));
    for (uint32_t b = 0; b < params.pq_m; ++b) {
      for (size_t i = 0; i < count; ++i) {
        const float* src = sample.data() + i * dim + size_t(b) * subdim;
        float* dst = block_sample.data() + i * subdim;
        if (residual) {
          auto center = books.coarse.centroid(coarse.assignment[i]);
          for (uint32_t d = 0; d < subdim; ++d) {
            dst[d] = src[d] - center[size_t(b) * subdim + d];
          }
        } else {
          std::copy(src, src + subdim, dst);
        }
      }
      KmeansResult km =
          train_kmeans(block_sample, count, subdim, params.pq_s,
                       params.kmeans_iters, params.seed + 1000 + b);
      std::copy(km.centroids.begin(), km.centroids.end(),
                pq.centroids.begin() + size_t(b) * params.pq_s * subdim);
    }
    return pq;
  };
  books.residual = train_blocks(true);
  books.compression = train_blocks(false);
  return books;
}

void Codebooks::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write codebooks " + path.string());
  out.write(kCodebookMagic, 4);
  write_pod(out, kContainerVersion);
  write_pod(out, dim);
  write_string(out, trained_on);
  write_pod(out, coarse.v);
  write_floats(out, coarse.centroids);
  for (const PqCodebooks* pq : {&residual, &compression}) {
    write_pod(out, pq->m);
    write_pod(out, pq->s);
    write_pod(out, pq->subdim);
    write_floats(out, pq->centroids);
  }
  if (!out) throw DataError("write failure on " + path.string());
}

Codebooks Codebooks::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open codebooks " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCodebookMagic, 4) != 0) {
    throw DataError(path.string() + " is not a codebook file");
  }
  uint32_t version = read_pod<uint32_t>(in, "version");
  if (version != kContainerVersion) {
    throw DataError("unsupported codebook version");
  }
  Codebooks books;
  books.dim = read_pod<uint32_t>(in, "dim");
  books.trained_on = read_string(in, "trained_on");
  books.coarse.v = read_pod<uint32_t>(in, "coarse v");
  books.coarse.dim = books.dim;
  books.coarse.centroids = read_floats(in, "coarse centroids");
  for (PqCodebooks* pq : {&books.residual, &books.compression}) {
    pq->m = read_pod<uint32_t>(in, "pq m");
    pq->s = read_pod<uint32_t>(in, "pq s");
    pq->subdim = read_pod<uint32_t>(in, "pq subdim");
    pq->centroids = read_floats(in, "pq centroids");
  }
  return books;
}

IvfPqIndex IvfPqIndex::build(const std::vector<ImageRecord>& database,
                             const Codebooks& books) {
  IvfPqIndex index;
  index.coarse_ = books.coarse;
  index.pq_ = books.residual;
  index.trained_on_ = books.trained_on;
  index.cell_ids_.resize(books.coarse.v);
  index.cell_codes_.resize(books.coarse.v);

  uint64_t offset = 0;
  std::vector<float> residual(books.dim);
  std::vector<uint8_t> code(books.residual.m);
  for (const auto& rec : database) {
    if (rec.descriptors.kind != DescriptorKind::real) {
      throw UsageError("IVF-PQ indexes real-valued descriptors only");
    }
    if (rec.descriptors.dim != books.dim) {
      throw UsageError("descriptor dimension does not match the codebooks");
    }
    index.image_ids_.push_back(rec.image_id);
    index.image_counts_.push_back(
        static_cast<uint32_t>(rec.descriptors.size()));
    index.image_offsets_.push_back(offset);

    for (size_t i = 0; i < rec.descriptors.size(); ++i) {
      auto vec = rec.descriptors.real_row(i);
      uint32_t cell = index.coarse_.nearest(vec);
      auto center = index.coarse_.centroid(cell);
      for (size_t d = 0; d < vec.size(); ++d) {
        residual[d] = vec[d] - center[d];
      }
      index.pq_.encode_into(residual, code.data());
      index.cell_ids_[cell].push_back(offset + i);
      index.cell_codes_[cell].insert(index.cell_codes_[cell].end(),
                                     code.begin(), code.end());
    }
    offset += rec.descriptors.size();
  }
  index.total_features_ = offset;
  return index;
}

void IvfPqIndex::locate(uint64_t global_id, uint32_t& image,
                        uint32_t& kp) const {
  auto it = std::upper_bound(image_offsets_.begin(), image_offsets_.end(),
                             global_id);
  image = static_cast<uint32_t>(std::distance(image_offsets_.begin(), it) - 1);
  kp = static_cast<uint32_t>(global_id - image_offsets_[image]);
}

std::vector<Neighbor> IvfPqIndex::query(const DescriptorTable& table,
                                        size_t row, int k,
                                        int multi_assign_c) const {
  if (table.kind != DescriptorKind::real) {
    throw UsageError("query descriptor kind does not match the index");
  }
  return query_vector(table.real_row(row), k, multi_assign_c);
}

std::vector<Neighbor> IvfPqIndex::query_vector(std::span<const float> q, int k,
                                               int multi_assign_c) const {
  if (k < 1) throw UsageError("k must be >= 1");
  if (multi_assign_c < 1) throw UsageError("multi-assignment c must be >= 1");
  if (q.size() != coarse_.dim) {
    throw UsageError("query dimension does not match the index");
  }
  if (total_features_ == 0) return {};

  uint32_t c = std::min<uint32_t>(uint32_t(multi_assign_c), coarse_.v);
  std::vector<uint32_t> cells = coarse_.nearest_cells(q, c);

  const uint32_t m = pq_.m, s = pq_.s, subdim = pq_.subdim;
  std::vector<double> lut(size_t(m) * s);
  std::vector<double> res(coarse_.dim);

  // Max-heap of the k best (distance, id) pairs seen so far.
  using Entry = std::pair<double, uint64_t>;
  std::priority_queue<Entry> heap;

  for (uint32_t cell : cells) {
    auto center = coarse_.centroid(cell);
    for (size_t d = 0; d < res.size(); ++d) {
      res[d] = double(q[d]) - double(center[d]);
    }
    for (uint32_t b = 0; b < m; ++b) {
      const double* rblock = res.data() + size_t(b) * subdim;
      for (uint32_t j = 0; j < s; ++j) {
        auto cent = pq_.sub_centroid(b, j);
        double acc = 0.0;
        for (uint32_t d = 0; d < subdim; ++d) {
          double diff = rblock[d] - double(cent[d]);
          acc += diff * diff;
        }
        lut[size_t(b) * s + j] = acc;
      }
    }
    const auto& ids = cell_ids_[cell];
    const auto& codes = cell_codes_[cell];
    for (size_t e = 0; e < ids.size(); ++e) {
      const uint8_t* code = codes.data() + e * m;
      double dist = 0.0;
      for (uint32_t b = 0; b < m; ++b) {
        dist += lut[size_t(b) * s + code[b]];
      }
      Entry entry{dist, ids[e]};
      if (heap.size() < size_t(k)) {
        heap.push(entry);
      } else if (entry < heap.top()) {
        heap.pop();
        heap.push(entry);
      }
    }
  }

  std::vector<Entry> sorted;
  sorted.reserve(heap.size());
  while (!heap.empty()) {
    sorted.push_back(heap.top());
    heap.pop();
  }
  std::sort(sorted.begin(), sorted.end());

  std::vector<Neighbor> out;
  out.reserve(sorted.size());
  for (const auto& [dist, gid] : sorted) {
    Neighbor n;
    n.global_id = gid;
    locate(gid, n.image_index, n.keypoint_index);
    n.distance = std::sqrt(dist);
    out.push_back(n);
  }
  return out;
}

void IvfPqIndex::save(std::ostream& out) const {
  write_pod(out, static_cast<uint32_t>(DescriptorKind::real));
  write_string(out, trained_on_);
  write_pod(out, coarse_.dim);
  write_pod(out, coarse_.v);
  write_floats(out, coarse_.centroids);
  write_pod(out, pq_.m);
  write_pod(out, pq_.s);
  write_pod(out, pq_.subdim);
  write_floats(out, pq_.centroids);

  write_pod(out, static_cast<uint32_t>(image_ids_.size()));
  for (size_t i = 0; i < image_ids_.size(); ++i) {
    write_string(out, image_ids_[i]);
    write_pod(out, image_counts_[i]);
  }
  for (uint32_t cell = 0; cell < coarse_.v; ++cell) {
    write_pod(out, static_cast<uint64_t>(cell_ids_[cell].size()));
    out.write(reinterpret_cast<const char*>(cell_ids_[cell].data()),
              std::streamsize(cell_ids_[cell].size() * sizeof(uint64_t)));
    out.write(reinterpret_cast<const char*>(cell_codes_[cell].data()),
              std::streamsize(cell_codes_[cell].size()));
  }
}

IvfPqIndex IvfPqIndex::load_payload(std::istream& in,
                                    const std::string& what) {
  IvfPqIndex index;
  index.trained_on_ = read_string(in, what);
  index.coarse_.dim = read_pod<uint32_t>(in, what);
  index.coarse_.v = read_pod<uint32_t>(in, what);
  index.coarse_.centroids = read_floats(in, what);
  index.pq_.m = read_pod<uint32_t>(in, what);
  index.pq_.s = read_pod<uint32_t>(in, what);
  index.pq_.subdim = read_pod<uint32_t>(in, what);
  index.pq_.centroids = read_floats(in, what);

  uint32_t images = read_pod<uint32_t>(in, what);
  uint64_t offset = 0;
  for (uint32_t i = 0; i < images; ++i) {
    index.image_ids_.push_back(read_string(in, what));
    uint32_t count = read_pod<uint32_t>(in, what);
    index.image_counts_.push_back(count);
    index.image_offsets_.push_back(offset);
    offset += count;
  }
  index.total_features_ = offset;
  index.cell_ids_.resize(index.coarse_.v);
  index.cell_codes_.resize(index.coarse_.v);
  for (uint32_t cell = 0; cell < index.coarse_.v; ++cell) {
    uint64_t n = read_pod<uint64_t>(in, what);
    index.cell_ids_[cell].resize(n);
    in.read(reinterpret_cast<char*>(index.cell_ids_[cell].data()),
            std::streamsize(n * sizeof(uint64_t)));
    index.cell_codes_[cell].resize(n * index.pq_.m);
    in.read(reinterpret_cast<char*>(index.cell_codes_[cell].data()),
            std::streamsize(index.cell_codes_[cell].size()));
    if (!in) throw DataError("truncated stream while reading " + what);
  }
  return index;
}

void save_index(const KnnIndex& index, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write index " + path.string());
  out.write(kIndexMagic, 4);
  write_pod(out, kContainerVersion);
  index.save(out);
  if (!out) throw DataError("write failure on " + path.string());
}

std::unique_ptr<KnnIndex> load_index(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open index " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kIndexMagic, 4) != 0) {
    throw DataError(path.string() + " is not an index file");
  }
  uint32_t version = read_pod<uint32_t>(in, "index version");
  if (version != kContainerVersion) {
    throw DataError("unsupported index version");
  }
  uint32_t kind_raw = read_pod<uint32_t>(in, "index kind");
  std::string what = "index " + path.string();
  if (kind_raw == static_cast<uint32_t>(DescriptorKind::real)) {
    return std::make_unique<IvfPqIndex>(IvfPqIndex::load_payload(in, what));
  }
  if (kind_raw == static_cast<uint32_t>(DescriptorKind::binary)) {
    return load_mih_payload(in, what);
  }
  throw DataError("unknown index kind in " + path.string());
}

}  // namespace qbret
