#include "qbret/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "qbret/rng.hpp"

namespace qbret {
namespace {

constexpr char kFeatureMagic[4] = {'Q', 'B', 'F', 'T'};
constexpr uint32_t kFeatureVersion = 1;

[[noreturn]] void parse_fail(const std::filesystem::path& path,
                             std::streamoff offset, const std::string& what) {
  throw DataError("parse error in " + path.string() + " at offset " +
                  std::to_string(offset) + ": " + what);
}

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in, const std::filesystem::path& path,
           const std::string& what) {
  T v{};
  std::streamoff off = in.tellg();
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) parse_fail(path, off, "short read while reading " + what);
  return v;
}

}  // namespace

std::filesystem::path DatasetManifest::resolve(const ManifestEntry& e) const {
  if (e.feature_file.is_absolute()) return e.feature_file;
  return base_dir / e.feature_file;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest " + path.string() + ": " + e.what());
  }

  DatasetManifest m;
  m.base_dir = path.parent_path();
  try {
    m.descriptor_kind =
        descriptor_kind_from_string(j.at("descriptor_kind").get<std::string>());
    m.dimension = j.at("dimension").get<uint32_t>();
    m.square_root_weighting = j.value("square_root_weighting", false);
    for (const auto& e : j.at("images")) {
      ManifestEntry entry;
      entry.image_id = e.at("id").get<std::string>();
      entry.feature_file = e.at("file").get<std::string>();
      m.image_entries.push_back(std::move(entry));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest " + path.string() + ": " + e.what());
  }

  std::set<std::string> ids;
  for (const auto& e : m.image_entries) {
    if (!ids.insert(e.image_id).second) {
      throw DataError("manifest " + path.string() + ": duplicate image id " +
                      e.image_id);
    }
  }
  if (m.square_root_weighting && m.descriptor_kind != DescriptorKind::real) {
    throw UsageError("square_root_weighting applies to real descriptors only");
  }
  return m;
}

void save_manifest(const DatasetManifest& manifest,
                   const std::filesystem::path& path) {
  nlohmann::json j;
  j["descriptor_kind"] = to_string(manifest.descriptor_kind);
  j["dimension"] = manifest.dimension;
  j["square_root_weighting"] = manifest.square_root_weighting;
  nlohmann::json images = nlohmann::json::array();
  for (const auto& e : manifest.image_entries) {
    images.push_back(
        {{"id", e.image_id}, {"file", e.feature_file.generic_string()}});
  }
  j["images"] = std::move(images);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << j.dump(2) << "\n";
}

ImageRecord load_feature_file(const std::filesystem::path& path,
                              const std::string& image_id) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open feature file " + path.string());

  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kFeatureMagic, 4) != 0) {
    parse_fail(path, 0, "bad magic");
  }
  uint32_t version = read_pod<uint32_t>(in, path, "version");
  if (version != kFeatureVersion) {
    parse_fail(path, 4, "unsupported version " + std::to_string(version));
  }
  uint32_t kind_raw = read_pod<uint32_t>(in, path, "descriptor kind");
  if (kind_raw > 1) parse_fail(path, 8, "bad descriptor kind");
  uint32_t dim = read_pod<uint32_t>(in, path, "dimension");
  uint32_t count = read_pod<uint32_t>(in, path, "count");
  if (dim == 0) parse_fail(path, 12, "zero dimension");

  ImageRecord rec;
  rec.image_id = image_id;
  rec.descriptors.kind = static_cast<DescriptorKind>(kind_raw);
  rec.descriptors.dim = dim;
  rec.keypoints.reserve(count);

  for (uint32_t i = 0; i < count; ++i) {
    std::streamoff off = in.tellg();
    float fields[5];
    in.read(reinterpret_cast<char*>(fields), sizeof(fields));
    uint32_t affine_flag = 0;
    in.read(reinterpret_cast<char*>(&affine_flag), sizeof(affine_flag));
    float shape[3];
    in.read(reinterpret_cast<char*>(shape), sizeof(shape));
    if (!in) parse_fail(path, off, "short keypoint record");

    Keypoint kp;
    kp.x = fields[0];
    kp.y = fields[1];
    kp.scale = fields[2];
    kp.orientation = fields[3];
    kp.response = fields[4];
    if (affine_flag == 1) {
      kp.affine = AffineShape{shape[0], shape[1], shape[2]};
    } else if (affine_flag != 0) {
      parse_fail(path, off + 20, "bad affine flag");
    }
    kp.descriptor_id = i;
    try {
      validate_keypoint(kp);
    } catch (const UsageError& e) {
      parse_fail(path, off, std::string("invalid keypoint: ") + e.what());
    }
    rec.keypoints.push_back(kp);
  }

  if (rec.descriptors.kind == DescriptorKind::real) {
    rec.descriptors.real_data.resize(size_t(count) * dim);
    std::streamoff off = in.tellg();
    in.read(reinterpret_cast<char*>(rec.descriptors.real_data.data()),
            std::streamsize(rec.descriptors.real_data.size() * sizeof(float)));
    if (!in) parse_fail(path, off, "short descriptor payload");
  } else {
    size_t bytes_per_code = (size_t(dim) + 7) / 8;
    std::vector<uint8_t> raw(size_t(count) * bytes_per_code);
    std::streamoff off = in.tellg();
    in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
    if (!in) parse_fail(path, off, "short descriptor payload");
    rec.descriptors.binary_data.assign(
        size_t(count) * rec.descriptors.words_per_code(), 0);
    for (uint32_t i = 0; i < count; ++i) {
      auto row = rec.descriptors.binary_row(i);
      const uint8_t* src = raw.data() + size_t(i) * bytes_per_code;
      for (size_t bte = 0; bte < bytes_per_code; ++bte) {
        row[bte >> 3] |= uint64_t(src[bte]) << ((bte & 7) * 8);
      }
    }
  }
  return rec;
}

void write_feature_file(const ImageRecord& rec,
                        const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write feature file " + path.string());

  out.write(kFeatureMagic, 4);
  write_pod(out, kFeatureVersion);
  write_pod(out, static_cast<uint32_t>(rec.descriptors.kind));
  write_pod(out, rec.descriptors.dim);
  write_pod(out, static_cast<uint32_t>(rec.keypoints.size()));

  for (const Keypoint& kp : rec.keypoints) {
    float fields[5] = {static_cast<float>(kp.x), static_cast<float>(kp.y),
                       static_cast<float>(kp.scale),
                       static_cast<float>(kp.orientation),
                       static_cast<float>(kp.response)};
    out.write(reinterpret_cast<const char*>(fields), sizeof(fields));
    uint32_t affine_flag = kp.affine ? 1 : 0;
    write_pod(out, affine_flag);
    float shape[3] = {0.0f, 0.0f, 0.0f};
    if (kp.affine) {
      shape[0] = static_cast<float>(kp.affine->a);
      shape[1] = static_cast<float>(kp.affine->b);
      shape[2] = static_cast<float>(kp.affine->c);
    }
    out.write(reinterpret_cast<const char*>(shape), sizeof(shape));
  }

  if (rec.descriptors.kind == DescriptorKind::real) {
    out.write(
        reinterpret_cast<const char*>(rec.descriptors.real_data.data()),
        std::streamsize(rec.descriptors.real_data.size() * sizeof(float)));
  } else {
    size_t bytes_per_code = (size_t(rec.descriptors.dim) + 7) / 8;
    for (size_t i = 0; i < rec.descriptors.size(); ++i) {
      auto row = rec.descriptors.binary_row(i);
      for (size_t bte = 0; bte < bytes_per_code; ++bte) {
        uint8_t b = uint8_t(row[bte >> 3] >> ((bte & 7) * 8));
        out.write(reinterpret_cast<const char*>(&b), 1);
      }
    }
  }
  if (!out) throw DataError("write failure on " + path.string());
}

std::vector<ImageRecord> load_dataset(const DatasetManifest& manifest) {
  std::vector<ImageRecord> records;
  records.reserve(manifest.image_entries.size());
  for (const auto& entry : manifest.image_entries) {
    ImageRecord rec = load_feature_file(manifest.resolve(entry), entry.image_id);
    if (rec.descriptors.kind != manifest.descriptor_kind ||
        rec.descriptors.dim != manifest.dimension) {
      throw UsageError("feature file " + manifest.resolve(entry).string() +
                       " does not match the manifest descriptor kind/dimension");
    }
    if (manifest.square_root_weighting) {
      root_weight_in_place(rec.descriptors);
    }
    validate_image_record(rec);
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<double> root_weight_descriptor(std::span<const double> v) {
  std::vector<double> out(v.size());
  for (size_t i = 0; i < v.size(); ++i) {
    if (v[i] < 0.0) {
      throw UsageError("root_weight_descriptor: negative component");
    }
    out[i] = std::sqrt(v[i]);
  }
  return out;
}

void root_weight_in_place(DescriptorTable& table) {
  if (table.kind != DescriptorKind::real) {
    throw UsageError("square-root weighting applies to real descriptors only");
  }
  for (float& f : table.real_data) {
    if (f < 0.0f) {
      throw UsageError("root_weight_descriptor: negative component");
    }
    f = std::sqrt(f);
  }
}

namespace {

std::vector<std::string> read_id_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open ground-truth file " + path.string());
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) {
      line.pop_back();
    }
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

}  // namespace

GroundTruth load_groundtruth(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw DataError("ground-truth directory not found: " + dir.string());
  }
  std::vector<std::filesystem::path> query_files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string name = e.path().filename().string();
    if (name.size() > 10 && name.ends_with("_query.txt")) {
      query_files.push_back(e.path());
    }
  }
  std::sort(query_files.begin(), query_files.end());

  GroundTruth gt;
  for (const auto& qf : query_files) {
    std::string stem = qf.filename().string();
    stem.resize(stem.size() - std::string("_query.txt").size());

    QueryGroundTruth q;
    q.name = stem;
    {
      std::ifstream in(qf);
      std::string id;
      double x1, y1, x2, y2;
      if (!(in >> id >> x1 >> y1 >> x2 >> y2)) {
        throw DataError("malformed query file " + qf.string());
      }
      q.query_image_id = id;
      q.bounding_box = BoundingBox{x1, y1, x2, y2};
      if (!(q.bounding_box.area() > 0.0)) {
        throw DataError("query file " + qf.string() +
                        ": bounding box has non-positive area");
      }
    }
    auto good = read_id_lines(dir / (stem + "_good.txt"));
    auto ok = read_id_lines(dir / (stem + "_ok.txt"));
    q.positive_ids = std::move(good);
    q.positive_ids.insert(q.positive_ids.end(), ok.begin(), ok.end());
    q.junk_ids = read_id_lines(dir / (stem + "_junk.txt"));

    if (q.positive_ids.empty()) {
      throw DataError("query " + stem + " has no positive images");
    }
    std::set<std::string> pos(q.positive_ids.begin(), q.positive_ids.end());
    for (const auto& id : q.junk_ids) {
      if (pos.count(id)) {
        throw DataError("query " + stem + ": image " + id +
                        " listed as both positive and junk");
      }
    }
    gt.queries.push_back(std::move(q));
  }
  return gt;
}

void write_groundtruth(const GroundTruth& gt,
                       const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& q : gt.queries) {
    {
      std::ofstream out(dir / (q.name + "_query.txt"));
      out << q.query_image_id << " " << q.bounding_box.x1 << " "
          << q.bounding_box.y1 << " " << q.bounding_box.x2 << " "
          << q.bounding_box.y2 << "\n";
    }
    {
      std::ofstream out(dir / (q.name + "_good.txt"));
      for (const auto& id : q.positive_ids) out << id << "\n";
    }
    std::ofstream(dir / (q.name + "_ok.txt"));
    {
      std::ofstream out(dir / (q.name + "_junk.txt"));
      for (const auto& id : q.junk_ids) out << id << "\n";
    }
  }
}

namespace {

struct FeatureDraft {
  Keypoint kp;
  std::vector<float> real;
  BinaryCode code;
};

void append_feature(ImageRecord& rec, const FeatureDraft& f) {
  Keypoint kp = f.kp;
  kp.descriptor_id = static_cast<uint32_t>(rec.keypoints.size());
  rec.keypoints.push_back(kp);
  if (rec.descriptors.kind == DescriptorKind::real) {
    rec.descriptors.real_data.insert(rec.descriptors.real_data.end(),
                                     f.real.begin(), f.real.end());
  } else {
    rec.descriptors.binary_data.insert(rec.descriptors.binary_data.end(),
                                       f.code.words.begin(),
                                       f.code.words.end());
  }
}

std::vector<float> draw_real_descriptor(Rng& rng, uint32_t dim) {
  std::vector<float> v(dim);
  for (auto& f : v) f = static_cast<float>(rng.uniform(0.0, 255.0));
  return v;
}

BinaryCode draw_binary_descriptor(Rng& rng, uint32_t bits) {
  BinaryCode c = BinaryCode::zeros(bits);
  for (uint32_t i = 0; i < bits; ++i) c.set(i, rng.uniform() < 0.5);
  return c;
}

// Best-candidate sampling keeps object keypoints spread apart.
std::pair<double, double> spread_position(Rng& rng,
                                          const std::vector<Keypoint>& placed,
                                          double lo, double hi) {
  double bx = rng.uniform(lo, hi), by = rng.uniform(lo, hi);
  double best = -1.0;
  for (int attempt = 0; attempt < 8; ++attempt) {
    double x = rng.uniform(lo, hi), y = rng.uniform(lo, hi);
    double nearest = std::numeric_limits<double>::max();
    for (const auto& kp : placed) {
      double dx = kp.x - x, dy = kp.y - y;
      nearest = std::min(nearest, dx * dx + dy * dy);
    }
    if (placed.empty()) nearest = 0.0;
    if (nearest > best) {
      best = nearest;
      bx = x;
      by = y;
    }
  }
  return {bx, by};
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticConfig& config) {
  if (config.object_size > config.features_per_image) {
    throw UsageError("object_size must not exceed features_per_image");
  }
  if (config.num_objects == 0 || config.num_images == 0) {
    throw UsageError("need at least one object and one image");
  }
  if (config.positives_per_object == 0 ||
      config.positives_per_object > config.num_images) {
    throw UsageError("positives_per_object must lie in [1, num_images]");
  }
  if (config.noise_sigma < 0.0) {
    throw UsageError("noise_sigma must be non-negative");
  }
  if (config.dim == 0) throw UsageError("descriptor dimension must be > 0");
  if (!(config.coverage_min > 0.0 && config.coverage_min <= 1.0)) {
    throw UsageError("coverage_min must lie in (0, 1]");
  }

  Rng rng(config.seed);
  const bool real = config.descriptor_kind == DescriptorKind::real;
  const double margin = config.canvas * 0.15;

  // Shared distractor texture pool.
  std::vector<std::vector<float>> word_pool_real;
  std::vector<BinaryCode> word_pool_bin;
  for (uint32_t w = 0; w < config.distractor_words; ++w) {
    if (real) {
      word_pool_real.push_back(draw_real_descriptor(rng, config.dim));
    } else {
      word_pool_bin.push_back(draw_binary_descriptor(rng, config.dim));
    }
  }

  auto draw_distractor_descriptor = [&](FeatureDraft& f) {
    if (config.distractor_words == 0) {
      if (real) {
        f.real = draw_real_descriptor(rng, config.dim);
      } else {
        f.code = draw_binary_descriptor(rng, config.dim);
      }
      return;
    }
    size_t w = rng.index(config.distractor_words);
    if (real) {
      f.real = word_pool_real[w];
      for (auto& c : f.real) {
        c += static_cast<float>(rng.gaussian() * config.distractor_word_sigma);
      }
    } else {
      f.code = word_pool_bin[w];
      double flip_p = std::min(1.0, config.distractor_word_sigma / config.dim);
      for (uint32_t i = 0; i < config.dim; ++i) {
        if (rng.uniform() < flip_p) f.code.set(i, !f.code.get(i));
      }
    }
  };

  // Clustered low-response clutter; fills `count` features into rec.
  auto add_distractors = [&](ImageRecord& rec, uint32_t count) {
    uint32_t added = 0;
    while (added < count) {
      double cx = rng.uniform(margin, config.canvas - margin);
      double cy = rng.uniform(margin, config.canvas - margin);
      uint32_t in_cluster = std::min(count - added, config.cluster_size);
      for (uint32_t i = 0; i < in_cluster; ++i) {
        FeatureDraft f;
        f.kp.x = cx + rng.gaussian() * config.cluster_radius;
        f.kp.y = cy + rng.gaussian() * config.cluster_radius;
        f.kp.scale = rng.uniform(2.0, 10.0);
        f.kp.orientation = normalize_angle(rng.uniform(-kPi, kPi));
        f.kp.response = rng.uniform(0.0, 0.65);
        draw_distractor_descriptor(f);
        append_feature(rec, f);
        ++added;
      }
    }
  };

  // Object constellations.
  struct ObjectModel {
    std::vector<Keypoint> keypoints;  // canonical geometry, centered layout
    std::vector<std::vector<float>> real;
    std::vector<BinaryCode> bin;
  };
  std::vector<ObjectModel> objects(config.num_objects);
  const double obj_lo = margin, obj_hi = config.canvas - margin;
  const bool pooled_objects =
      config.object_word_sigma > 0.0 && config.distractor_words > 0;
  for (auto& obj : objects) {
    for (uint32_t i = 0; i < config.object_size; ++i) {
      Keypoint kp;
      auto [x, y] = spread_position(rng, obj.keypoints, obj_lo, obj_hi);
      kp.x = x;
      kp.y = y;
      kp.scale = rng.uniform(4.0, 8.0);
      kp.orientation = normalize_angle(rng.uniform(-kPi, kPi));
      kp.response = rng.uniform(0.75, 1.0);
      obj.keypoints.push_back(kp);
      if (real) {
        std::vector<float> desc;
        if (pooled_objects) {
          desc = word_pool_real[size_t(rng.index(config.distractor_words))];
          for (auto& c : desc) {
            c += static_cast<float>(rng.gaussian() * config.object_word_sigma);
          }
        } else {
          desc = draw_real_descriptor(rng, config.dim);
        }
        obj.real.push_back(std::move(desc));
      } else {
        BinaryCode code;
        if (pooled_objects) {
          code = word_pool_bin[size_t(rng.index(config.distractor_words))];
          double flip_p =
              std::min(1.0, config.object_word_sigma / config.dim);
          for (uint32_t b = 0; b < config.dim; ++b) {
            if (rng.uniform() < flip_p) code.set(b, !code.get(b));
          }
        } else {
          code = draw_binary_descriptor(rng, config.dim);
        }
        obj.bin.push_back(std::move(code));
      }
    }
  }

  // Object -> database image assignment.
  std::vector<std::vector<uint32_t>> object_images(config.num_objects);
  for (uint32_t o = 0; o < config.num_objects; ++o) {
    object_images[o] =
        rng.sample_indices(config.num_images, config.positives_per_object);
    std::sort(object_images[o].begin(), object_images[o].end());
  }

  auto image_name = [](const char* prefix, uint32_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%04u", prefix, i);
    return std::string(buf);
  };

  SyntheticDataset out;

  auto perturb_descriptor = [&](FeatureDraft& f, const ObjectModel& obj,
                                uint32_t kp_idx) {
    if (real) {
      f.real = obj.real[kp_idx];
      if (config.noise_sigma > 0.0) {
        for (auto& c : f.real) {
          c += static_cast<float>(rng.gaussian() * config.noise_sigma);
        }
      }
    } else {
      f.code = obj.bin[kp_idx];
      if (config.noise_sigma > 0.0) {
        double flip_p = std::min(1.0, config.noise_sigma / config.dim);
        for (uint32_t i = 0; i < config.dim; ++i) {
          if (rng.uniform() < flip_p) f.code.set(i, !f.code.get(i));
        }
      }
    }
  };

  // Database images: planted objects first, then clutter.
  for (uint32_t img = 0; img < config.num_images; ++img) {
    ImageRecord rec;
    rec.image_id = image_name("img", img);
    rec.descriptors.kind = config.descriptor_kind;
    rec.descriptors.dim = config.dim;

    for (uint32_t o = 0; o < config.num_objects; ++o) {
      if (!std::binary_search(object_images[o].begin(), object_images[o].end(),
                              img)) {
        continue;
      }
      const ObjectModel& obj = objects[o];
      double rot = rng.uniform(config.transform.rotation_min,
                               config.transform.rotation_max);
      double sc = rng.uniform(config.transform.scale_min,
                              config.transform.scale_max);
      double cx = config.canvas / 2.0 +
                  rng.uniform(-config.transform.translation,
                              config.transform.translation);
      double cy = config.canvas / 2.0 +
                  rng.uniform(-config.transform.translation,
                              config.transform.translation);
      double cos_r = std::cos(rot), sin_r = std::sin(rot);
      double ox = config.canvas / 2.0, oy = config.canvas / 2.0;

      out.planted_transforms.push_back(
          {o, img, rot, sc, cx - ox, cy - oy});

      // Partial view: the keypoints closest to a random anchor, so the
      // visible part stays spatially contiguous.
      uint32_t anchor = uint32_t(rng.index(obj.keypoints.size()));
      double coverage = 1.0;
      if (config.coverage_min < 1.0) {
        double u = rng.uniform();
        coverage = config.coverage_min +
                   (1.0 - config.coverage_min) * u * u;
      }
      size_t keep = std::max<size_t>(
          1, size_t(std::llround(coverage * double(obj.keypoints.size()))));
      std::vector<uint32_t> subset(obj.keypoints.size());
      for (uint32_t i = 0; i < subset.size(); ++i) subset[i] = i;
      std::sort(subset.begin(), subset.end(), [&](uint32_t a, uint32_t b) {
        const Keypoint& ka = obj.keypoints[a];
        const Keypoint& kb = obj.keypoints[b];
        const Keypoint& an = obj.keypoints[anchor];
        double da = (ka.x - an.x) * (ka.x - an.x) + (ka.y - an.y) * (ka.y - an.y);
        double db = (kb.x - an.x) * (kb.x - an.x) + (kb.y - an.y) * (kb.y - an.y);
        if (da != db) return da < db;
        return a < b;
      });
      subset.resize(keep);
      std::sort(subset.begin(), subset.end());

      for (uint32_t i : subset) {
        const Keypoint& src = obj.keypoints[i];
        FeatureDraft f;
        double dx = src.x - ox, dy = src.y - oy;
        f.kp.x = cx + sc * (cos_r * dx - sin_r * dy);
        f.kp.y = cy + sc * (sin_r * dx + cos_r * dy);
        f.kp.scale = sc * src.scale;
        f.kp.orientation = normalize_angle(src.orientation + rot);
        f.kp.response = src.response;
        perturb_descriptor(f, obj, i);
        out.planted_pairs.push_back(
            {o, img, i, static_cast<uint32_t>(rec.keypoints.size())});
        append_feature(rec, f);
      }
    }

    uint32_t planted = static_cast<uint32_t>(rec.keypoints.size());
    if (planted < config.features_per_image) {
      add_distractors(rec, config.features_per_image - planted);
    }
    out.database.push_back(std::move(rec));
  }

  // Query images: the canonical object plus clutter, no transform, no noise.
  for (uint32_t o = 0; o < config.num_objects; ++o) {
    ImageRecord rec;
    rec.image_id = image_name("query", o);
    rec.descriptors.kind = config.descriptor_kind;
    rec.descriptors.dim = config.dim;
    const ObjectModel& obj = objects[o];
    for (uint32_t i = 0; i < obj.keypoints.size(); ++i) {
      FeatureDraft f;
      f.kp = obj.keypoints[i];
      if (real) {
        f.real = obj.real[i];
      } else {
        f.code = obj.bin[i];
      }
      append_feature(rec, f);
    }
    if (config.object_size < config.features_per_image) {
      add_distractors(rec, config.features_per_image - config.object_size);
    }
    out.queries.push_back(std::move(rec));

    QueryGroundTruth q;
    q.name = "q" + std::to_string(o);
    q.query_image_id = image_name("query", o);
    q.bounding_box = BoundingBox{0.0, 0.0, config.canvas, config.canvas};
    for (uint32_t img : object_images[o]) {
      q.positive_ids.push_back(image_name("img", img));
    }
    out.ground_truth.queries.push_back(std::move(q));
  }

  // Training split: clutter only, same texture statistics.
  for (uint32_t t = 0; t < config.train_images; ++t) {
    ImageRecord rec;
    rec.image_id = image_name("train", t);
    rec.descriptors.kind = config.descriptor_kind;
    rec.descriptors.dim = config.dim;
    add_distractors(rec, config.features_per_image);
    out.train.push_back(std::move(rec));
  }

  return out;
}

namespace {

DatasetManifest make_manifest(const std::vector<ImageRecord>& records,
                              const std::filesystem::path& out_dir,
                              const std::filesystem::path& subdir,
                              DescriptorKind kind, uint32_t dim) {
  DatasetManifest m;
  m.descriptor_kind = kind;
  m.dimension = dim;
  m.base_dir = out_dir;
  std::filesystem::create_directories(out_dir / subdir);
  for (const auto& rec : records) {
    std::filesystem::path rel = subdir / (rec.image_id + ".feat");
    write_feature_file(rec, out_dir / rel);
    m.image_entries.push_back({rec.image_id, rel});
  }
  return m;
}

}  // namespace

SyntheticPaths write_synthetic(const SyntheticDataset& data,
                               const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  if (data.database.empty()) throw UsageError("empty synthetic database");
  DescriptorKind kind = data.database.front().descriptors.kind;
  uint32_t dim = data.database.front().descriptors.dim;

  SyntheticPaths paths;
  DatasetManifest db =
      make_manifest(data.database, out_dir, "features_db", kind, dim);
  paths.db_manifest = out_dir / "db_manifest.json";
  save_manifest(db, paths.db_manifest);

  DatasetManifest qm =
      make_manifest(data.queries, out_dir, "features_query", kind, dim);
  paths.query_manifest = out_dir / "query_manifest.json";
  save_manifest(qm, paths.query_manifest);

  if (!data.train.empty()) {
    DatasetManifest tm =
        make_manifest(data.train, out_dir, "features_train", kind, dim);
    paths.train_manifest = out_dir / "train_manifest.json";
    save_manifest(tm, paths.train_manifest);
  }

  paths.groundtruth_dir = out_dir / "groundtruth";
  write_groundtruth(data.ground_truth, paths.groundtruth_dir);
  return paths;
}

SyntheticConfig synthetic_config_from_json_file(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open synthetic config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("synthetic config " + path.string() + ": " + e.what());
  }
  SyntheticConfig c;
  c.num_images = j.value("num_images", c.num_images);
  c.features_per_image = j.value("features_per_image", c.features_per_image);
  c.num_objects = j.value("num_objects", c.num_objects);
  c.object_size = j.value("object_size", c.object_size);
  c.positives_per_object =
      j.value("positives_per_object", c.positives_per_object);
  c.train_images = j.value("train_images", c.train_images);
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  if (j.contains("descriptor_kind")) {
    c.descriptor_kind =
        descriptor_kind_from_string(j["descriptor_kind"].get<std::string>());
  }
  c.dim = j.value("dim", c.dim);
  if (j.contains("rotation_range")) {
    c.transform.rotation_min = deg2rad(j["rotation_range"][0].get<double>());
    c.transform.rotation_max = deg2rad(j["rotation_range"][1].get<double>());
  }
  if (j.contains("scale_range")) {
    c.transform.scale_min = j["scale_range"][0].get<double>();
    c.transform.scale_max = j["scale_range"][1].get<double>();
  }
  c.transform.translation = j.value("translation", c.transform.translation);
  c.canvas = j.value("canvas", c.canvas);
  c.distractor_words = j.value("distractor_words", c.distractor_words);
  c.distractor_word_sigma =
      j.value("distractor_word_sigma", c.distractor_word_sigma);
  c.cluster_radius = j.value("cluster_radius", c.cluster_radius);
  c.cluster_size = j.value("cluster_size", c.cluster_size);
  c.seed = j.value("seed", c.seed);
  return c;
}

}  // namespace qbret
