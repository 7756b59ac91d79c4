#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "qbret/core.hpp"

namespace qbret {

struct ManifestEntry {
  std::string image_id;
  std::filesystem::path feature_file;  // relative to base_dir unless absolute
};

struct DatasetManifest {
  DescriptorKind descriptor_kind = DescriptorKind::real;
  uint32_t dimension = 0;  // d for real, bit length for binary
  bool square_root_weighting = false;
  std::vector<ManifestEntry> image_entries;
  std::filesystem::path base_dir;  // directory the manifest was loaded from

  std::filesystem::path resolve(const ManifestEntry& e) const;
};

DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest,
                   const std::filesystem::path& path);

// Binary feature file: "QBFT" magic, version, kind, dimension, count, then
// count fixed 36-byte keypoint records (x, y, scale, orientation, response
// as f32; u32 affine flag; 3 f32 for the symmetric shape matrix), then the
// descriptor payload (count*dim f32, or count*ceil(dim/8) bytes).
ImageRecord load_feature_file(const std::filesystem::path& path,
                              const std::string& image_id);
void write_feature_file(const ImageRecord& rec,
                        const std::filesystem::path& path);

// Loads every entry; applies square-root weighting when the manifest says so.
// Throws DataError on malformed files, UsageError on kind/dimension mixups.
std::vector<ImageRecord> load_dataset(const DatasetManifest& manifest);

// Component-wise square root, no l1 normalization. Throws UsageError on a
// negative component.
std::vector<double> root_weight_descriptor(std::span<const double> v);
// Same weighting applied to a float descriptor table at load time.
void root_weight_in_place(DescriptorTable& table);

struct QueryGroundTruth {
  std::string name;            // e.g. "all_souls_1"
  std::string query_image_id;  // first token of <name>_query.txt
  BoundingBox bounding_box;
  std::vector<std::string> positive_ids;  // good + ok
  std::vector<std::string> junk_ids;
};

struct GroundTruth {
  std::vector<QueryGroundTruth> queries;  // sorted by name
};

// Oxford text layout: <name>_query.txt holds "id x1 y1 x2 y2";
// <name>_{good,ok,junk}.txt hold one image id per line.
GroundTruth load_groundtruth(const std::filesystem::path& dir);
void write_groundtruth(const GroundTruth& gt,
                       const std::filesystem::path& dir);

struct TransformRanges {
  double rotation_min = -kPi;
  double rotation_max = kPi;
  double scale_min = 0.5;
  double scale_max = 2.0;
  double translation = 200.0;  // jitter of the planted object center, px
};

struct SyntheticConfig {
  uint32_t num_images = 100;
  uint32_t features_per_image = 300;
  uint32_t num_objects = 1;
  uint32_t object_size = 30;         // keypoints per object
  uint32_t positives_per_object = 10;
  uint32_t train_images = 0;         // extra distractor-only split
  double noise_sigma = 0.0;          // descriptor noise (expected bit flips
                                     // for binary datasets)
  DescriptorKind descriptor_kind = DescriptorKind::real;
  uint32_t dim = 32;
  TransformRanges transform;
  double canvas = 1000.0;  // image extent in pixels

  // Distractor texture. 0 words = fully i.i.d. descriptors; otherwise each
  // distractor draws a pool word plus Gaussian noise, which makes background
  // clutter confusable across images the way repeated textures are.
  uint32_t distractor_words = 0;
  double distractor_word_sigma = 0.0;
  double cluster_radius = 4.0;  // spatial spread of a distractor cluster
  uint32_t cluster_size = 8;

  // Each positive carries a random fraction in [coverage_min, 1] of the
  // object's keypoints; the subset is a spatially contiguous patch around a
  // random anchor, mimicking partial views.
  double coverage_min = 1.0;

  // When positive, object descriptors also draw from the word pool (word
  // plus this sigma), so object features are confusable with background
  // texture the way real local features are.
  double object_word_sigma = 0.0;

  uint64_t seed = 1;
};

struct PlantedPair {
  uint32_t object = 0;
  uint32_t image_index = 0;   // into database
  uint32_t query_index = 0;   // keypoint index in the object's query image
  uint32_t db_index = 0;      // keypoint index in the database image
};

struct PlantedTransform {
  uint32_t object = 0;
  uint32_t image_index = 0;
  double rotation = 0.0;
  double scale = 1.0;
  double tx = 0.0;
  double ty = 0.0;
};

struct SyntheticDataset {
  std::vector<ImageRecord> database;
  std::vector<ImageRecord> train;    // empty unless train_images > 0
  std::vector<ImageRecord> queries;  // one per object
  GroundTruth ground_truth;
  std::vector<PlantedPair> planted_pairs;
  std::vector<PlantedTransform> planted_transforms;
};

// Deterministic for a fixed seed. Each object is a spread constellation of
// high-response keypoints; positives contain it under a random similarity
// transform with descriptor noise; distractors are clustered low-response
// features. Throws UsageError on infeasible configs.
SyntheticDataset generate_synthetic(const SyntheticConfig& config);

// Writes db/train/query manifests, feature files and the ground-truth
// directory under out_dir.
struct SyntheticPaths {
  std::filesystem::path db_manifest;
  std::filesystem::path train_manifest;  // empty if no train split
  std::filesystem::path query_manifest;
  std::filesystem::path groundtruth_dir;
};
SyntheticPaths write_synthetic(const SyntheticDataset& data,
                               const std::filesystem::path& out_dir);

SyntheticConfig synthetic_config_from_json_file(
    const std::filesystem::path& path);

}  // namespace qbret
