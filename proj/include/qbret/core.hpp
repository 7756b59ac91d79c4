#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace qbret {

inline constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

// Usage errors abort the requested operation (CLI exit code 1); data errors
// mean broken or inconsistent input files (CLI exit code 2).
class UsageError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};
class DataError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class DescriptorKind : uint32_t { real = 0, binary = 1 };

std::string to_string(DescriptorKind kind);
DescriptorKind descriptor_kind_from_string(const std::string& s);

// Symmetric 2x2 shape matrix [[a,b],[b,c]], unit determinant.
struct AffineShape {
  double a = 1.0;
  double b = 0.0;
  double c = 1.0;
  double det() const { return a * c - b * b; }
  // Smallest eigenvalue; positive for a valid shape.
  double min_eigenvalue() const;
};

struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  double scale = 1.0;        // patch radius in pixels, > 0
  double orientation = 0.0;  // radians in [-pi, pi), counter-clockwise
  double response = 0.0;
  std::optional<AffineShape> affine;
  uint32_t descriptor_id = 0;
};

// Throws UsageError on violated invariants (scale, orientation range,
// affine shape validity).
void validate_keypoint(const Keypoint& kp);

// Fixed-size binary descriptor; bit i lives in words[i/64] at position i%64,
// unused high bits are zero.
struct BinaryCode {
  std::vector<uint64_t> words;
  uint32_t bits = 0;

  static BinaryCode zeros(uint32_t bits);
  bool get(uint32_t i) const { return (words[i >> 6] >> (i & 63)) & 1u; }
  void set(uint32_t i, bool v);
};

// Flat row-major descriptor storage. One kind and one dimension per dataset.
struct DescriptorTable {
  DescriptorKind kind = DescriptorKind::real;
  uint32_t dim = 0;  // components for real, bit length for binary

  std::vector<float> real_data;
  std::vector<uint64_t> binary_data;

  size_t words_per_code() const { return (size_t(dim) + 63) / 64; }
  size_t size() const;
  void resize(size_t count);

  std::span<const float> real_row(size_t i) const;
  std::span<float> real_row(size_t i);
  std::span<const uint64_t> binary_row(size_t i) const;
  std::span<uint64_t> binary_row(size_t i);
};

struct ImageRecord {
  std::string image_id;
  std::vector<Keypoint> keypoints;
  DescriptorTable descriptors;
};

// |keypoints| == |descriptors| and descriptor_id values form the identity
// range [0, |keypoints|). Throws UsageError.
void validate_image_record(const ImageRecord& rec);

struct BoundingBox {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;
  bool contains(double x, double y) const {
    return x >= x1 && x <= x2 && y >= y1 && y <= y2;
  }
  double area() const { return (x2 - x1) * (y2 - y1); }
};

// A single (query keypoint, database keypoint) match hypothesis. Expanded
// correspondences carry their seed's d_ref/d_kNN so they score identically.
struct Correspondence {
  Keypoint query_kp;
  Keypoint db_kp;
  std::string db_image;
  uint32_t query_feature_index = 0;
  uint32_t db_feature_index = 0;
  double feature_distance = 0.0;   // d_ref of the originating seed
  double seed_knn_distance = 0.0;  // d_kNN of the originating seed
  bool is_seed = false;
};

struct QuerySpec {
  ImageRecord image;  // already cropped to the bounding box
  std::optional<BoundingBox> bounding_box;
  int budget_n = 1;  // upper bound on kNN queries issued
  int k = 1;         // neighbors per query
};

// Crops `image` to `box` (keypoints whose (x, y) lies inside, descriptors
// re-packed) and validates budget/k. Throws UsageError.
QuerySpec make_query_spec(const ImageRecord& image,
                          std::optional<BoundingBox> box, int budget_n, int k);

// sqrt(sum((a_i - b_i)^2)), accumulated in double. Throws UsageError on
// dimension mismatch.
double euclidean_distance(std::span<const float> a, std::span<const float> b);

// Count of differing bits. Throws UsageError on length mismatch.
int hamming_distance(const BinaryCode& a, const BinaryCode& b);
// Raw word-level variant for canonical equal-width codes.
int hamming_distance_words(std::span<const uint64_t> a,
                           std::span<const uint64_t> b);

// Wraps theta into [-pi, pi); exact for inputs already in range. Throws
// UsageError on non-finite input.
double normalize_angle(double theta);

// Absolute angular difference on the circle, in [0, pi].
double circular_abs_diff(double a, double b);

}  // namespace qbret
