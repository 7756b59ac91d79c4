#include "qbret/core.hpp"

#include <bit>
#include <cmath>

namespace qbret {

std::string to_string(DescriptorKind kind) {
  return kind == DescriptorKind::real ? "real" : "binary";
}

DescriptorKind descriptor_kind_from_string(const std::string& s) {
  if (s == "real") return DescriptorKind::real;
  if (s == "binary") return DescriptorKind::binary;
  throw UsageError("unknown descriptor kind: " + s);
}

double AffineShape::min_eigenvalue() const {
  double tr = a + c;
  double disc = std::sqrt(std::max(0.0, tr * tr - 4.0 * det()));
  return (tr - disc) / 2.0;
}

void validate_keypoint(const Keypoint& kp) {
  if (!(kp.scale > 0.0) || !std::isfinite(kp.scale)) {
    throw UsageError("keypoint scale must be strictly positive");
  }
  if (!std::isfinite(kp.x) || !std::isfinite(kp.y) ||
      !std::isfinite(kp.orientation) || !std::isfinite(kp.response)) {
    throw UsageError("keypoint fields must be finite");
  }
  if (kp.orientation < -kPi || kp.orientation >= kPi) {
    throw UsageError("keypoint orientation must lie in [-pi, pi)");
  }
  if (kp.affine) {
    const AffineShape& s = *kp.affine;
    if (std::abs(s.det() - 1.0) > 1e-6) {
      throw UsageError("affine shape determinant must be within 1e-6 of 1");
    }
    if (!(s.a > 0.0) || !(s.min_eigenvalue() > 0.0)) {
      throw UsageError("affine shape must be positive definite");
    }
  }
}

BinaryCode BinaryCode::zeros(uint32_t bits) {
  BinaryCode c;
  c.bits = bits;
  c.words.assign((size_t(bits) + 63) / 64, 0);
  return c;
}

void BinaryCode::set(uint32_t i, bool v) {
  uint64_t mask = uint64_t(1) << (i & 63);
  if (v) {
    words[i >> 6] |= mask;
  } else {
    words[i >> 6] &= ~mask;
  }
}

size_t DescriptorTable::size() const {
  if (dim == 0) return 0;
  if (kind == DescriptorKind::real) return real_data.size() / dim;
  return binary_data.size() / words_per_code();
}

void DescriptorTable::resize(size_t count) {
  if (kind == DescriptorKind::real) {
    real_data.assign(count * dim, 0.0f);
  } else {
    binary_data.assign(count * words_per_code(), 0);
  }
}

std::span<const float> DescriptorTable::real_row(size_t i) const {
  return {real_data.data() + i * dim, dim};
}

std::span<float> DescriptorTable::real_row(size_t i) {
  return {real_data.data() + i * dim, dim};
}

std::span<const uint64_t> DescriptorTable::binary_row(size_t i) const {
  size_t w = words_per_code();
  return {binary_data.data() + i * w, w};
}

std::span<uint64_t> DescriptorTable::binary_row(size_t i) {
  size_t w = words_per_code();
  return {binary_data.data() + i * w, w};
}

void validate_image_record(const ImageRecord& rec) {
  if (rec.keypoints.size() != rec.descriptors.size()) {
    throw UsageError("image " + rec.image_id +
                     ": keypoint and descriptor counts differ");
  }
  for (size_t i = 0; i < rec.keypoints.size(); ++i) {
    validate_keypoint(rec.keypoints[i]);
    if (rec.keypoints[i].descriptor_id != i) {
      throw UsageError("image " + rec.image_id +
                       ": descriptor ids must form the range [0, n)");
    }
  }
}

QuerySpec make_query_spec(const ImageRecord& image,
                          std::optional<BoundingBox> box, int budget_n,
                          int k) {
  if (budget_n < 1) throw UsageError("query budget n must be >= 1");
  if (k < 1) throw UsageError("k must be >= 1");
  if (box && !(box->area() > 0.0)) {
    throw UsageError("query bounding box must have positive area");
  }

  QuerySpec spec;
  spec.bounding_box = box;
  spec.budget_n = budget_n;
  spec.k = k;
  if (!box) {
    spec.image = image;
    return spec;
  }

  ImageRecord cropped;
  cropped.image_id = image.image_id;
  cropped.descriptors.kind = image.descriptors.kind;
  cropped.descriptors.dim = image.descriptors.dim;
  for (size_t i = 0; i < image.keypoints.size(); ++i) {
    const Keypoint& kp = image.keypoints[i];
    if (!box->contains(kp.x, kp.y)) continue;
    Keypoint copy = kp;
    copy.descriptor_id = static_cast<uint32_t>(cropped.keypoints.size());
    cropped.keypoints.push_back(copy);
    if (image.descriptors.kind == DescriptorKind::real) {
      auto row = image.descriptors.real_row(i);
      cropped.descriptors.real_data.insert(cropped.descriptors.real_data.end(),
                                           row.begin(), row.end());
    } else {
      auto row = image.descriptors.binary_row(i);
      cropped.descriptors.binary_data.insert(
          cropped.descriptors.binary_data.end(), row.begin(), row.end());
    }
  }
  spec.image = std::move(cropped);
  return spec;
}

double euclidean_distance(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw UsageError("euclidean_distance: dimension mismatch");
  }
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return std::sqrt(acc);
}

int hamming_distance(const BinaryCode& a, const BinaryCode& b) {
  if (a.bits != b.bits) {
    throw UsageError("hamming_distance: bit length mismatch");
  }
  return hamming_distance_words(a.words, b.words);
}

int hamming_distance_words(std::span<const uint64_t> a,
                           std::span<const uint64_t> b) {
  int acc = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    acc += std::popcount(a[i] ^ b[i]);
  }
  return acc;
}

double normalize_angle(double theta) {
  if (!std::isfinite(theta)) {
    throw UsageError("normalize_angle: non-finite input");
  }
  // IEEE remainder is exact and maps into [-pi, pi]; fold +pi down.
  double r = std::remainder(theta, 2.0 * kPi);
  if (r >= kPi) r = -kPi;
  return r;
}

double circular_abs_diff(double a, double b) {
  double d = std::abs(std::remainder(a - b, 2.0 * kPi));
  return d;
}

}  // namespace qbret
