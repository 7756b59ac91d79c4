#include <cmath>

#include <doctest.h>

#include "qbret/core.hpp"
#include "qbret/rng.hpp"
#include "test_util.hpp"

using namespace qbret;

TEST_SUITE_BEGIN("core");

TEST_CASE("euclidean distance basics") {
  std::vector<float> v{1.0f, -2.0f, 3.5f, 0.0f};
  CHECK(euclidean_distance(v, v) == 0.0);

  std::vector<float> a{0.0f, 0.0f};
  std::vector<float> b{3.0f, 4.0f};
  CHECK(euclidean_distance(a, b) == doctest::Approx(5.0).epsilon(1e-15));

  std::vector<float> short_vec{1.0f};
  CHECK_THROWS_AS((void)euclidean_distance(a, short_vec), UsageError);
}

TEST_CASE("euclidean distance matches a scalar reference loop") {
  Rng rng(42);
  std::vector<float> a(128), b(128);
  for (int i = 0; i < 128; ++i) {
    a[i] = static_cast<float>(rng.uniform(0.0, 255.0));
    b[i] = static_cast<float>(rng.uniform(0.0, 255.0));
  }
  // Reference: plain indexed summation in double precision.
  double acc = 0.0;
  for (int i = 0; i < 128; ++i) {
    double diff = double(a[i]) - double(b[i]);
    acc += diff * diff;
  }
  double expected = std::sqrt(acc);
  CHECK(euclidean_distance(a, b) ==
        doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("hamming distance basics") {
  BinaryCode a = BinaryCode::zeros(4);
  BinaryCode b = BinaryCode::zeros(4);
  CHECK(hamming_distance(a, a) == 0);
  for (uint32_t i = 0; i < 4; ++i) b.set(i, true);
  CHECK(hamming_distance(a, b) == 4);

  BinaryCode c = BinaryCode::zeros(8);
  CHECK_THROWS_AS((void)hamming_distance(a, c), UsageError);
}

TEST_CASE("hamming distance equals a per-bit comparison loop") {
  Rng rng(7);
  BinaryCode a = BinaryCode::zeros(256);
  BinaryCode b = BinaryCode::zeros(256);
  for (uint32_t i = 0; i < 256; ++i) {
    a.set(i, rng.uniform() < 0.5);
    b.set(i, rng.uniform() < 0.5);
  }
  int expected = 0;
  for (uint32_t i = 0; i < 256; ++i) {
    if (a.get(i) != b.get(i)) expected++;
  }
  CHECK(hamming_distance(a, b) == expected);
}

TEST_CASE("normalize_angle") {
  CHECK(normalize_angle(0.0) == 0.0);
  CHECK(normalize_angle(3.0 * kPi) == doctest::Approx(-kPi).epsilon(1e-12));
  CHECK_THROWS_AS((void)normalize_angle(
                      std::numeric_limits<double>::infinity()),
                  UsageError);

  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    double theta = rng.uniform(-50.0, 50.0);
    double r = normalize_angle(theta);
    CHECK(r >= -kPi);
    CHECK(r < kPi);
    double cycles = (r - theta) / (2.0 * kPi);
    CHECK(std::abs(cycles - std::round(cycles)) < 1e-12);
    // Idempotence is exact.
    CHECK(normalize_angle(r) == r);
  }
}

TEST_CASE("distance metric properties on random pairs") {
  Rng rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<float> a(16), b(16);
    for (int i = 0; i < 16; ++i) {
      a[i] = static_cast<float>(rng.uniform(-10.0, 10.0));
      b[i] = static_cast<float>(rng.uniform(-10.0, 10.0));
    }
    double ab = euclidean_distance(a, b);
    CHECK(ab >= 0.0);
    CHECK(euclidean_distance(b, a) == ab);
    CHECK(euclidean_distance(a, a) == 0.0);
    if (a != b) CHECK(ab > 0.0);

    BinaryCode ca = BinaryCode::zeros(64), cb = BinaryCode::zeros(64);
    for (uint32_t i = 0; i < 64; ++i) {
      ca.set(i, rng.uniform() < 0.5);
      cb.set(i, rng.uniform() < 0.5);
    }
    int h = hamming_distance(ca, cb);
    CHECK(h >= 0);
    CHECK(h <= 64);
    CHECK(hamming_distance(cb, ca) == h);
    CHECK(hamming_distance(ca, ca) == 0);
    if (ca.words != cb.words) CHECK(h > 0);
  }
}

TEST_CASE("keypoint validation") {
  Keypoint kp;
  kp.scale = 2.0;
  CHECK_NOTHROW(validate_keypoint(kp));

  Keypoint bad_scale = kp;
  bad_scale.scale = 0.0;
  CHECK_THROWS_AS(validate_keypoint(bad_scale), UsageError);

  Keypoint bad_orientation = kp;
  bad_orientation.orientation = kPi;  // must be < pi
  CHECK_THROWS_AS(validate_keypoint(bad_orientation), UsageError);

  Keypoint affine_ok = kp;
  affine_ok.affine = AffineShape{2.0, 0.0, 0.5};  // det 1
  CHECK_NOTHROW(validate_keypoint(affine_ok));

  Keypoint affine_bad_det = kp;
  affine_bad_det.affine = AffineShape{2.0, 0.0, 1.0};  // det 2
  CHECK_THROWS_AS(validate_keypoint(affine_bad_det), UsageError);

  Keypoint affine_indefinite = kp;
  affine_indefinite.affine = AffineShape{-1.0, 0.0, -1.0};  // det 1, not SPD
  CHECK_THROWS_AS(validate_keypoint(affine_indefinite), UsageError);
}

TEST_CASE("query spec cropping") {
  ImageRecord img = test::make_real_image("img", 20, 4, 5, 100.0);
  BoundingBox box{25.0, 25.0, 75.0, 75.0};
  QuerySpec spec = make_query_spec(img, box, 10, 5);

  size_t expected = 0;
  for (const auto& kp : img.keypoints) {
    if (box.contains(kp.x, kp.y)) expected++;
  }
  CHECK(spec.image.keypoints.size() == expected);
  CHECK(spec.image.descriptors.size() == expected);
  CHECK_NOTHROW(validate_image_record(spec.image));
  // Cropped descriptors match their source rows.
  for (const auto& kp : spec.image.keypoints) {
    bool found = false;
    for (size_t i = 0; i < img.keypoints.size(); ++i) {
      if (img.keypoints[i].x == kp.x && img.keypoints[i].y == kp.y) {
        auto a = spec.image.descriptors.real_row(kp.descriptor_id);
        auto b = img.descriptors.real_row(i);
        found = std::equal(a.begin(), a.end(), b.begin());
        break;
      }
    }
    CHECK(found);
  }

  CHECK_THROWS_AS(make_query_spec(img, box, 0, 5), UsageError);
  CHECK_THROWS_AS(make_query_spec(img, box, 10, 0), UsageError);
  BoundingBox empty_box{10.0, 10.0, 10.0, 20.0};
  CHECK_THROWS_AS(make_query_spec(img, empty_box, 10, 5), UsageError);
}

TEST_SUITE_END();
