#include <cmath>
#include <fstream>
#include <set>

#include <doctest.h>

#include "qbret/dataset.hpp"
#include "qbret/rng.hpp"
#include "test_util.hpp"

using namespace qbret;

namespace {

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(bool(in));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_SUITE_BEGIN("dataset");

TEST_CASE("root weighting") {
  std::vector<double> zeros(8, 0.0);
  CHECK(root_weight_descriptor(zeros) == zeros);

  std::vector<double> squares{4.0, 9.0, 16.0};
  std::vector<double> expected{2.0, 3.0, 4.0};
  CHECK(root_weight_descriptor(squares) == expected);

  Rng rng(1);
  std::vector<double> v(128);
  for (auto& f : v) f = rng.uniform(0.0, 255.0);
  auto w = root_weight_descriptor(v);
  for (size_t i = 0; i < v.size(); ++i) {
    CHECK(w[i] * w[i] == doctest::Approx(v[i]).epsilon(1e-9));
  }

  std::vector<double> negative{1.0, -0.5};
  CHECK_THROWS_AS((void)root_weight_descriptor(negative), UsageError);
}

TEST_CASE("feature file round trip is byte identical") {
  test::TempDir tmp;
  ImageRecord rec = test::make_real_image("img0", 17, 8, 3);
  rec.keypoints[4].affine = AffineShape{1.25, 0.25, 0.85};  // det 1.0
  auto path_a = tmp.path() / "a.feat";
  auto path_b = tmp.path() / "b.feat";
  write_feature_file(rec, path_a);
  ImageRecord loaded = load_feature_file(path_a, "img0");
  write_feature_file(loaded, path_b);
  CHECK(read_bytes(path_a) == read_bytes(path_b));
  CHECK(loaded.keypoints.size() == rec.keypoints.size());
  CHECK(loaded.keypoints[4].affine.has_value());
}

TEST_CASE("binary feature file round trip") {
  test::TempDir tmp;
  ImageRecord rec = test::make_binary_image("bin0", 9, 256, 11);
  auto path_a = tmp.path() / "a.feat";
  auto path_b = tmp.path() / "b.feat";
  write_feature_file(rec, path_a);
  ImageRecord loaded = load_feature_file(path_a, "bin0");
  CHECK(loaded.descriptors.binary_data == rec.descriptors.binary_data);
  write_feature_file(loaded, path_b);
  CHECK(read_bytes(path_a) == read_bytes(path_b));
}

TEST_CASE("load_dataset") {
  test::TempDir tmp;

  SUBCASE("empty manifest gives an empty database") {
    DatasetManifest m;
    m.descriptor_kind = DescriptorKind::real;
    m.dimension = 8;
    m.base_dir = tmp.path();
    CHECK(load_dataset(m).empty());
  }

  SUBCASE("two-image fixture with three keypoints each") {
    DatasetManifest m;
    m.descriptor_kind = DescriptorKind::real;
    m.dimension = 8;
    m.base_dir = tmp.path();
    for (int i = 0; i < 2; ++i) {
      std::string id = "img" + std::to_string(i);
      ImageRecord rec = test::make_real_image(id, 3, 8, 20 + i);
      write_feature_file(rec, tmp.path() / (id + ".feat"));
      m.image_entries.push_back({id, id + ".feat"});
    }
    auto records = load_dataset(m);
    REQUIRE(records.size() == 2);
    CHECK(records[0].keypoints.size() == 3);
    CHECK(records[1].keypoints.size() == 3);
  }

  SUBCASE("manifest json round trip") {
    DatasetManifest m;
    m.descriptor_kind = DescriptorKind::real;
    m.dimension = 16;
    m.square_root_weighting = true;
    m.image_entries.push_back({"a", "feats/a.feat"});
    auto path = tmp.path() / "manifest.json";
    save_manifest(m, path);
    DatasetManifest loaded = load_manifest(path);
    CHECK(loaded.descriptor_kind == DescriptorKind::real);
    CHECK(loaded.dimension == 16);
    CHECK(loaded.square_root_weighting);
    REQUIRE(loaded.image_entries.size() == 1);
    CHECK(loaded.image_entries[0].image_id == "a");
  }

  SUBCASE("kind mismatch is a usage error") {
    DatasetManifest m;
    m.descriptor_kind = DescriptorKind::binary;
    m.dimension = 8;
    m.base_dir = tmp.path();
    ImageRecord rec = test::make_real_image("img0", 3, 8, 20);
    write_feature_file(rec, tmp.path() / "img0.feat");
    m.image_entries.push_back({"img0", "img0.feat"});
    CHECK_THROWS_AS((void)load_dataset(m), UsageError);
  }

  SUBCASE("square root weighting applied at load") {
    DatasetManifest m;
    m.descriptor_kind = DescriptorKind::real;
    m.dimension = 8;
    m.square_root_weighting = true;
    m.base_dir = tmp.path();
    ImageRecord rec = test::make_real_image("img0", 3, 8, 20);
    write_feature_file(rec, tmp.path() / "img0.feat");
    m.image_entries.push_back({"img0", "img0.feat"});
    auto records = load_dataset(m);
    auto raw = rec.descriptors.real_row(0);
    auto weighted = records[0].descriptors.real_row(0);
    for (size_t i = 0; i < raw.size(); ++i) {
      CHECK(weighted[i] == doctest::Approx(std::sqrt(raw[i])).epsilon(1e-6));
    }
  }
}

TEST_CASE("malformed feature files name the file and offset") {
  test::TempDir tmp;
  ImageRecord rec = test::make_real_image("img0", 5, 8, 77);
  auto path = tmp.path() / "truncated.feat";
  write_feature_file(rec, path);
  auto bytes = read_bytes(path);
  {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), std::streamsize(bytes.size() / 2));
  }
  try {
    (void)load_feature_file(path, "img0");
    FAIL("expected a DataError");
  } catch (const DataError& e) {
    std::string msg = e.what();
    CHECK(msg.find("truncated.feat") != std::string::npos);
    CHECK(msg.find("offset") != std::string::npos);
  }

  auto bad_magic = tmp.path() / "bad.feat";
  {
    std::ofstream out(bad_magic, std::ios::binary);
    out << "NOPE                    ";
  }
  CHECK_THROWS_AS((void)load_feature_file(bad_magic, "x"), DataError);
}

TEST_CASE("ground truth fixtures") {
  test::TempDir tmp;
  auto dir = tmp.path() / "gt";
  std::filesystem::create_directories(dir);

  auto write_lines = [&](const std::string& name,
                         const std::vector<std::string>& lines) {
    std::ofstream out(dir / name);
    for (const auto& l : lines) out << l << "\n";
  };
  write_lines("q1_query.txt", {"queryimg 10 20 110 220"});
  write_lines("q1_good.txt", {"pos_a", "pos_b"});
  write_lines("q1_ok.txt", {"pos_c"});
  write_lines("q1_junk.txt", {"junk_a"});

  SUBCASE("parses good + ok + junk with the bounding box") {
    GroundTruth gt = load_groundtruth(dir);
    REQUIRE(gt.queries.size() == 1);
    const auto& q = gt.queries[0];
    CHECK(q.name == "q1");
    CHECK(q.query_image_id == "queryimg");
    CHECK(q.positive_ids.size() == 3);
    CHECK(q.junk_ids.size() == 1);
    CHECK(q.bounding_box.x1 == 10.0);
    CHECK(q.bounding_box.y2 == 220.0);
  }

  SUBCASE("empty junk file gives empty junk list") {
    write_lines("q1_junk.txt", {});
    GroundTruth gt = load_groundtruth(dir);
    CHECK(gt.queries[0].junk_ids.empty());
  }

  SUBCASE("overlapping good and junk ids are rejected") {
    write_lines("q1_junk.txt", {"pos_a"});
    CHECK_THROWS_AS((void)load_groundtruth(dir), DataError);
  }

  SUBCASE("round trip through write_groundtruth") {
    GroundTruth gt = load_groundtruth(dir);
    auto dir2 = tmp.path() / "gt2";
    write_groundtruth(gt, dir2);
    GroundTruth gt2 = load_groundtruth(dir2);
    REQUIRE(gt2.queries.size() == 1);
    CHECK(gt2.queries[0].positive_ids == gt.queries[0].positive_ids);
    CHECK(gt2.queries[0].junk_ids == gt.queries[0].junk_ids);
    CHECK(gt2.queries[0].query_image_id == gt.queries[0].query_image_id);
  }
}

TEST_CASE("synthetic generator determinism and planting") {
  SyntheticConfig cfg;
  cfg.num_images = 20;
  cfg.features_per_image = 40;
  cfg.num_objects = 2;
  cfg.object_size = 8;
  cfg.positives_per_object = 5;
  cfg.noise_sigma = 2.0;
  cfg.dim = 16;
  cfg.seed = 9;

  SyntheticDataset a = generate_synthetic(cfg);
  SyntheticDataset b = generate_synthetic(cfg);

  SUBCASE("same seed gives bit-identical datasets") {
    REQUIRE(a.database.size() == b.database.size());
    for (size_t i = 0; i < a.database.size(); ++i) {
      CHECK(a.database[i].descriptors.real_data ==
            b.database[i].descriptors.real_data);
      REQUIRE(a.database[i].keypoints.size() == b.database[i].keypoints.size());
      for (size_t j = 0; j < a.database[i].keypoints.size(); ++j) {
        CHECK(a.database[i].keypoints[j].x == b.database[i].keypoints[j].x);
        CHECK(a.database[i].keypoints[j].orientation ==
              b.database[i].keypoints[j].orientation);
      }
    }
    REQUIRE(a.queries.size() == b.queries.size());
    for (size_t i = 0; i < a.queries.size(); ++i) {
      CHECK(a.queries[i].descriptors.real_data ==
            b.queries[i].descriptors.real_data);
    }
  }

  SUBCASE("ground truth matches the planted metadata") {
    REQUIRE(a.ground_truth.queries.size() == 2);
    for (uint32_t o = 0; o < 2; ++o) {
      std::set<std::string> planted;
      for (const auto& p : a.planted_pairs) {
        if (p.object == o) planted.insert(a.database[p.image_index].image_id);
      }
      std::set<std::string> gt(a.ground_truth.queries[o].positive_ids.begin(),
                               a.ground_truth.queries[o].positive_ids.end());
      CHECK(gt == planted);
      CHECK(gt.size() == 5);
    }
  }

  SUBCASE("planted transform maps query geometry onto db geometry") {
    for (const auto& pair : a.planted_pairs) {
      const PlantedTransform* tf = nullptr;
      for (const auto& t : a.planted_transforms) {
        if (t.object == pair.object && t.image_index == pair.image_index) {
          tf = &t;
          break;
        }
      }
      REQUIRE(tf != nullptr);
      const Keypoint& q = a.queries[pair.object].keypoints[pair.query_index];
      const Keypoint& d = a.database[pair.image_index].keypoints[pair.db_index];
      double ox = cfg.canvas / 2.0, oy = cfg.canvas / 2.0;
      double cos_r = std::cos(tf->rotation), sin_r = std::sin(tf->rotation);
      double ex = ox + tf->tx +
                  tf->scale * (cos_r * (q.x - ox) - sin_r * (q.y - oy));
      double ey = oy + tf->ty +
                  tf->scale * (sin_r * (q.x - ox) + cos_r * (q.y - oy));
      CHECK(std::abs(ex - d.x) < 1e-6);
      CHECK(std::abs(ey - d.y) < 1e-6);
      CHECK(d.scale / q.scale == doctest::Approx(tf->scale).epsilon(1e-9));
      CHECK(std::abs(normalize_angle(d.orientation - q.orientation -
                                     tf->rotation)) < 1e-9);
    }
  }
}

TEST_CASE("synthetic generator zero-noise identity plants byte-identical "
          "descriptors") {
  SyntheticConfig cfg;
  cfg.num_images = 10;
  cfg.features_per_image = 20;
  cfg.num_objects = 1;
  cfg.object_size = 6;
  cfg.positives_per_object = 4;
  cfg.noise_sigma = 0.0;
  cfg.dim = 8;
  cfg.transform.rotation_min = 0.0;
  cfg.transform.rotation_max = 0.0;
  cfg.transform.scale_min = 1.0;
  cfg.transform.scale_max = 1.0;
  cfg.transform.translation = 0.0;
  cfg.seed = 5;

  SyntheticDataset data = generate_synthetic(cfg);
  REQUIRE(!data.planted_pairs.empty());
  for (const auto& pair : data.planted_pairs) {
    auto q = data.queries[pair.object].descriptors.real_row(pair.query_index);
    auto d =
        data.database[pair.image_index].descriptors.real_row(pair.db_index);
    CHECK(std::equal(q.begin(), q.end(), d.begin(), d.end()));
  }
}

TEST_CASE("synthetic generator validates configs") {
  SyntheticConfig cfg;
  cfg.object_size = 50;
  cfg.features_per_image = 40;
  CHECK_THROWS_AS((void)generate_synthetic(cfg), UsageError);
}

TEST_CASE("write_synthetic produces loadable artifacts") {
  test::TempDir tmp;
  SyntheticConfig cfg;
  cfg.num_images = 6;
  cfg.features_per_image = 15;
  cfg.num_objects = 1;
  cfg.object_size = 5;
  cfg.positives_per_object = 3;
  cfg.train_images = 2;
  cfg.dim = 8;
  cfg.seed = 123;
  SyntheticDataset data = generate_synthetic(cfg);
  SyntheticPaths paths = write_synthetic(data, tmp.path() / "synth");

  DatasetManifest db = load_manifest(paths.db_manifest);
  auto records = load_dataset(db);
  REQUIRE(records.size() == 6);
  for (size_t i = 0; i < records.size(); ++i) {
    CHECK(records[i].descriptors.real_data ==
          data.database[i].descriptors.real_data);
  }
  DatasetManifest train = load_manifest(paths.train_manifest);
  CHECK(load_dataset(train).size() == 2);
  GroundTruth gt = load_groundtruth(paths.groundtruth_dir);
  CHECK(gt.queries.size() == 1);
}

TEST_SUITE_END();
