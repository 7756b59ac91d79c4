#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

#include <doctest.h>

#include "qbret/scoring.hpp"
#include "qbret/rng.hpp"

using namespace qbret;

namespace {

Correspondence corr(uint32_t q_idx, const std::string& image, uint32_t d_idx,
                    double d_ref, double d_knn) {
  Correspondence c;
  c.query_feature_index = q_idx;
  c.db_image = image;
  c.db_feature_index = d_idx;
  c.feature_distance = d_ref;
  c.seed_knn_distance = d_knn;
  c.query_kp.scale = 1.0;
  c.db_kp.scale = 1.0;
  return c;
}

}  // namespace

TEST_SUITE_BEGIN("scoring");

TEST_CASE("score formula") {
  CHECK(score_correspondence(5.0, 5.0, 3, 7) == 0.0);
  CHECK(score_correspondence(4.0, 0.0, 1, 1) == 2.0);

  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    double d_ref = rng.uniform(0.0, 100.0);
    double d_knn = d_ref + rng.uniform(0.0, 100.0);
    size_t nq = 1 + size_t(rng.index(5000));
    size_t nx = 1 + size_t(rng.index(5000));
    // Independent arithmetic route.
    double expected =
        std::sqrt(d_knn - d_ref) / std::sqrt(double(nq) * double(nx));
    CHECK(score_correspondence(d_knn, d_ref, nq, nx) ==
          doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("negative margins clamp to zero and count a warning") {
  ScoreDiagnostics diag;
  CHECK(score_correspondence(1.0, 2.0, 1, 1, &diag) == 0.0);
  CHECK(diag.clamped_scores == 1);
  CHECK_THROWS_AS((void)score_correspondence(1.0, 0.5, 0, 1), UsageError);
}

TEST_CASE("score monotonicity") {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    double d_knn = rng.uniform(10.0, 100.0);
    double a = rng.uniform(0.0, d_knn);
    double b = rng.uniform(0.0, d_knn);
    if (a > b) std::swap(a, b);
    // Non-increasing in d_ref.
    CHECK(score_correspondence(d_knn, a, 10, 10) >=
          score_correspondence(d_knn, b, 10, 10));
    // Non-decreasing in d_knn.
    CHECK(score_correspondence(d_knn + 5.0, a, 10, 10) >=
          score_correspondence(d_knn, a, 10, 10));
  }
}

TEST_CASE("doubling the image feature count divides the score by sqrt(2)") {
  double s1 = score_correspondence(9.0, 1.0, 17, 100);
  double s2 = score_correspondence(9.0, 1.0, 17, 200);
  CHECK(s1 / s2 == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("burst filter") {
  SUBCASE("single correspondence is unchanged") {
    std::vector<Correspondence> cs{corr(0, "a", 0, 1.0, 5.0)};
    auto out = burst_filter(cs);
    REQUIRE(out.size() == 1);
    CHECK(out[0].db_feature_index == 0);
  }

  SUBCASE("highest margin per (feature, image) survives") {
    std::vector<Correspondence> cs{
        corr(7, "a", 1, 3.0, 5.0),   // margin 2
        corr(7, "a", 2, 1.0, 5.0),   // margin 4: survivor
        corr(7, "b", 3, 2.0, 5.0),   // other image, kept
        corr(8, "a", 4, 4.0, 5.0),   // other feature, kept
    };
    auto out = burst_filter(cs);
    REQUIRE(out.size() == 3);
    std::map<std::pair<std::string, uint32_t>, uint32_t> got;
    for (const auto& c : out) {
      got[{c.db_image, c.query_feature_index}] = c.db_feature_index;
    }
    CHECK(got[{std::string("a"), 7u}] == 2);
    CHECK(got[{std::string("b"), 7u}] == 3);
    CHECK(got[{std::string("a"), 8u}] == 4);
  }

  SUBCASE("equal margins break ties by ascending db keypoint index") {
    std::vector<Correspondence> cs{
        corr(1, "a", 9, 1.0, 3.0),
        corr(1, "a", 4, 1.0, 3.0),
        corr(1, "a", 6, 1.0, 3.0),
    };
    auto out = burst_filter(cs);
    REQUIRE(out.size() == 1);
    CHECK(out[0].db_feature_index == 4);
  }

  SUBCASE("random burst sets match a group-by-max oracle") {
    Rng rng(3);
    std::vector<Correspondence> cs;
    for (int i = 0; i < 2000; ++i) {
      cs.push_back(corr(uint32_t(rng.index(40)),
                        "img" + std::to_string(rng.index(10)),
                        uint32_t(rng.index(500)), rng.uniform(0.0, 10.0),
                        10.0));
    }
    auto out = burst_filter(cs);
    // Oracle: hash grouping with explicit max selection.
    std::map<std::pair<std::string, uint32_t>, std::pair<double, uint32_t>>
        oracle;
    for (const auto& c : cs) {
      double margin = c.seed_knn_distance - c.feature_distance;
      auto key = std::make_pair(c.db_image, c.query_feature_index);
      auto it = oracle.find(key);
      if (it == oracle.end() || margin > it->second.first ||
          (margin == it->second.first &&
           c.db_feature_index < it->second.second)) {
        oracle[key] = {margin, c.db_feature_index};
      }
    }
    REQUIRE(out.size() == oracle.size());
    for (const auto& c : out) {
      auto it = oracle.find({c.db_image, c.query_feature_index});
      REQUIRE(it != oracle.end());
      CHECK(c.db_feature_index == it->second.second);
    }
  }
}

TEST_CASE("score accumulation") {
  std::map<std::string, size_t> counts{{"a", 100}, {"b", 400}};

  SUBCASE("empty input gives an empty table") {
    ScoreTable t = accumulate_scores({}, 50, counts);
    CHECK(t.scores.empty());
  }

  SUBCASE("three correspondences to one image sum") {
    std::vector<Correspondence> cs{
        corr(0, "a", 0, 1.0, 5.0),
        corr(1, "a", 1, 2.0, 5.0),
        corr(2, "a", 2, 0.0, 5.0),
    };
    ScoreTable t = accumulate_scores(cs, 50, counts);
    double expected = score_correspondence(5.0, 1.0, 50, 100) +
                      score_correspondence(5.0, 2.0, 50, 100) +
                      score_correspondence(5.0, 0.0, 50, 100);
    CHECK(t.scores.at("a") == doctest::Approx(expected).epsilon(1e-12));
  }

  SUBCASE("10k random correspondences match a reference accumulation") {
    Rng rng(4);
    std::vector<Correspondence> cs;
    std::map<std::string, size_t> many_counts;
    for (int i = 0; i < 20; ++i) {
      many_counts["img" + std::to_string(i)] = 50 + 10 * i;
    }
    for (int i = 0; i < 10000; ++i) {
      double d_ref = rng.uniform(0.0, 10.0);
      cs.push_back(corr(uint32_t(rng.index(100)),
                        "img" + std::to_string(rng.index(20)),
                        uint32_t(i), d_ref, d_ref + rng.uniform(0.0, 5.0)));
    }
    ScoreTable t = accumulate_scores(cs, 777, many_counts);
    std::map<std::string, double> reference;
    for (const auto& c : cs) {
      reference[c.db_image] +=
          std::sqrt(c.seed_knn_distance - c.feature_distance) /
          (std::sqrt(777.0) * std::sqrt(double(many_counts[c.db_image])));
    }
    for (const auto& [id, score] : t.scores) {
      CHECK(score == doctest::Approx(reference[id]).epsilon(1e-9));
    }
  }

  SUBCASE("ranking is descending with id tie-break") {
    std::vector<Correspondence> cs{
        corr(0, "b", 0, 0.0, 4.0),
        corr(1, "a", 1, 0.0, 4.0),
        corr(2, "a", 2, 0.0, 4.0),
    };
    std::map<std::string, size_t> eq{{"a", 100}, {"b", 100}};
    ScoreTable t = accumulate_scores(cs, 10, eq);
    auto ranked = ranked_images(t);
    REQUIRE(ranked.size() == 2);
    CHECK(ranked[0].image_id == "a");  // two contributions beat one
    CHECK(ranked[1].image_id == "b");
  }
}

TEST_CASE("wgc reranking") {
  std::map<std::string, size_t> counts{{"a", 100}};

  auto geo_corr = [&](uint32_t qi, double q_orient, double d_orient,
                      double q_scale, double d_scale) {
    Correspondence c = corr(qi, "a", qi, 0.0, 4.0);
    c.query_kp.orientation = normalize_angle(q_orient);
    c.db_kp.orientation = normalize_angle(d_orient);
    c.query_kp.scale = q_scale;
    c.db_kp.scale = d_scale;
    return c;
  };

  SUBCASE("a single consistent transform keeps the full score") {
    std::vector<Correspondence> cs;
    for (uint32_t i = 0; i < 6; ++i) {
      cs.push_back(geo_corr(i, 0.3, 0.3 + 0.5, 4.0, 8.0));
    }
    ScoreTable t = accumulate_scores(cs, 10, counts);
    auto reranked = wgc_rerank(cs, t);
    REQUIRE(reranked.size() == 1);
    CHECK(reranked[0].score == doctest::Approx(t.scores.at("a")));
  }

  SUBCASE("votes split across two opposite angle bins halve the score") {
    std::vector<Correspondence> cs;
    for (uint32_t i = 0; i < 4; ++i) {
      // Same scale ratio everywhere; half the votes rotated by pi.
      double d_orient = (i % 2 == 0) ? 0.1 : 0.1 + kPi;
      cs.push_back(geo_corr(i, 0.0, d_orient, 4.0, 4.0));
    }
    ScoreTable t = accumulate_scores(cs, 10, counts);
    auto reranked = wgc_rerank(cs, t);
    REQUIRE(reranked.size() == 1);
    CHECK(reranked[0].score ==
          doctest::Approx(t.scores.at("a") / 2.0).epsilon(1e-12));
  }

  SUBCASE("random votes match a dense joint-histogram oracle") {
    Rng rng(5);
    std::vector<Correspondence> cs;
    for (uint32_t i = 0; i < 400; ++i) {
      Correspondence c = corr(i, "a", i, rng.uniform(0.0, 2.0), 4.0);
      c.query_kp.orientation = normalize_angle(rng.uniform(-kPi, kPi));
      c.db_kp.orientation = normalize_angle(rng.uniform(-kPi, kPi));
      c.query_kp.scale = rng.uniform(1.0, 16.0);
      c.db_kp.scale = rng.uniform(1.0, 16.0);
      cs.push_back(c);
    }
    ScoreTable t = accumulate_scores(cs, 10, counts);
    auto reranked = wgc_rerank(cs, t);

    // Oracle: dense 32x16 joint histogram, then marginal peaks.
    double joint[32][16] = {};
    for (const auto& c : cs) {
      double vote = score_correspondence(c.seed_knn_distance,
                                         c.feature_distance, 10, 100);
      int ab = wgc_angle_bin(c.db_kp.orientation - c.query_kp.orientation);
      int sb = wgc_scale_bin(std::log2(c.db_kp.scale / c.query_kp.scale));
      joint[ab][sb] += vote;
    }
    double peak_a = 0.0, peak_s = 0.0;
    for (int a = 0; a < 32; ++a) {
      double sum = 0.0;
      for (int s = 0; s < 16; ++s) sum += joint[a][s];
      peak_a = std::max(peak_a, sum);
    }
    for (int s = 0; s < 16; ++s) {
      double sum = 0.0;
      for (int a = 0; a < 32; ++a) sum += joint[a][s];
      peak_s = std::max(peak_s, sum);
    }
    CHECK(reranked[0].score ==
          doctest::Approx(std::min(peak_a, peak_s)).epsilon(1e-9));
  }

  SUBCASE("histogram mass equals the image score mass") {
    Rng rng(6);
    std::vector<Correspondence> cs;
    for (uint32_t i = 0; i < 50; ++i) {
      Correspondence c = corr(i, "a", i, rng.uniform(0.0, 3.0), 4.0);
      c.query_kp.orientation = normalize_angle(rng.uniform(-kPi, kPi));
      c.db_kp.orientation = normalize_angle(rng.uniform(-kPi, kPi));
      c.query_kp.scale = rng.uniform(1.0, 64.0);  // exercises clamping
      c.db_kp.scale = rng.uniform(1.0, 64.0);
      cs.push_back(c);
    }
    ScoreTable t = accumulate_scores(cs, 10, counts);
    // All votes land in bins: the best possible reranked score (all mass in
    // one bin pair) is the table score, and any split keeps total mass.
    auto reranked = wgc_rerank(cs, t);
    CHECK(reranked[0].score <= t.scores.at("a") + 1e-12);
    CHECK(reranked[0].score > 0.0);
  }
}

TEST_CASE("average precision") {
  using Set = std::unordered_set<std::string>;

  SUBCASE("perfect ranking scores 1.0") {
    std::vector<std::string> ranked{"p1", "p2", "p3", "n1", "n2"};
    CHECK(average_precision(ranked, Set{"p1", "p2", "p3"}, {}) ==
          doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("junk is discarded before scoring") {
    std::vector<std::string> ranked{"j", "p1", "n", "p2"};
    // Filtered ranking [pos, neg, pos] with 2 positives:
    // step1: recall 1/2, precision 1   -> ap += 0.5 * (1 + 1)/2 = 0.5
    // step2: recall 1/2, precision 1/2 -> ap += 0
    // step3: recall 1,   precision 2/3 -> ap += 0.5 * (0.5 + 2/3)/2 = 7/24
    double expected = 0.5 + 7.0 / 24.0;
    CHECK(average_precision(ranked, Set{"p1", "p2"}, Set{"j"}) ==
          doctest::Approx(expected).epsilon(1e-12));
  }

  SUBCASE("inserting junk anywhere never changes ap") {
    Rng rng(7);
    std::vector<std::string> base{"p1", "n1", "p2", "n2", "p3"};
    double ap = average_precision(base, Set{"p1", "p2", "p3"}, Set{});
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<std::string> with_junk = base;
      for (int j = 0; j < 3; ++j) {
        with_junk.insert(
            with_junk.begin() + long(rng.index(with_junk.size() + 1)),
            "junk" + std::to_string(trial) + "_" + std::to_string(j));
      }
      Set junk;
      for (const auto& id : with_junk) {
        if (id.starts_with("junk")) junk.insert(id);
      }
      CHECK(average_precision(with_junk, Set{"p1", "p2", "p3"}, junk) ==
            doctest::Approx(ap).epsilon(1e-12));
    }
  }

  SUBCASE("permuting negatives below the last positive keeps ap") {
    std::vector<std::string> a{"p1", "n1", "p2", "n2", "n3", "n4"};
    std::vector<std::string> b{"p1", "n1", "p2", "n4", "n3", "n2"};
    Set pos{"p1", "p2"};
    CHECK(average_precision(a, pos, {}) == average_precision(b, pos, {}));
  }

  SUBCASE("missing positives count as unretrieved") {
    std::vector<std::string> ranked{"p1"};
    CHECK(average_precision(ranked, Set{"p1", "p2"}, {}) ==
          doctest::Approx(0.5).epsilon(1e-12));
  }

  SUBCASE("empty positives are an error") {
    std::vector<std::string> ranked{"a"};
    CHECK_THROWS_AS((void)average_precision(ranked, {}, {}), UsageError);
  }
}

TEST_CASE("mean average precision") {
  std::vector<double> single{0.7};
  CHECK(mean_average_precision(single) == 0.7);
  std::vector<double> pair{1.0, 0.0};
  CHECK(mean_average_precision(pair) == 0.5);

  Rng rng(8);
  std::vector<double> aps(55);
  for (auto& ap : aps) ap = rng.uniform();
  double sum = 0.0;
  for (double ap : aps) sum += ap;
  CHECK(mean_average_precision(aps) ==
        doctest::Approx(sum / 55.0).epsilon(1e-12));
  CHECK_THROWS_AS((void)mean_average_precision({}), UsageError);
}

TEST_SUITE_END();
