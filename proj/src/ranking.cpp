#include "qbret/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "qbret/rng.hpp"

namespace qbret {

std::string to_string(RankerKind kind) {
  switch (kind) {
    case RankerKind::random: return "rnd";
    case RankerKind::response: return "resp";
    case RankerKind::anms: return "anms";
  }
  return "?";
}

RankerKind ranker_from_string(const std::string& s) {
  if (s == "rnd") return RankerKind::random;
  if (s == "resp") return RankerKind::response;
  if (s == "anms") return RankerKind::anms;
  throw UsageError("unknown ranker: " + s + " (expected rnd|resp|anms)");
}

RankedFeatureList rank_random(const ImageRecord& image, uint64_t seed) {
  RankedFeatureList list;
  list.strategy = RankerKind::random;
  list.rng_seed = seed;
  list.order.resize(image.keypoints.size());
  std::iota(list.order.begin(), list.order.end(), 0u);
  Rng rng(seed);
  rng.shuffle(list.order);
  return list;
}

RankedFeatureList rank_response(const ImageRecord& image) {
  RankedFeatureList list;
  list.strategy = RankerKind::response;
  list.order.resize(image.keypoints.size());
  std::iota(list.order.begin(), list.order.end(), 0u);
  std::sort(list.order.begin(), list.order.end(),
            [&](uint32_t a, uint32_t b) {
              double ra = image.keypoints[a].response;
              double rb = image.keypoints[b].response;
              if (ra != rb) return ra > rb;
              return a < b;
            });
  return list;
}

std::vector<double> anms_radii(const ImageRecord& image) {
  const auto& kps = image.keypoints;
  size_t n = kps.size();
  std::vector<uint32_t> by_resp(n);
  std::iota(by_resp.begin(), by_resp.end(), 0u);
  std::sort(by_resp.begin(), by_resp.end(), [&](uint32_t a, uint32_t b) {
    if (kps[a].response != kps[b].response) {
      return kps[a].response > kps[b].response;
    }
    return a < b;
  });

  std::vector<double> radii(n, std::numeric_limits<double>::infinity());
  for (size_t i = 0; i < n; ++i) {
    const Keypoint& kp = kps[i];
    double best_sq = std::numeric_limits<double>::infinity();
    // Suppressors form a prefix of the response-sorted list.
    for (uint32_t j : by_resp) {
      if (!(kps[j].response * kAnmsRobustFactor > kp.response)) break;
      double dx = kps[j].x - kp.x;
      double dy = kps[j].y - kp.y;
      double d = dx * dx + dy * dy;
      if (d < best_sq) best_sq = d;
    }
    if (std::isfinite(best_sq)) radii[i] = std::sqrt(best_sq);
  }
  return radii;
}

RankedFeatureList rank_anms(const ImageRecord& image) {
  RankedFeatureList list;
  list.strategy = RankerKind::anms;
  std::vector<double> radii = anms_radii(image);
  list.order.resize(image.keypoints.size());
  std::iota(list.order.begin(), list.order.end(), 0u);
  std::sort(list.order.begin(), list.order.end(),
            [&](uint32_t a, uint32_t b) {
              if (radii[a] != radii[b]) return radii[a] > radii[b];
              double ra = image.keypoints[a].response;
              double rb = image.keypoints[b].response;
              if (ra != rb) return ra > rb;
              return a < b;
            });
  return list;
}

RankedFeatureList rank_features(const ImageRecord& image, RankerKind kind,
                                uint64_t seed) {
  switch (kind) {
    case RankerKind::random: return rank_random(image, seed);
    case RankerKind::response: return rank_response(image);
    case RankerKind::anms: return rank_anms(image);
  }
  throw UsageError("unknown ranker");
}

}  // namespace qbret
