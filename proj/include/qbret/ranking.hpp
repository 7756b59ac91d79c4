#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qbret/core.hpp"

namespace qbret {

enum class RankerKind { random, response, anms };

std::string to_string(RankerKind kind);
RankerKind ranker_from_string(const std::string& s);

struct RankedFeatureList {
  RankerKind strategy = RankerKind::random;
  uint64_t rng_seed = 0;
  std::vector<uint32_t> order;  // permutation of [0, |I_q|), best first
};

// Brown et al.'s robustness factor for adaptive non-maximal suppression.
inline constexpr double kAnmsRobustFactor = 0.9;

// Uniformly random permutation, deterministic per seed.
RankedFeatureList rank_random(const ImageRecord& image, uint64_t seed);

// Descending response, ties by ascending feature index.
RankedFeatureList rank_response(const ImageRecord& image);

// Suppression radius of keypoint i: distance to the nearest keypoint whose
// response exceeds response_i / 0.9, or +inf if none. Descending radius,
// ties by descending response then ascending index.
RankedFeatureList rank_anms(const ImageRecord& image);

// The radii behind rank_anms, exposed for verification.
std::vector<double> anms_radii(const ImageRecord& image);

RankedFeatureList rank_features(const ImageRecord& image, RankerKind kind,
                                uint64_t seed);

}  // namespace qbret
