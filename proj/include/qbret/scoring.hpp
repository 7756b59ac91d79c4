#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "qbret/core.hpp"

namespace qbret {

struct ScoreDiagnostics {
  size_t clamped_scores = 0;  // correspondences with d_ref > d_kNN
};

// sqrt(d_kNN - d_ref) / (sqrt(nq) * sqrt(nx)); a negative margin clamps to a
// zero score and counts as a diagnostic warning.
double score_correspondence(double d_knn, double d_ref, size_t nq, size_t nx,
                            ScoreDiagnostics* diag = nullptr);

// One correspondence per (query feature, database image): the largest
// score margin survives, ties broken by ascending db keypoint index.
std::vector<Correspondence> burst_filter(std::vector<Correspondence> cs);

struct ScoreTable {
  std::map<std::string, double> scores;
  size_t query_feature_count = 0;
  std::map<std::string, size_t> image_feature_counts;
  ScoreDiagnostics diagnostics;
};

// Per-image sum of correspondence scores. `feature_counts` maps image_id to
// |I_x|; correspondences must already be burst-filtered.
ScoreTable accumulate_scores(std::span<const Correspondence> cs, size_t nq,
                             const std::map<std::string, size_t>& feature_counts);

struct ScoredImage {
  std::string image_id;
  double score = 0.0;
};

// Descending score, ties by ascending image id.
std::vector<ScoredImage> ranked_images(const ScoreTable& table);

inline constexpr int kWgcAngleBins = 32;
inline constexpr int kWgcScaleBins = 16;
// log2 scale-ratio votes are clamped to this symmetric range.
inline constexpr double kWgcLogScaleRange = 4.0;

int wgc_angle_bin(double orientation_diff);
int wgc_scale_bin(double log2_scale_ratio);

// Weak geometric consistency: per image, each correspondence votes its score
// into an orientation-difference histogram and a log2 scale-ratio histogram;
// the re-ranked image score is the smaller of the two peak bins.
std::vector<ScoredImage> wgc_rerank(std::span<const Correspondence> cs,
                                    const ScoreTable& table);

// Oxford benchmark AP: junk ids are removed from the ranking, the area under
// the precision/recall curve is accumulated trapezoidally. Positives missing
// from the ranking stay unretrieved. Throws UsageError when positives are
// empty.
double average_precision(const std::vector<std::string>& ranked_ids,
                         const std::unordered_set<std::string>& positives,
                         const std::unordered_set<std::string>& junk);

double mean_average_precision(std::span<const double> per_query_ap);

}  // namespace qbret
