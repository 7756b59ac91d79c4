#include "qbret/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace qbret {

double score_correspondence(double d_knn, double d_ref, size_t nq, size_t nx,
                            ScoreDiagnostics* diag) {
  if (nq < 1 || nx < 1) {
    throw UsageError("score_correspondence: feature counts must be >= 1");
  }
  if (d_ref < 0.0 || d_knn < 0.0) {
    throw UsageError("score_correspondence: distances must be non-negative");
  }
  double margin = d_knn - d_ref;
  if (margin < 0.0) {
    if (diag) diag->clamped_scores++;
    margin = 0.0;
  }
  return std::sqrt(margin) / (std::sqrt(double(nq)) * std::sqrt(double(nx)));
}

std::vector<Correspondence> burst_filter(std::vector<Correspondence> cs) {
  // Group by (query feature, image); the score normalizers are constant
  // within a group, so the margin decides the survivor.
  std::unordered_map<std::string, std::unordered_map<uint64_t, size_t>> best;
  for (size_t i = 0; i < cs.size(); ++i) {
    const Correspondence& c = cs[i];
    auto& per_image = best[c.db_image];
    auto [it, inserted] = per_image.try_emplace(c.query_feature_index, i);
    if (inserted) continue;
    const Correspondence& cur = cs[it->second];
    double margin_new = std::max(0.0, c.seed_knn_distance - c.feature_distance);
    double margin_cur =
        std::max(0.0, cur.seed_knn_distance - cur.feature_distance);
    if (margin_new > margin_cur ||
        (margin_new == margin_cur &&
         c.db_feature_index < cur.db_feature_index)) {
      it->second = i;
    }
  }
  std::vector<size_t> keep;
  keep.reserve(cs.size());
  for (const auto& [image, per_image] : best) {
    for (const auto& [qidx, i] : per_image) keep.push_back(i);
  }
  std::sort(keep.begin(), keep.end());  // stable original order
  std::vector<Correspondence> out;
  out.reserve(keep.size());
  for (size_t i : keep) out.push_back(std::move(cs[i]));
  return out;
}

ScoreTable accumulate_scores(
    std::span<const Correspondence> cs, size_t nq,
    const std::map<std::string, size_t>& feature_counts) {
  ScoreTable table;
  table.query_feature_count = nq;
  for (const Correspondence& c : cs) {
    auto it = feature_counts.find(c.db_image);
    if (it == feature_counts.end()) {
      throw UsageError("no feature count for image " + c.db_image);
    }
    table.scores[c.db_image] +=
        score_correspondence(c.seed_knn_distance, c.feature_distance, nq,
                             it->second, &table.diagnostics);
    table.image_feature_counts[c.db_image] = it->second;
  }
  return table;
}

std::vector<ScoredImage> ranked_images(const ScoreTable& table) {
  std::vector<ScoredImage> out;
  out.reserve(table.scores.size());
  for (const auto& [id, score] : table.scores) out.push_back({id, score});
  std::sort(out.begin(), out.end(),
            [](const ScoredImage& a, const ScoredImage& b) {
              if (a.score != b.score) return a.score > b.score;
              return a.image_id < b.image_id;
            });
  return out;
}

int wgc_angle_bin(double orientation_diff) {
  double d = normalize_angle(orientation_diff);  // [-pi, pi)
  int bin = int((d + kPi) / (2.0 * kPi) * kWgcAngleBins);
  return std::clamp(bin, 0, kWgcAngleBins - 1);
}

int wgc_scale_bin(double log2_scale_ratio) {
  double clamped =
      std::clamp(log2_scale_ratio, -kWgcLogScaleRange, kWgcLogScaleRange);
  int bin = int((clamped + kWgcLogScaleRange) / (2.0 * kWgcLogScaleRange) *
                kWgcScaleBins);
  return std::clamp(bin, 0, kWgcScaleBins - 1);
}

std::vector<ScoredImage> wgc_rerank(std::span<const Correspondence> cs,
                                    const ScoreTable& table) {
  struct Histograms {
    double angle[kWgcAngleBins] = {};
    double scale[kWgcScaleBins] = {};
  };
  std::unordered_map<std::string, Histograms> hists;
  ScoreDiagnostics diag;
  for (const Correspondence& c : cs) {
    auto nx_it = table.image_feature_counts.find(c.db_image);
    if (nx_it == table.image_feature_counts.end()) continue;
    double vote =
        score_correspondence(c.seed_knn_distance, c.feature_distance,
                             table.query_feature_count, nx_it->second, &diag);
    Histograms& h = hists[c.db_image];
    h.angle[wgc_angle_bin(c.db_kp.orientation - c.query_kp.orientation)] +=
        vote;
    h.scale[wgc_scale_bin(std::log2(c.db_kp.scale / c.query_kp.scale))] +=
        vote;
  }

  // Consistent matches agree on rotation and on scale, so an image's
  // re-ranked score is the smaller of its two histogram peaks.
  std::vector<ScoredImage> out;
  out.reserve(table.scores.size());
  for (const auto& [id, score] : table.scores) {
    auto it = hists.find(id);
    double reranked = 0.0;
    if (it != hists.end()) {
      double peak_a = 0.0, peak_s = 0.0;
      for (double v : it->second.angle) peak_a = std::max(peak_a, v);
      for (double v : it->second.scale) peak_s = std::max(peak_s, v);
      reranked = std::min(peak_a, peak_s);
    }
    out.push_back({id, reranked});
  }
  std::sort(out.begin(), out.end(),
            [](const ScoredImage& a, const ScoredImage& b) {
              if (a.score != b.score) return a.score > b.score;
              return a.image_id < b.image_id;
            });
  return out;
}

double average_precision(const std::vector<std::string>& ranked_ids,
                         const std::unordered_set<std::string>& positives,
                         const std::unordered_set<std::string>& junk) {
  if (positives.empty()) {
    throw UsageError("average_precision: no positive images for query");
  }
  double old_recall = 0.0;
  double old_precision = 1.0;
  double ap = 0.0;
  size_t intersect = 0;
  size_t rank = 0;  // junk-filtered rank
  for (const std::string& id : ranked_ids) {
    if (junk.count(id)) continue;
    if (positives.count(id)) intersect++;
    double recall = double(intersect) / double(positives.size());
    double precision = double(intersect) / double(rank + 1);
    ap += (recall - old_recall) * (old_precision + precision) / 2.0;
    old_recall = recall;
    old_precision = precision;
    rank++;
  }
  return ap;
}

double mean_average_precision(std::span<const double> per_query_ap) {
  if (per_query_ap.empty()) {
    throw UsageError("mean_average_precision: need at least one query");
  }
  double sum = 0.0;
  for (double ap : per_query_ap) sum += ap;
  return sum / double(per_query_ap.size());
}

}  // namespace qbret
