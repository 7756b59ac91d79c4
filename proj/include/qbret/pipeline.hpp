#pragma once

#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "qbret/dataset.hpp"
#include "qbret/expansion.hpp"
#include "qbret/pq.hpp"
#include "qbret/ranking.hpp"
#include "qbret/scoring.hpp"

namespace qbret {

// Read-only state shared by all queries: the database geometry, the kNN
// index, the compressed descriptor store and per-image spatial trees.
struct PipelineArtifacts {
  std::vector<ImageRecord> database;
  std::unordered_map<std::string, uint32_t> id_to_index;
  std::shared_ptr<const KnnIndex> index;
  CompressedStore store;
  std::vector<KdTree2D> trees;
  std::map<std::string, size_t> feature_counts;

  static PipelineArtifacts assemble(std::vector<ImageRecord> database,
                                    std::shared_ptr<const KnnIndex> index,
                                    CompressedStore store);
};

struct QueryOptions {
  RankerKind ranker = RankerKind::anms;
  uint64_t ranker_seed = 0;
  int multi_assign_c = 8;
  ExpansionParams expansion{};  // max_depth 0 disables expansion
  bool wgc = false;
};

struct StageTimings {
  double ranking_ms = 0.0;
  double knn_ms = 0.0;
  double expansion_scoring_ms = 0.0;
};

struct QueryCounters {
  size_t index_probes = 0;            // kNN queries issued
  size_t expansion_index_probes = 0;  // always zero: expansion never probes
  size_t seed_correspondences = 0;
  size_t expanded_correspondences = 0;
};

struct QueryResult {
  std::vector<ScoredImage> ranking;
  StageTimings timings;
  QueryCounters counters;
  ScoreDiagnostics diagnostics;
};

QueryResult run_query(const PipelineArtifacts& artifacts,
                      const QuerySpec& query, const QueryOptions& options);

struct EvalQuery {
  std::string name;
  QuerySpec spec;  // budget_n/k are overwritten per evaluation cell
  std::vector<std::string> positives;
  std::vector<std::string> junk;
};

// Joins ground truth with the query image records (cropping each to its
// bounding box).
std::vector<EvalQuery> build_eval_queries(
    const GroundTruth& gt, const std::vector<ImageRecord>& query_records);

struct EvaluateOptions {
  std::vector<RankerKind> rankers{RankerKind::anms};
  std::vector<int> n_list{50};
  std::vector<int> k_list{100};
  int multi_assign_c = 8;
  ExpansionParams expansion{};
  bool wgc = false;
  int repeat = 1;  // averaging runs for the random ranker
  uint64_t ranker_seed = 1;
};

struct EvaluateCell {
  RankerKind ranker;
  int n = 0;
  int k = 0;
  int repeat_index = 0;
  std::vector<double> per_query_ap;  // order of the eval queries
  double map = 0.0;
};

struct EvaluateReport {
  std::vector<std::string> query_names;
  std::vector<EvaluateCell> cells;
  StageTimings median_timings;  // medians over every query executed

  // Mean MAP over repeats for one (ranker, n, k) combination.
  double map_for(RankerKind ranker, int n, int k) const;
  std::string per_query_csv() const;
  std::string summary_csv() const;
  std::string summary_table() const;
};

EvaluateReport run_evaluate(const PipelineArtifacts& artifacts,
                            const std::vector<EvalQuery>& queries,
                            const EvaluateOptions& options);

}  // namespace qbret
