#include "qbret/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <unordered_set>

namespace qbret {
namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start)
      .count();
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9f", v);
  return buf;
}

}  // namespace

PipelineArtifacts PipelineArtifacts::assemble(
    std::vector<ImageRecord> database, std::shared_ptr<const KnnIndex> index,
    CompressedStore store) {
  PipelineArtifacts a;
  a.database = std::move(database);
  a.index = std::move(index);
  a.store = std::move(store);
  a.trees.reserve(a.database.size());
  for (uint32_t i = 0; i < a.database.size(); ++i) {
    const ImageRecord& rec = a.database[i];
    a.id_to_index[rec.image_id] = i;
    a.trees.emplace_back(rec.keypoints);
    a.feature_counts[rec.image_id] = rec.keypoints.size();
  }
  if (a.index) {
    const auto& ids = a.index->image_ids();
    if (ids.size() != a.database.size()) {
      throw UsageError("index and database disagree on the image set");
    }
    for (size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] != a.database[i].image_id) {
        throw UsageError("index image order does not match the database");
      }
    }
  }
  if (a.store.image_count() != 0 &&
      a.store.image_count() != a.database.size()) {
    throw UsageError("compressed store does not match the database");
  }
  return a;
}

QueryResult run_query(const PipelineArtifacts& artifacts,
                      const QuerySpec& query, const QueryOptions& options) {
  if (!artifacts.index) throw UsageError("run_query: no index loaded");
  if (query.image.descriptors.kind != artifacts.index->kind()) {
    throw UsageError(
        "query descriptor kind does not match the index descriptor kind");
  }
  options.expansion.validate();
  const bool expand = options.expansion.max_depth > 0;

  QueryResult result;
  const ImageRecord& qimg = query.image;
  const size_t nq = qimg.keypoints.size();
  if (nq == 0) return result;

  // Stage 2: ranking.
  auto t0 = Clock::now();
  RankedFeatureList ranked =
      rank_features(qimg, options.ranker, options.ranker_seed);
  size_t budget = std::min<size_t>(size_t(query.budget_n), nq);
  result.timings.ranking_ms = ms_since(t0);

  // Stage 3: kNN matching for the top-n features.
  t0 = Clock::now();
  struct SeedGroup {
    uint32_t query_idx;
    std::vector<Neighbor> hits;
  };
  std::vector<SeedGroup> seed_groups;
  seed_groups.reserve(budget);
  for (size_t r = 0; r < budget; ++r) {
    uint32_t qidx = ranked.order[r];
    result.counters.index_probes++;
    auto hits = artifacts.index->query(qimg.descriptors, qidx, query.k,
                                       options.multi_assign_c);
    if (!hits.empty()) seed_groups.push_back({qidx, std::move(hits)});
  }
  result.timings.knn_ms = ms_since(t0);

  // Stages 4+5: expansion and scoring.
  t0 = Clock::now();
  KdTree2D query_tree(qimg.keypoints);
  CodeMatrix query_codes;
  if (expand) query_codes = artifacts.store.encode(qimg.descriptors);
  ExpandView query_view{&qimg, &query_codes, &query_tree};

  std::vector<Correspondence> all;
  for (const SeedGroup& group : seed_groups) {
    double d_knn = group.hits.back().distance;
    for (const Neighbor& hit : group.hits) {
      const ImageRecord& db_img = artifacts.database[hit.image_index];
      Correspondence seed;
      seed.query_kp = qimg.keypoints[group.query_idx];
      seed.db_kp = db_img.keypoints[hit.keypoint_index];
      seed.db_image = db_img.image_id;
      seed.query_feature_index = group.query_idx;
      seed.db_feature_index = hit.keypoint_index;
      seed.feature_distance = hit.distance;
      seed.seed_knn_distance = d_knn;
      seed.is_seed = true;

      if (expand) {
        ExpandView db_view{&db_img,
                           &artifacts.store.image_codes(hit.image_index),
                           &artifacts.trees[hit.image_index]};
        auto expanded = expand_recursive(seed, query_view, db_view,
                                         artifacts.store, options.expansion);
        result.counters.seed_correspondences++;
        result.counters.expanded_correspondences += expanded.size() - 1;
        all.insert(all.end(), expanded.begin(), expanded.end());
      } else {
        result.counters.seed_correspondences++;
        all.push_back(std::move(seed));
      }
    }
  }

  std::vector<Correspondence> filtered = burst_filter(std::move(all));
  ScoreTable table =
      accumulate_scores(filtered, nq, artifacts.feature_counts);
  result.diagnostics = table.diagnostics;
  result.ranking =
      options.wgc ? wgc_rerank(filtered, table) : ranked_images(table);
  result.timings.expansion_scoring_ms = ms_since(t0);
  return result;
}

std::vector<EvalQuery> build_eval_queries(
    const GroundTruth& gt, const std::vector<ImageRecord>& query_records) {
  std::unordered_map<std::string, const ImageRecord*> by_id;
  for (const auto& rec : query_records) by_id[rec.image_id] = &rec;

  std::vector<EvalQuery> out;
  for (const auto& q : gt.queries) {
    auto it = by_id.find(q.query_image_id);
    if (it == by_id.end()) {
      throw DataError("query image " + q.query_image_id +
                      " not present in the query manifest");
    }
    EvalQuery eq;
    eq.name = q.name;
    eq.spec = make_query_spec(*it->second, q.bounding_box, 1, 1);
    eq.positives = q.positive_ids;
    eq.junk = q.junk_ids;
    out.push_back(std::move(eq));
  }
  return out;
}

EvaluateReport run_evaluate(const PipelineArtifacts& artifacts,
                            const std::vector<EvalQuery>& queries,
                            const EvaluateOptions& options) {
  if (queries.empty()) throw UsageError("run_evaluate: no queries");
  EvaluateReport report;
  for (const auto& q : queries) report.query_names.push_back(q.name);
  std::vector<double> ranking_ms, knn_ms, expansion_ms;

  for (RankerKind ranker : options.rankers) {
    int repeats = ranker == RankerKind::random ? options.repeat : 1;
    for (int n : options.n_list) {
      for (int k : options.k_list) {
        for (int rep = 0; rep < repeats; ++rep) {
          EvaluateCell cell;
          cell.ranker = ranker;
          cell.n = n;
          cell.k = k;
          cell.repeat_index = rep;
          QueryOptions qopts;
          qopts.ranker = ranker;
          qopts.ranker_seed = options.ranker_seed + uint64_t(rep);
          qopts.multi_assign_c = options.multi_assign_c;
          qopts.expansion = options.expansion;
          qopts.wgc = options.wgc;
          for (const EvalQuery& q : queries) {
            QuerySpec spec = q.spec;
            spec.budget_n = n;
            spec.k = k;
            QueryResult res = run_query(artifacts, spec, qopts);
            ranking_ms.push_back(res.timings.ranking_ms);
            knn_ms.push_back(res.timings.knn_ms);
            expansion_ms.push_back(res.timings.expansion_scoring_ms);
            std::vector<std::string> ranked_ids;
            ranked_ids.reserve(res.ranking.size());
            for (const auto& si : res.ranking) {
              ranked_ids.push_back(si.image_id);
            }
            std::unordered_set<std::string> pos(q.positives.begin(),
                                                q.positives.end());
            std::unordered_set<std::string> junk(q.junk.begin(),
                                                 q.junk.end());
            cell.per_query_ap.push_back(
                average_precision(ranked_ids, pos, junk));
          }
          cell.map = mean_average_precision(cell.per_query_ap);
          report.cells.push_back(std::move(cell));
        }
      }
    }
  }
  auto median = [](std::vector<double>& v) {
    if (v.empty()) return 0.0;
    size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + mid, v.end());
    return v[mid];
  };
  report.median_timings.ranking_ms = median(ranking_ms);
  report.median_timings.knn_ms = median(knn_ms);
  report.median_timings.expansion_scoring_ms = median(expansion_ms);
  return report;
}

double EvaluateReport::map_for(RankerKind ranker, int n, int k) const {
  double sum = 0.0;
  int count = 0;
  for (const auto& cell : cells) {
    if (cell.ranker == ranker && cell.n == n && cell.k == k) {
      sum += cell.map;
      count++;
    }
  }
  if (count == 0) throw UsageError("no evaluation cell for that combination");
  return sum / count;
}

std::string EvaluateReport::per_query_csv() const {
  std::ostringstream out;
  out << "ranker,n,k,repeat,query,ap\n";
  for (const auto& cell : cells) {
    for (size_t qi = 0; qi < cell.per_query_ap.size(); ++qi) {
      out << to_string(cell.ranker) << ',' << cell.n << ',' << cell.k << ','
          << cell.repeat_index << ',' << query_names[qi] << ','
          << format_double(cell.per_query_ap[qi]) << '\n';
    }
  }
  return out.str();
}

std::string EvaluateReport::summary_csv() const {
  // Repeats of one combination are averaged into a single row.
  std::ostringstream out;
  out << "ranker,n,k,map\n";
  std::vector<std::tuple<RankerKind, int, int>> combos;
  for (const auto& cell : cells) {
    auto combo = std::make_tuple(cell.ranker, cell.n, cell.k);
    if (std::find(combos.begin(), combos.end(), combo) == combos.end()) {
      combos.push_back(combo);
    }
  }
  for (const auto& [ranker, n, k] : combos) {
    out << to_string(ranker) << ',' << n << ',' << k << ','
        << format_double(map_for(ranker, n, k)) << '\n';
  }
  return out.str();
}

std::string EvaluateReport::summary_table() const {
  std::ostringstream out;
  out << "ranker     n       k       MAP\n";
  std::vector<std::tuple<RankerKind, int, int>> combos;
  for (const auto& cell : cells) {
    auto combo = std::make_tuple(cell.ranker, cell.n, cell.k);
    if (std::find(combos.begin(), combos.end(), combo) == combos.end()) {
      combos.push_back(combo);
    }
  }
  for (const auto& [ranker, n, k] : combos) {
    char line[128];
    std::snprintf(line, sizeof(line), "%-10s %-7d %-7d %.4f\n",
                  to_string(ranker).c_str(), n, k, map_for(ranker, n, k));
    out << line;
  }
  return out.str();
}

}  // namespace qbret
