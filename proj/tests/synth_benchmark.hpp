#pragma once

#include <memory>

#include "qbret/dataset.hpp"
#include "qbret/mih.hpp"
#include "qbret/pipeline.hpp"
#include "qbret/pq.hpp"
#include "qbret/tuning.hpp"

namespace qbret::test {

struct SynthPipeline {
  SyntheticDataset data;
  Codebooks books;
  PipelineArtifacts artifacts;
  std::vector<EvalQuery> queries;
};

// Full pipeline over a generated dataset: codebooks trained on the
// distractor-only split, IVF-PQ (or MIH) index and compressed store over the
// database.
inline SynthPipeline build_synth_pipeline(const SyntheticConfig& cfg,
                                          uint32_t coarse_v, uint32_t pq_s,
                                          uint32_t mih_tables = 0) {
  SynthPipeline p;
  p.data = generate_synthetic(cfg);

  std::shared_ptr<KnnIndex> index;
  CompressedStore store;
  if (cfg.descriptor_kind == DescriptorKind::real) {
    CodebookTrainParams tp;
    tp.coarse_v = coarse_v;
    tp.pq_m = 8;
    tp.pq_s = pq_s;
    tp.kmeans_iters = 12;
    tp.seed = cfg.seed + 777;
    const auto& train = p.data.train.empty() ? p.data.database : p.data.train;
    p.books = train_codebooks(train, tp, "synthetic-train");
    index = std::make_shared<IvfPqIndex>(
        IvfPqIndex::build(p.data.database, p.books));
    store = CompressedStore::build(p.data.database, &p.books);
  } else {
    uint32_t t = mih_tables ? mih_tables : MihIndex::default_tables(cfg.dim);
    index = std::make_shared<MihIndex>(MihIndex::build(p.data.database, t));
    store = CompressedStore::build(p.data.database, nullptr);
  }

  auto database = p.data.database;  // artifacts own a copy
  p.artifacts = PipelineArtifacts::assemble(std::move(database),
                                            std::move(index),
                                            std::move(store));
  p.queries = build_eval_queries(p.data.ground_truth, p.data.queries);
  return p;
}

// The retrieval benchmark: partially covered objects, shared distractor
// texture words, clustered clutter. Hard enough that ranking quality and
// match expansion both move MAP.
inline SyntheticConfig benchmark_config(uint64_t seed) {
  SyntheticConfig cfg;
  cfg.num_images = 110;
  cfg.features_per_image = 250;
  cfg.num_objects = 4;
  cfg.object_size = 120;
  cfg.positives_per_object = 12;
  cfg.train_images = 25;
  cfg.noise_sigma = 6.0;
  cfg.dim = 16;
  cfg.distractor_words = 1500;
  cfg.distractor_word_sigma = 15.0;
  cfg.object_word_sigma = 15.0;
  cfg.coverage_min = 0.06;
  cfg.seed = seed;
  return cfg;
}

inline ExpansionParams benchmark_expansion(int max_depth) {
  ExpansionParams p;
  p.delta_xy = 12.0;
  p.delta_s = 0.8;
  p.delta_dv = 80.0;
  p.delta_alpha = deg2rad(24.3);
  p.delta_r.reset();
  p.delta_dxy = 0.49;
  p.max_depth = max_depth;
  return p;
}

}  // namespace qbret::test
