#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "qbret/dataset.hpp"
#include "qbret/expansion.hpp"
#include "qbret/mih.hpp"
#include "qbret/pipeline.hpp"
#include "qbret/pq.hpp"
#include "qbret/ranking.hpp"
#include "qbret/tuning.hpp"

namespace fs = std::filesystem;
using namespace qbret;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;

std::string canonical_identity(const fs::path& p) {
  std::error_code ec;
  fs::path c = fs::weakly_canonical(p, ec);
  return ec ? p.string() : c.string();
}

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& csv,
                                const std::string& flag) {
  std::vector<int> out;
  for (const auto& item : split_list(csv)) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw UsageError(flag + ": cannot parse '" + item + "' as an integer");
    }
  }
  if (out.empty()) throw UsageError(flag + ": empty list");
  return out;
}

struct LoadedPipeline {
  PipelineArtifacts artifacts;
  DatasetManifest manifest;
};

LoadedPipeline load_pipeline(const std::string& manifest_path,
                             const std::string& index_path,
                             const std::string& store_path) {
  LoadedPipeline p;
  p.manifest = load_manifest(manifest_path);
  auto database = load_dataset(p.manifest);
  std::shared_ptr<KnnIndex> index = load_index(index_path);
  CompressedStore store;
  if (!store_path.empty()) {
    store = CompressedStore::load(store_path);
  }
  p.artifacts = PipelineArtifacts::assemble(std::move(database),
                                            std::move(index),
                                            std::move(store));
  return p;
}

void check_codebook_provenance(const KnnIndex& index,
                               const std::string& eval_manifest) {
  const std::string& trained = index.trained_on();
  if (trained.empty()) return;  // binary index, nothing was trained
  if (trained == canonical_identity(eval_manifest)) {
    throw UsageError(
        "codebooks were trained on the evaluation dataset itself (" +
        trained + "); train them on a separate manifest");
  }
}

ExpansionParams load_expansion(const std::string& params_path, int depth_flag,
                               bool depth_set) {
  ExpansionParams params;
  params.max_depth = 0;  // expansion off unless a params file is given
  if (!params_path.empty()) {
    params = ExpansionParams::from_json_file(params_path);
  }
  if (depth_set) params.max_depth = depth_flag;
  params.validate();
  return params;
}

int cmd_synth(const std::string& config_path, const std::string& out_dir,
              uint64_t seed, bool seed_set) {
  SyntheticConfig cfg;
  if (!config_path.empty()) {
    cfg = synthetic_config_from_json_file(config_path);
  }
  if (seed_set) cfg.seed = seed;
  SyntheticDataset data = generate_synthetic(cfg);
  SyntheticPaths paths = write_synthetic(data, out_dir);

  nlohmann::json meta;
  meta["num_images"] = cfg.num_images;
  meta["num_objects"] = cfg.num_objects;
  meta["seed"] = cfg.seed;
  meta["planted_pairs"] = data.planted_pairs.size();
  std::ofstream(fs::path(out_dir) / "synth_meta.json") << meta.dump(2) << "\n";

  std::cout << "database manifest: " << paths.db_manifest.string() << "\n";
  if (!paths.train_manifest.empty()) {
    std::cout << "train manifest:    " << paths.train_manifest.string()
              << "\n";
  }
  std::cout << "query manifest:    " << paths.query_manifest.string() << "\n"
            << "ground truth:      " << paths.groundtruth_dir.string() << "\n";
  return kExitOk;
}

int cmd_train_codebooks(const std::string& train_manifest,
                        const std::string& out, CodebookTrainParams params) {
  DatasetManifest manifest = load_manifest(train_manifest);
  if (manifest.descriptor_kind != DescriptorKind::real) {
    throw UsageError("codebooks apply to real-valued descriptors only; "
                     "binary datasets need no training");
  }
  auto records = load_dataset(manifest);
  Codebooks books =
      train_codebooks(records, params, canonical_identity(train_manifest));
  books.save(out);
  std::cout << "codebooks written to " << out << " (V=" << params.coarse_v
            << ", m=" << params.pq_m << ", s=" << params.pq_s << ")\n";
  return kExitOk;
}

int cmd_build_index(const std::string& manifest_path,
                    const std::string& codebooks_path, const std::string& out,
                    uint32_t mih_tables) {
  DatasetManifest manifest = load_manifest(manifest_path);
  auto records = load_dataset(manifest);
  if (manifest.descriptor_kind == DescriptorKind::real) {
    if (codebooks_path.empty()) {
      throw UsageError("--codebooks is required for real-valued datasets");
    }
    Codebooks books = Codebooks::load(codebooks_path);
    IvfPqIndex index = IvfPqIndex::build(records, books);
    save_index(index, out);
    std::cout << "IVF-PQ index over " << index.total_features()
              << " features written to " << out << "\n";
  } else {
    uint32_t t = mih_tables ? mih_tables
                            : MihIndex::default_tables(manifest.dimension);
    MihIndex index = MihIndex::build(records, t);
    save_index(index, out);
    std::cout << "MIH index over " << index.total_features() << " codes ("
              << t << " tables) written to " << out << "\n";
  }
  return kExitOk;
}

int cmd_compress_store(const std::string& manifest_path,
                       const std::string& codebooks_path,
                       const std::string& out) {
  DatasetManifest manifest = load_manifest(manifest_path);
  auto records = load_dataset(manifest);
  CompressedStore store;
  if (manifest.descriptor_kind == DescriptorKind::real) {
    if (codebooks_path.empty()) {
      throw UsageError("--codebooks is required for real-valued datasets");
    }
    Codebooks books = Codebooks::load(codebooks_path);
    store = CompressedStore::build(records, &books);
  } else {
    store = CompressedStore::build(records, nullptr);
  }
  store.save(out);
  std::cout << "compressed store (" << store.image_count()
            << " images) written to " << out << "\n";
  return kExitOk;
}

struct QueryFlags {
  std::string manifest, index, store, query_manifest, query_id;
  std::string ranker = "anms";
  uint64_t ranker_seed = 1;
  int n = 100;
  int k = 100;
  int multi_assign_c = 8;
  std::string params_path;
  int max_depth = 0;
  bool depth_set = false;
  bool wgc = false;
  std::vector<double> bbox;
  std::string out_path;
};

int cmd_query(const QueryFlags& flags) {
  LoadedPipeline p = load_pipeline(flags.manifest, flags.index, flags.store);
  check_codebook_provenance(*p.artifacts.index, flags.manifest);

  DatasetManifest qm = load_manifest(flags.query_manifest);
  auto query_records = load_dataset(qm);
  const ImageRecord* query_image = nullptr;
  for (const auto& rec : query_records) {
    if (rec.image_id == flags.query_id) {
      query_image = &rec;
      break;
    }
  }
  if (!query_image) {
    throw DataError("query image " + flags.query_id +
                    " not found in the query manifest");
  }

  std::optional<BoundingBox> box;
  if (!flags.bbox.empty()) {
    if (flags.bbox.size() != 4) {
      throw UsageError("--bbox expects x1 y1 x2 y2");
    }
    box = BoundingBox{flags.bbox[0], flags.bbox[1], flags.bbox[2],
                      flags.bbox[3]};
  }
  QuerySpec spec = make_query_spec(*query_image, box, flags.n, flags.k);

  QueryOptions opts;
  opts.ranker = ranker_from_string(flags.ranker);
  opts.ranker_seed = flags.ranker_seed;
  opts.multi_assign_c = flags.multi_assign_c;
  opts.expansion =
      load_expansion(flags.params_path, flags.max_depth, flags.depth_set);
  opts.wgc = flags.wgc;

  QueryResult res = run_query(p.artifacts, spec, opts);

  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!flags.out_path.empty()) {
    file.open(flags.out_path);
    if (!file) throw DataError("cannot write " + flags.out_path);
    out = &file;
  }
  int rank = 1;
  for (const auto& si : res.ranking) {
    nlohmann::json line;
    line["rank"] = rank++;
    line["image_id"] = si.image_id;
    line["score"] = si.score;
    (*out) << line.dump() << "\n";
  }

  std::cerr << "query " << flags.query_id << ": " << spec.image.keypoints.size()
            << " features, " << res.counters.index_probes << " kNN probes, "
            << res.counters.seed_correspondences << " seeds, "
            << res.counters.expanded_correspondences << " expanded\n"
            << "timings: ranking " << res.timings.ranking_ms << " ms, kNN "
            << res.timings.knn_ms << " ms, expansion+scoring "
            << res.timings.expansion_scoring_ms << " ms\n";
  return kExitOk;
}

struct EvaluateFlags {
  std::string manifest, index, store, query_manifest, groundtruth;
  std::string rankers = "anms";
  std::string n_list = "50";
  std::string k_list = "100";
  int multi_assign_c = 8;
  std::string params_path;
  int max_depth = 0;
  bool depth_set = false;
  bool wgc = false;
  int repeat = 1;
  uint64_t ranker_seed = 1;
  std::string csv_path;
  std::string summary_csv_path;
};

int cmd_evaluate(const EvaluateFlags& flags) {
  LoadedPipeline p = load_pipeline(flags.manifest, flags.index, flags.store);
  check_codebook_provenance(*p.artifacts.index, flags.manifest);

  DatasetManifest qm = load_manifest(flags.query_manifest);
  auto query_records = load_dataset(qm);
  GroundTruth gt = load_groundtruth(flags.groundtruth);
  auto queries = build_eval_queries(gt, query_records);

  EvaluateOptions opts;
  opts.rankers.clear();
  for (const auto& r : split_list(flags.rankers)) {
    opts.rankers.push_back(ranker_from_string(r));
  }
  opts.n_list = parse_int_list(flags.n_list, "--n-list");
  opts.k_list = parse_int_list(flags.k_list, "--k-list");
  opts.multi_assign_c = flags.multi_assign_c;
  opts.expansion =
      load_expansion(flags.params_path, flags.max_depth, flags.depth_set);
  opts.wgc = flags.wgc;
  opts.repeat = flags.repeat;
  opts.ranker_seed = flags.ranker_seed;

  EvaluateReport report = run_evaluate(p.artifacts, queries, opts);

  if (!flags.csv_path.empty()) {
    std::ofstream out(flags.csv_path);
    if (!out) throw DataError("cannot write " + flags.csv_path);
    out << report.per_query_csv();
  }
  if (!flags.summary_csv_path.empty()) {
    std::ofstream out(flags.summary_csv_path);
    if (!out) throw DataError("cannot write " + flags.summary_csv_path);
    out << report.summary_csv();
  }
  std::cout << report.summary_table();
  return kExitOk;
}

struct TuneFlags {
  std::string train_manifest, train_index, train_store;
  std::string train_query_manifest, train_groundtruth;
  std::string eval_manifest;
  std::string tune_config;
  std::string out_path;
};

int cmd_tune(const TuneFlags& flags) {
  LoadedPipeline p = load_pipeline(flags.train_manifest, flags.train_index,
                                   flags.train_store);
  DatasetManifest qm = load_manifest(flags.train_query_manifest);
  auto query_records = load_dataset(qm);
  GroundTruth gt = load_groundtruth(flags.train_groundtruth);
  auto queries = build_eval_queries(gt, query_records);

  TuneConfig config = TuneConfig::from_json_file(flags.tune_config);
  TuneResult result = tune_expansion_params(
      p.artifacts, queries, config, canonical_identity(flags.train_manifest),
      canonical_identity(flags.eval_manifest));

  result.params.to_json_file(flags.out_path);
  std::cout << "tuned parameters written to " << flags.out_path << "\n"
            << "training MAP " << result.initial_map << " -> "
            << result.tuned_map << " (" << result.evaluations
            << " evaluations, " << result.cache_hits << " cache hits)\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qbret - query-budgeted local-feature object retrieval"};
  app.require_subcommand(1);
  app.set_config("--config", "", "read defaults from a TOML config file");

  // synth
  auto* synth = app.add_subcommand(
      "synth", "generate a synthetic dataset with planted objects");
  std::string synth_config, synth_out = "synth_out";
  uint64_t synth_seed = 1;
  synth->add_option("--synth-config", synth_config,
                    "synthetic generator config (json)");
  synth->add_option("--out-dir", synth_out, "output directory")->required();
  auto* seed_opt = synth->add_option("--seed", synth_seed, "generator seed");

  // train-codebooks
  auto* train = app.add_subcommand(
      "train-codebooks", "train coarse and product-quantizer codebooks");
  std::string train_manifest, train_out;
  CodebookTrainParams cb_params;
  train->add_option("--train-manifest", train_manifest)->required();
  train->add_option("--out", train_out)->required();
  train->add_option("--coarse-v", cb_params.coarse_v,
                    "inverted-list vocabulary size");
  train->add_option("--pq-m", cb_params.pq_m, "sub-quantizer count");
  train->add_option("--pq-s", cb_params.pq_s, "centroids per sub-quantizer");
  train->add_option("--kmeans-iters", cb_params.kmeans_iters);
  train->add_option("--seed", cb_params.seed);
  train->add_option("--max-train-samples", cb_params.max_samples);

  // build-index
  auto* build = app.add_subcommand(
      "build-index", "build the kNN index (IVF-PQ or MIH by descriptor kind)");
  std::string bi_manifest, bi_codebooks, bi_out;
  uint32_t bi_tables = 0;
  build->add_option("--manifest", bi_manifest)->required();
  build->add_option("--codebooks", bi_codebooks,
                    "codebooks file (real descriptors)");
  build->add_option("--out", bi_out)->required();
  build->add_option("--mih-tables", bi_tables,
                    "hash table count (binary; default bits/32)");

  // compress-store
  auto* compress = app.add_subcommand(
      "compress-store", "compress descriptors for the expansion stage");
  std::string cs_manifest, cs_codebooks, cs_out;
  compress->add_option("--manifest", cs_manifest)->required();
  compress->add_option("--codebooks", cs_codebooks);
  compress->add_option("--out", cs_out)->required();

  // query
  auto* query = app.add_subcommand("query", "run a single budgeted query");
  QueryFlags qf;
  query->add_option("--manifest", qf.manifest)->required();
  query->add_option("--index", qf.index)->required();
  query->add_option("--store", qf.store);
  query->add_option("--query-manifest", qf.query_manifest)->required();
  query->add_option("--query-id", qf.query_id)->required();
  query->add_option("--ranker", qf.ranker, "rnd|resp|anms");
  query->add_option("--ranker-seed", qf.ranker_seed);
  query->add_option("--n", qf.n, "kNN query budget");
  query->add_option("--k", qf.k, "neighbors per query");
  query->add_option("--c", qf.multi_assign_c, "multi-assignment cells");
  query->add_option("--params", qf.params_path,
                    "expansion parameters (json); omitting disables expansion");
  auto* qd = query->add_option("--max-depth", qf.max_depth,
                               "override expansion recursion depth");
  query->add_flag("--wgc", qf.wgc, "re-rank with weak geometric consistency");
  query->add_option("--bbox", qf.bbox, "query bounding box x1 y1 x2 y2")
      ->expected(4);
  query->add_option("--out", qf.out_path, "write JSON lines here");

  // evaluate
  auto* evaluate = app.add_subcommand(
      "evaluate", "MAP over a ground-truth query set, per ranker/n/k cell");
  EvaluateFlags ef;
  evaluate->add_option("--manifest", ef.manifest)->required();
  evaluate->add_option("--index", ef.index)->required();
  evaluate->add_option("--store", ef.store);
  evaluate->add_option("--query-manifest", ef.query_manifest)->required();
  evaluate->add_option("--groundtruth", ef.groundtruth)->required();
  evaluate->add_option("--rankers", ef.rankers, "comma list of rnd|resp|anms");
  evaluate->add_option("--n-list", ef.n_list, "comma list of budgets");
  evaluate->add_option("--k-list", ef.k_list, "comma list of k values");
  evaluate->add_option("--c", ef.multi_assign_c);
  evaluate->add_option("--params", ef.params_path);
  auto* ed = evaluate->add_option("--max-depth", ef.max_depth);
  evaluate->add_flag("--wgc", ef.wgc);
  evaluate->add_option("--repeat", ef.repeat,
                       "averaging runs for the random ranker");
  evaluate->add_option("--ranker-seed", ef.ranker_seed);
  evaluate->add_option("--csv", ef.csv_path, "per-query AP csv");
  evaluate->add_option("--summary-csv", ef.summary_csv_path);

  // tune
  auto* tune = app.add_subcommand(
      "tune", "select expansion thresholds by downhill simplex on MAP");
  TuneFlags tf;
  tune->add_option("--train-manifest", tf.train_manifest)->required();
  tune->add_option("--train-index", tf.train_index)->required();
  tune->add_option("--train-store", tf.train_store)->required();
  tune->add_option("--train-query-manifest", tf.train_query_manifest)
      ->required();
  tune->add_option("--train-groundtruth", tf.train_groundtruth)->required();
  tune->add_option("--eval-manifest", tf.eval_manifest,
                   "dataset the tuned parameters will be evaluated on")
      ->required();
  tune->add_option("--tune-config", tf.tune_config)->required();
  tune->add_option("--out", tf.out_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*synth) {
      return cmd_synth(synth_config, synth_out, synth_seed, !seed_opt->empty());
    }
    if (*train) return cmd_train_codebooks(train_manifest, train_out, cb_params);
    if (*build) return cmd_build_index(bi_manifest, bi_codebooks, bi_out, bi_tables);
    if (*compress) return cmd_compress_store(cs_manifest, cs_codebooks, cs_out);
    if (*query) {
      qf.depth_set = !qd->empty();
      return cmd_query(qf);
    }
    if (*evaluate) {
      ef.depth_set = !ed->empty();
      return cmd_evaluate(ef);
    }
    if (*tune) return cmd_tune(tf);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
