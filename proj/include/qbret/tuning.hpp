#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "qbret/expansion.hpp"
#include "qbret/pipeline.hpp"

namespace qbret {

// Configuration of the threshold search: delta_xy, delta_s, k, n and the
// recursion depth are fixed by hand; delta_dv, delta_alpha, (delta_r) and
// delta_dxy start from `initial` and are optimized by downhill simplex on
// the training MAP.
struct TuneConfig {
  ExpansionParams initial{};
  int n = 10;
  int k = 100;
  int multi_assign_c = 8;
  std::vector<double> step;  // per free dimension; defaults when empty
  double tolerance = 1e-4;
  size_t max_evaluations = 100;

  size_t free_dimensions() const { return initial.delta_r ? 4 : 3; }
  static TuneConfig from_json_file(const std::filesystem::path& path);
};

struct TuneResult {
  ExpansionParams params;
  double initial_map = 0.0;
  double tuned_map = 0.0;
  size_t evaluations = 0;
  size_t cache_hits = 0;
};

// Maximizes training MAP (ANMS ranking, fixed n/k) over the free expansion
// thresholds. `train_identity` and `eval_identity` guard against tuning on
// the evaluation dataset. Deterministic.
TuneResult tune_expansion_params(const PipelineArtifacts& train_artifacts,
                                 const std::vector<EvalQuery>& train_queries,
                                 const TuneConfig& config,
                                 const std::string& train_identity,
                                 const std::string& eval_identity);

// Robustness experiment: each free threshold is perturbed by +-10% and the
// MAP re-evaluated.
struct SensitivityEntry {
  std::string parameter;
  double map_minus_10 = 0.0;
  double map_plus_10 = 0.0;
};

struct SensitivityReport {
  double base_map = 0.0;
  std::vector<SensitivityEntry> entries;
  // Largest MAP drop over all perturbations, and the perturbation name
  // ("-10% delta_dv" style).
  double max_drop = 0.0;
  std::string max_drop_parameter;
};

SensitivityReport sensitivity_sweep(const PipelineArtifacts& artifacts,
                                    const std::vector<EvalQuery>& queries,
                                    const ExpansionParams& params, int n,
                                    int k, int multi_assign_c);

}  // namespace qbret
