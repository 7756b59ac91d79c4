#include "qbret/tuning.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <map>

#include <json.hpp>

#include "qbret/nelder_mead.hpp"

namespace qbret {
namespace {

constexpr double kOutOfBoxPenalty = 1e30;

struct SearchBox {
  double dv_max;
  static constexpr double kAngleMax = kPi / 2.0;  // 90 degrees
};

ExpansionParams params_from_vector(const ExpansionParams& base,
                                   std::span<const double> x) {
  ExpansionParams p = base;
  p.delta_dv = x[0];
  p.delta_alpha = x[1];
  size_t i = 2;
  if (base.delta_r) p.delta_r = x[i++];
  p.delta_dxy = x[i];
  return p;
}

bool inside_box(std::span<const double> x, const ExpansionParams& base,
                const SearchBox& box) {
  if (!(x[0] > 0.0 && x[0] <= box.dv_max)) return false;
  if (!(x[1] > 0.0 && x[1] <= SearchBox::kAngleMax)) return false;
  size_t i = 2;
  if (base.delta_r) {
    if (!(x[i] > 0.0 && x[i] <= SearchBox::kAngleMax)) return false;
    ++i;
  }
  return x[i] > 0.0 && x[i] <= 1.0;
}

}  // namespace

TuneConfig TuneConfig::from_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open tune config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("tune config " + path.string() + ": " + e.what());
  }
  TuneConfig c;
  if (j.contains("fixed")) {
    const auto& f = j["fixed"];
    c.initial.delta_xy = f.value("delta_xy", c.initial.delta_xy);
    c.initial.delta_s = f.value("delta_s", c.initial.delta_s);
    c.initial.max_depth = f.value("max_depth", c.initial.max_depth);
    c.n = f.value("n", c.n);
    c.k = f.value("k", c.k);
  }
  if (j.contains("initial")) {
    const auto& i = j["initial"];
    c.initial.delta_dv = i.value("delta_dv", c.initial.delta_dv);
    if (i.contains("delta_alpha")) {
      c.initial.delta_alpha = deg2rad(i["delta_alpha"].get<double>());
    }
    if (i.contains("delta_r") && !i["delta_r"].is_null()) {
      c.initial.delta_r = deg2rad(i["delta_r"].get<double>());
    } else {
      c.initial.delta_r.reset();
    }
    c.initial.delta_dxy = i.value("delta_dxy", c.initial.delta_dxy);
  }
  c.multi_assign_c = j.value("multi_assign_c", c.multi_assign_c);
  if (j.contains("step")) c.step = j["step"].get<std::vector<double>>();
  c.tolerance = j.value("tolerance", c.tolerance);
  c.max_evaluations = j.value("max_evaluations", c.max_evaluations);
  c.initial.validate();
  return c;
}

TuneResult tune_expansion_params(const PipelineArtifacts& train_artifacts,
                                 const std::vector<EvalQuery>& train_queries,
                                 const TuneConfig& config,
                                 const std::string& train_identity,
                                 const std::string& eval_identity) {
  if (!train_identity.empty() && train_identity == eval_identity) {
    throw UsageError(
        "tuning must use a training dataset different from the evaluation "
        "dataset; pass a separate training manifest to avoid overfitting");
  }
  config.initial.validate();
  if (config.initial.max_depth < 1) {
    throw UsageError("tuning requires expansion enabled (max_depth >= 1)");
  }
  const size_t dims = config.free_dimensions();
  if (!config.step.empty() && config.step.size() != dims) {
    throw UsageError("tune step vector must match the free dimension count");
  }

  SearchBox box{4.0 * std::max(config.initial.delta_dv, 1e-9)};

  EvaluateOptions eopts;
  eopts.rankers = {RankerKind::anms};
  eopts.n_list = {config.n};
  eopts.k_list = {config.k};
  eopts.multi_assign_c = config.multi_assign_c;
  eopts.wgc = false;

  // MAP evaluations dominate the cost, so identical vectors (rounded to
  // 1e-6) are served from a cache and do not count as evaluations.
  std::map<std::vector<int64_t>, double> cache;
  size_t cache_hits = 0;
  auto objective = [&](std::span<const double> x) -> double {
    if (!inside_box(x, config.initial, box)) return kOutOfBoxPenalty;
    std::vector<int64_t> key(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
      key[i] = int64_t(std::llround(x[i] * 1e6));
    }
    auto it = cache.find(key);
    if (it != cache.end()) {
      cache_hits++;
      return it->second;
    }
    eopts.expansion = params_from_vector(config.initial, x);
    EvaluateReport report =
        run_evaluate(train_artifacts, train_queries, eopts);
    double value = -report.cells.front().map;
    cache.emplace(std::move(key), value);
    return value;
  };

  std::vector<double> x0;
  x0.push_back(config.initial.delta_dv);
  x0.push_back(config.initial.delta_alpha);
  if (config.initial.delta_r) x0.push_back(*config.initial.delta_r);
  x0.push_back(config.initial.delta_dxy);

  std::vector<double> step = config.step;
  if (step.empty()) {
    step.push_back(std::max(config.initial.delta_dv, 1.0));
    step.push_back(deg2rad(10.0));
    if (config.initial.delta_r) step.push_back(deg2rad(10.0));
    step.push_back(0.2);
  }
  // Keep initial vertices inside the box.
  for (size_t i = 0; i < step.size(); ++i) {
    std::vector<double> probe = x0;
    probe[i] += step[i];
    if (!inside_box(probe, config.initial, box)) step[i] = -step[i];
  }

  NelderMeadResult nm = nelder_mead(objective, x0, step, config.tolerance,
                                    config.max_evaluations);

  TuneResult result;
  result.params = params_from_vector(config.initial, nm.x);
  result.params.validate();
  result.tuned_map = -nm.fx;
  result.evaluations = nm.evaluations;
  result.cache_hits = cache_hits;
  {
    eopts.expansion = config.initial;
    EvaluateReport report =
        run_evaluate(train_artifacts, train_queries, eopts);
    result.initial_map = report.cells.front().map;
  }
  return result;
}

SensitivityReport sensitivity_sweep(const PipelineArtifacts& artifacts,
                                    const std::vector<EvalQuery>& queries,
                                    const ExpansionParams& params, int n,
                                    int k, int multi_assign_c) {
  params.validate();
  EvaluateOptions eopts;
  eopts.rankers = {RankerKind::anms};
  eopts.n_list = {n};
  eopts.k_list = {k};
  eopts.multi_assign_c = multi_assign_c;

  auto evaluate_map = [&](const ExpansionParams& p) {
    eopts.expansion = p;
    return run_evaluate(artifacts, queries, eopts).cells.front().map;
  };

  SensitivityReport report;
  report.base_map = evaluate_map(params);

  struct Axis {
    std::string name;
    std::function<void(ExpansionParams&, double)> scale;
    bool enabled;
  };
  std::vector<Axis> axes{
      {"delta_dv", [](ExpansionParams& p, double f) { p.delta_dv *= f; },
       true},
      {"delta_alpha",
       [](ExpansionParams& p, double f) { p.delta_alpha *= f; }, true},
      {"delta_r",
       [](ExpansionParams& p, double f) { *p.delta_r *= f; },
       params.delta_r.has_value()},
      {"delta_dxy",
       [](ExpansionParams& p, double f) {
         p.delta_dxy = std::min(1.0, p.delta_dxy * f);
       },
       true},
  };

  for (const Axis& axis : axes) {
    if (!axis.enabled) continue;
    SensitivityEntry entry;
    entry.parameter = axis.name;
    for (double factor : {0.9, 1.1}) {
      ExpansionParams p = params;
      axis.scale(p, factor);
      double map = evaluate_map(p);
      if (factor < 1.0) {
        entry.map_minus_10 = map;
      } else {
        entry.map_plus_10 = map;
      }
      double drop = report.base_map - map;
      if (drop > report.max_drop) {
        report.max_drop = drop;
        report.max_drop_parameter =
            (factor < 1.0 ? "-10% " : "+10% ") + axis.name;
      }
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace qbret
