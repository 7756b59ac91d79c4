#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "qbret/core.hpp"

namespace qbret {

struct NelderMeadResult {
  std::vector<double> x;
  double fx = 0.0;
  size_t evaluations = 0;
  bool converged = false;  // simplex spread fell below the tolerance
};

// Downhill simplex minimization with the standard coefficients: reflection 1,
// expansion 2, contraction 0.5, shrink 0.5. Stops when the function spread
// over the simplex drops below tol or the evaluation budget runs out; always
// returns the best point evaluated. Deterministic.
inline NelderMeadResult nelder_mead(
    const std::function<double(std::span<const double>)>& objective,
    std::span<const double> x0, std::span<const double> step, double tol,
    size_t max_eval) {
  const size_t n = x0.size();
  if (n == 0) throw UsageError("nelder_mead: empty start point");
  if (step.size() != n) throw UsageError("nelder_mead: step size mismatch");
  if (!(tol > 0.0)) throw UsageError("nelder_mead: tolerance must be > 0");
  if (max_eval == 0) throw UsageError("nelder_mead: zero evaluation budget");

  NelderMeadResult result;
  result.x.assign(x0.begin(), x0.end());
  result.fx = std::numeric_limits<double>::infinity();

  auto evaluate = [&](std::span<const double> x) {
    double f = objective(x);
    result.evaluations++;
    if (f < result.fx) {
      result.fx = f;
      result.x.assign(x.begin(), x.end());
    }
    return f;
  };

  std::vector<std::vector<double>> simplex;
  std::vector<double> fvals;
  simplex.emplace_back(x0.begin(), x0.end());
  fvals.push_back(evaluate(simplex[0]));
  if (!std::isfinite(fvals[0])) {
    throw UsageError("nelder_mead: objective not finite at the start point");
  }
  for (size_t i = 0; i < n && result.evaluations < max_eval; ++i) {
    std::vector<double> v(x0.begin(), x0.end());
    v[i] += step[i] != 0.0 ? step[i] : 1.0;
    fvals.push_back(evaluate(v));
    simplex.push_back(std::move(v));
  }
  if (simplex.size() < n + 1) return result;  // budget spent during setup

  std::vector<size_t> order(n + 1);
  while (result.evaluations < max_eval) {
    for (size_t i = 0; i <= n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return fvals[a] < fvals[b]; });
    size_t best = order[0], second_worst = order[n - 1], worst = order[n];
    if (fvals[worst] - fvals[best] < tol) {
      result.converged = true;
      break;
    }

    std::vector<double> centroid(n, 0.0);
    for (size_t i = 0; i <= n; ++i) {
      if (i == worst) continue;
      for (size_t d = 0; d < n; ++d) centroid[d] += simplex[i][d];
    }
    for (double& c : centroid) c /= double(n);

    auto blend = [&](double coeff) {
      std::vector<double> x(n);
      for (size_t d = 0; d < n; ++d) {
        x[d] = centroid[d] + coeff * (centroid[d] - simplex[worst][d]);
      }
      return x;
    };

    std::vector<double> reflected = blend(1.0);
    double fr = evaluate(reflected);
    if (fr < fvals[best]) {
      if (result.evaluations < max_eval) {
        std::vector<double> expanded = blend(2.0);
        double fe = evaluate(expanded);
        if (fe < fr) {
          simplex[worst] = std::move(expanded);
          fvals[worst] = fe;
          continue;
        }
      }
      simplex[worst] = std::move(reflected);
      fvals[worst] = fr;
      continue;
    }
    if (fr < fvals[second_worst]) {
      simplex[worst] = std::move(reflected);
      fvals[worst] = fr;
      continue;
    }
    if (result.evaluations >= max_eval) break;
    // Contraction: outside when the reflection improved on the worst vertex,
    // inside otherwise.
    bool outside = fr < fvals[worst];
    std::vector<double> contracted = blend(outside ? 0.5 : -0.5);
    double fc = evaluate(contracted);
    if ((outside && fc <= fr) || (!outside && fc < fvals[worst])) {
      simplex[worst] = std::move(contracted);
      fvals[worst] = fc;
      continue;
    }
    // Shrink toward the best vertex.
    for (size_t i = 0; i <= n && result.evaluations < max_eval; ++i) {
      if (i == best) continue;
      for (size_t d = 0; d < n; ++d) {
        simplex[i][d] = simplex[best][d] + 0.5 * (simplex[i][d] - simplex[best][d]);
      }
      fvals[i] = evaluate(simplex[i]);
    }
  }
  return result;
}

}  // namespace qbret
