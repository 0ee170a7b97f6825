#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "affect/graph.hpp"
#include "affect/rng.hpp"
#include "affect/tensor.hpp"

namespace affect {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t worst_coord = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t coords_checked = 0;
  std::size_t coords_skipped = 0;  // perturbation crossed a relu/maxpool piece boundary
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;

  double max_rel_err() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_err);
    return m;
  }
  bool pass(double tol) const { return max_rel_err() <= tol; }
};

namespace detail {

struct ScalarEval {
  real value;
  std::uint64_t pattern;  // smoothness-piece fingerprint of the forward pass
};

inline ScalarEval eval_scalar(const std::function<Var(Graph&)>& build) {
  Graph g;
  Var root = build(g);
  const Tensor& v = g.val(root);
  if (v.numel() != 1)
    throw ShapeError("grad_check target must be scalar, got " + shape_str(v.shape()));
  const std::string bad = g.first_non_finite();
  if (!bad.empty()) throw NonFiniteError("non-finite value produced by op '" + bad + "'");
  return {v[0], g.pattern_hash()};
}

// |a-n| relative to the larger magnitude, floored well above the central
// difference noise so coordinates with (near-)zero true gradient pass.
inline double rel_err(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-5});
  return std::abs(analytic - numeric) / denom;
}

}  // namespace detail

// Compares analytic gradients of a scalar computation against central finite
// differences (f(x+h)-f(x-h))/(2h). `build` must construct the computation
// fresh on the given graph, reading the listed parameter tensors, which are
// perturbed in place between evaluations. With max_coords > 0 only a
// deterministic sample of coordinates per tensor is probed.
//
// Coordinates whose +-h evaluations land on different smoothness pieces
// (a relu flipping sign or a maxpool argmax moving) are excluded: at such
// points the loss is not differentiable in that direction and the central
// difference does not estimate the one-sided derivative backward computes.
// This generalizes the maxpool tie-point exclusion.
inline GradCheckReport grad_check(const std::vector<std::pair<std::string, Tensor*>>& params,
                                  const std::function<Var(Graph&)>& build, real step = 1e-4,
                                  std::size_t max_coords = 0, std::uint64_t sample_seed = 0) {
  if (step <= 0.0) throw ValueError("grad_check step must be positive");

  Graph g;
  Var root = build(g);
  const Tensor& rv = g.val(root);
  if (rv.numel() != 1)
    throw ShapeError("grad_check target must be scalar, got " + shape_str(rv.shape()));
  g.backward(root);
  const std::string bad = g.first_non_finite();
  if (!bad.empty()) throw NonFiniteError("non-finite value produced by op '" + bad + "'");
  const std::uint64_t base_pattern = g.pattern_hash();

  GradCheckReport report;
  std::size_t param_index = 0;
  for (const auto& [name, tensor] : params) {
    const Tensor* analytic = g.grad_for(*tensor);

    std::vector<std::size_t> coords;
    const std::size_t n = tensor->numel();
    if (max_coords == 0 || max_coords >= n) {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      Rng rng(derive_seed(sample_seed, 0x6772616463686bULL, param_index));
      for (std::size_t i = 0; i < max_coords; ++i)
        coords.push_back(static_cast<std::size_t>(rng.below(n)));
    }

    GradCheckEntry entry;
    entry.name = name;
    for (std::size_t ci : coords) {
      const real saved = (*tensor)[ci];
      (*tensor)[ci] = saved + step;
      const auto fp = detail::eval_scalar(build);
      (*tensor)[ci] = saved - step;
      const auto fm = detail::eval_scalar(build);
      (*tensor)[ci] = saved;
      if (fp.pattern != base_pattern || fm.pattern != base_pattern) {
        ++entry.coords_skipped;
        continue;
      }
      ++entry.coords_checked;
      const double numeric = (fp.value - fm.value) / (2.0 * step);
      const double a = analytic ? (*analytic)[ci] : 0.0;
      const double err = detail::rel_err(a, numeric);
      if (err >= entry.max_rel_err) {
        entry.max_rel_err = err;
        entry.worst_coord = ci;
        entry.analytic_at_worst = a;
        entry.numeric_at_worst = numeric;
      }
    }
    report.entries.push_back(std::move(entry));
    ++param_index;
  }
  return report;
}

}  // namespace affect
