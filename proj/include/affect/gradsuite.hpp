#pragma once

#include <string>
#include <vector>

#include "affect/gradcheck.hpp"
#include "affect/model.hpp"
#include "affect/ops.hpp"

namespace affect {

struct GradSuiteLine {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t coords_checked = 0;
  std::size_t coords_skipped = 0;
};

struct GradSuiteResult {
  std::vector<GradSuiteLine> lines;

  double max_rel_err() const {
    double m = 0.0;
    for (const auto& l : lines) m = std::max(m, l.max_rel_err);
    return m;
  }
  bool pass(double tol) const { return max_rel_err() <= tol; }
};

namespace detail {

inline void fold_report(GradSuiteResult& out, const std::string& name,
                        const GradCheckReport& rep) {
  GradSuiteLine line;
  line.name = name;
  for (const auto& e : rep.entries) {
    line.max_rel_err = std::max(line.max_rel_err, e.max_rel_err);
    line.coords_checked += e.coords_checked;
    line.coords_skipped += e.coords_skipped;
  }
  out.lines.push_back(std::move(line));
}

inline Tensor suite_random(Shape shape, Rng& rng, real lo = -1.0, real hi = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace detail

// Central finite-difference validation of every differentiable operator plus
// the complete default network loss on a 2-sample batch. Step and tolerance
// are the caller's; op-level checks cover all coordinates, the full-model
// check samples coordinates per tensor.
inline GradSuiteResult run_gradient_suite(real step = 1e-4, std::size_t model_coords = 6,
                                          std::uint64_t seed = 20240915) {
  GradSuiteResult out;
  Rng rng(seed);
  const auto weighted = [](Graph& g, Var y, const Tensor& coeffs) {
    return mean_all(mul(y, g.input(coeffs)));
  };

  {
    Tensor x = detail::suite_random({2, 3, 8, 8}, rng);
    Tensor w = detail::suite_random({4, 3, 3, 3}, rng);
    Tensor b = detail::suite_random({4}, rng);
    Tensor coeffs = detail::suite_random({2, 4, 8, 8}, rng, 0.5, 1.5);
    detail::fold_report(out, "conv2d",
                        grad_check({{"x", &x}, {"w", &w}, {"b", &b}},
                                   [&](Graph& g) {
                                     return weighted(
                                         g, conv2d(g.param(x), g.param(w), g.param(b), 1, 1),
                                         coeffs);
                                   },
                                   step));
  }
  {
    Tensor x = detail::suite_random({1, 2, 7, 7}, rng);
    Tensor w = detail::suite_random({3, 2, 3, 3}, rng);
    Tensor b = detail::suite_random({3}, rng);
    Tensor coeffs = detail::suite_random({1, 3, 4, 4}, rng, 0.5, 1.5);
    detail::fold_report(out, "conv2d_strided",
                        grad_check({{"x", &x}, {"w", &w}, {"b", &b}},
                                   [&](Graph& g) {
                                     return weighted(
                                         g, conv2d(g.param(x), g.param(w), g.param(b), 2, 1),
                                         coeffs);
                                   },
                                   step));
  }
  {
    Tensor x = detail::suite_random({1, 1, 6, 6}, rng);
    Tensor coeffs = detail::suite_random({1, 1, 3, 3}, rng, 0.5, 1.5);
    detail::fold_report(out, "maxpool2d",
                        grad_check({{"x", &x}},
                                   [&](Graph& g) {
                                     return weighted(g, maxpool2d(g.param(x), 2, 2), coeffs);
                                   },
                                   step));
  }
  {
    Tensor x = detail::suite_random({1, 1, 3, 3}, rng);
    Tensor coeffs = detail::suite_random({1, 1, 6, 6}, rng, 0.5, 1.5);
    detail::fold_report(out, "upsample_bilinear",
                        grad_check({{"x", &x}},
                                   [&](Graph& g) {
                                     return weighted(g, upsample_bilinear(g.param(x), 6, 6),
                                                     coeffs);
                                   },
                                   step));
  }
  {
    Tensor x = detail::suite_random({2, 2, 3, 3}, rng);
    Tensor coeffs = detail::suite_random({2, 2}, rng, 0.5, 1.5);
    detail::fold_report(out, "global_avg_pool",
                        grad_check({{"x", &x}},
                                   [&](Graph& g) {
                                     return weighted(g, global_avg_pool(g.param(x)), coeffs);
                                   },
                                   step));
  }
  {
    Tensor x = detail::suite_random({4, 8}, rng);
    Tensor w = detail::suite_random({8, 3}, rng);
    Tensor b = detail::suite_random({3}, rng);
    Tensor coeffs = detail::suite_random({4, 3}, rng, 0.5, 1.5);
    detail::fold_report(out, "dense",
                        grad_check({{"x", &x}, {"w", &w}, {"b", &b}},
                                   [&](Graph& g) {
                                     return weighted(g,
                                                     dense(g.param(x), g.param(w), g.param(b)),
                                                     coeffs);
                                   },
                                   step));
  }
  for (Act kind : {Act::relu, Act::sigmoid, Act::tanh}) {
    Tensor x = detail::suite_random({12}, rng, -2.0, 2.0);
    Tensor coeffs = detail::suite_random({12}, rng, 0.5, 1.5);
    const char* name = kind == Act::relu ? "relu" : kind == Act::sigmoid ? "sigmoid" : "tanh";
    detail::fold_report(out, name,
                        grad_check({{"x", &x}},
                                   [&](Graph& g) {
                                     return weighted(g, activation(g.param(x), kind), coeffs);
                                   },
                                   step));
  }
  {
    Tensor x = detail::suite_random({5}, rng, -2.0, 2.0);
    Tensor coeffs = detail::suite_random({5}, rng, 0.5, 1.5);
    detail::fold_report(out, "softmax",
                        grad_check({{"x", &x}},
                                   [&](Graph& g) {
                                     return weighted(g, softmax_vec(g.param(x)), coeffs);
                                   },
                                   step));
  }
  {
    Tensor logits = detail::suite_random({4, 7}, rng);
    detail::fold_report(out, "softmax_xent",
                        grad_check({{"logits", &logits}},
                                   [&](Graph& g) {
                                     return softmax_xent(g.param(logits), {0, 3, 6, 2});
                                   },
                                   step));
  }
  {
    Tensor pred = detail::suite_random({6, 1}, rng);
    Tensor target = detail::suite_random({6, 1}, rng);
    detail::fold_report(out, "mse_loss",
                        grad_check({{"pred", &pred}},
                                   [&](Graph& g) { return mse_loss(g.param(pred), target); },
                                   step));
    detail::fold_report(
        out, "tukey_loss",
        grad_check({{"pred", &pred}},
                   [&](Graph& g) { return tukey_loss_op(g.param(pred), target, 4.685); }, step));
  }
  {
    // full default network: 2 blocks, level-2 attention, 2mt heads, tukey
    TrainConfig cfg;
    cfg.seed = seed;
    Model model(cfg);
    Rng mr(derive_seed(seed, 0x6d6f64656cULL));
    model.init(mr);
    Tensor images = detail::suite_random({2, 1, 48, 48}, rng, 0.0, 1.0);
    LossTargets targets;
    targets.valence = detail::suite_random({2, 1}, rng, -0.9, 0.9);
    targets.arousal = detail::suite_random({2, 1}, rng, -0.9, 0.9);
    targets.expression = {2, 5};
    ParamMap pm = model.params();
    std::vector<std::pair<std::string, Tensor*>> params(pm.begin(), pm.end());
    auto build = [&](Graph& g) {
      auto o = model.forward(g, g.input(images));
      return model.loss(g, o, targets);
    };
    detail::fold_report(out, "full_2att_2mt_loss",
                        grad_check(params, build, step, model_coords, seed));
  }
  return out;
}

}  // namespace affect
