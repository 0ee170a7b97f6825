#pragma once

#include <optional>
#include <string>
#include <vector>

#include "affect/config.hpp"
#include "affect/init.hpp"
#include "affect/ops.hpp"

namespace affect {

constexpr int kNumExpressionClasses = 7;

// Two-stage multi-task heads. Stage 1 maps the fused feature vector into a
// dimensional representation and, in 2mt mode, a categorical representation
// with a 7-way classifier on top. Stage 2 regresses valence and arousal from
// the concatenation of both representations (2mt) or from the dimensional
// representation alone (mt / single-task).
struct HeadParams {
  HeadMode mode = HeadMode::mt2;
  DenseParams dim_fc;
  DenseParams cat_fc;
  DenseParams clf_out;
  DenseParams valence_out;
  DenseParams arousal_out;

  HeadParams() = default;
  HeadParams(HeadMode mode_, int fused_width, int n_dim, int n_cat) : mode(mode_) {
    dim_fc = DenseParams(fused_width, n_dim);
    const int reg_width = mode == HeadMode::mt2 ? n_dim + n_cat : n_dim;
    if (mode == HeadMode::mt2) {
      cat_fc = DenseParams(fused_width, n_cat);
      clf_out = DenseParams(n_cat, kNumExpressionClasses);
    }
    if (mode != HeadMode::single_a) valence_out = DenseParams(reg_width, 1);
    if (mode != HeadMode::single_v) arousal_out = DenseParams(reg_width, 1);
  }

  bool has_classifier() const { return mode == HeadMode::mt2; }
  bool has_valence() const { return mode != HeadMode::single_a; }
  bool has_arousal() const { return mode != HeadMode::single_v; }

  void init(Rng& rng) {
    init_xavier(dim_fc, rng);
    if (has_classifier()) {
      init_xavier(cat_fc, rng);
      init_xavier(clf_out, rng);
    }
    if (has_valence()) init_xavier(valence_out, rng);
    if (has_arousal()) init_xavier(arousal_out, rng);
  }

  void collect_params(ParamMap& out, const std::string& prefix) {
    collect(out, prefix + ".dim_fc", dim_fc);
    if (has_classifier()) {
      collect(out, prefix + ".cat_fc", cat_fc);
      collect(out, prefix + ".clf_out", clf_out);
    }
    if (has_valence()) collect(out, prefix + ".valence_out", valence_out);
    if (has_arousal()) collect(out, prefix + ".arousal_out", arousal_out);
  }
};

struct Stage1Out {
  Var dim_rep;
  Var cat_rep;     // invalid unless the classifier branch exists
  Var clf_logits;  // invalid unless the classifier branch exists
};

inline Stage1Out stage1_forward(Var fused, const HeadParams& params) {
  Graph& g = *fused.graph;
  Stage1Out out;
  out.dim_rep = relu(dense(fused, g.param(params.dim_fc.w), g.param(params.dim_fc.b)));
  if (params.has_classifier()) {
    out.cat_rep = relu(dense(fused, g.param(params.cat_fc.w), g.param(params.cat_fc.b)));
    out.clf_logits = dense(out.cat_rep, g.param(params.clf_out.w), g.param(params.clf_out.b));
  }
  return out;
}

struct Stage2Out {
  Var valence;  // invalid in single_a mode
  Var arousal;  // invalid in single_v mode
};

// tanh keeps both regression outputs inside the (-1,1) label range.
inline Stage2Out stage2_forward(const Stage1Out& reps, const HeadParams& params) {
  Var features = reps.dim_rep;
  if (params.has_classifier()) features = concat_cols(reps.dim_rep, reps.cat_rep);
  Graph& g = *features.graph;
  Stage2Out out;
  if (params.has_valence())
    out.valence =
        tanh_op(dense(features, g.param(params.valence_out.w), g.param(params.valence_out.b)));
  if (params.has_arousal())
    out.arousal =
        tanh_op(dense(features, g.param(params.arousal_out.w), g.param(params.arousal_out.b)));
  return out;
}

// L = alpha*L_clf + (1-alpha)*(beta*L_arousal + (1-beta)*L_valence).
// Absent branches contribute nothing; the remaining weights are unchanged.
inline Var combine_losses(std::optional<Var> clf, std::optional<Var> arousal,
                          std::optional<Var> valence, real alpha, real beta) {
  std::optional<Var> reg;
  if (arousal && valence)
    reg = add(scale(*arousal, beta), scale(*valence, 1.0 - beta));
  else if (arousal)
    reg = *arousal;
  else if (valence)
    reg = *valence;

  if (clf && reg) return add(scale(*clf, alpha), scale(*reg, 1.0 - alpha));
  if (clf) return *clf;
  if (reg) return *reg;
  throw ValueError("combine_losses: no loss terms present");
}

struct LossTargets {
  Tensor valence;                   // [N,1]
  Tensor arousal;                   // [N,1]
  std::vector<int> expression;      // empty when unavailable
};

// Builds the combined training objective on the graph. Regression terms use
// the configured residual loss; classification uses mean softmax
// cross-entropy. Missing labels for an enabled task are an error.
inline Var total_loss(const Stage1Out& s1, const Stage2Out& s2, const HeadParams& params,
                      const LossTargets& targets, LossKind loss, real alpha, real beta, real c) {
  const auto regression = [&](Var pred, const Tensor& target) {
    return loss == LossKind::tukey ? tukey_loss_op(pred, target, c) : mse_loss(pred, target);
  };
  std::optional<Var> l_clf, l_aro, l_val;
  if (params.has_classifier()) {
    const Tensor& logits = s1.clf_logits.graph->val(s1.clf_logits);
    if (static_cast<int>(targets.expression.size()) != logits.dim(0))
      throw ValueError("classification enabled but expression labels missing or incomplete");
    l_clf = softmax_xent(s1.clf_logits, targets.expression);
  }
  if (params.has_valence()) {
    if (targets.valence.empty()) throw ValueError("valence task enabled but labels missing");
    l_val = regression(s2.valence, targets.valence);
  }
  if (params.has_arousal()) {
    if (targets.arousal.empty()) throw ValueError("arousal task enabled but labels missing");
    l_aro = regression(s2.arousal, targets.arousal);
  }
  return combine_losses(l_clf, l_aro, l_val, alpha, beta);
}

}  // namespace affect
