#pragma once

#include <string>
#include <vector>

#include "affect/init.hpp"
#include "affect/ops.hpp"

namespace affect {

// 1x1 conv projection to a fixed embedding width followed by GAP, so feature
// maps of any spatial size collapse to one width-d vector per sample.
struct LevelEmbed {
  ConvParams proj;
  LevelEmbed() = default;
  LevelEmbed(int in_ch, int d) : proj(d, in_ch, 1, 1) {}

  Var forward(Var feature_map) const {
    Graph& g = *feature_map.graph;
    return global_avg_pool(conv2d(feature_map, g.param(proj.w), g.param(proj.b), 1, 0));
  }
};

// Vanilla tanh Bi-RNN over the handful of level embeddings. Hidden states of
// the two directions are concatenated (width 2u) and mapped through a tanh
// output layer of the same width, keeping the self-attention dot product
// well-typed.
struct BiRnnParams {
  DenseParams fwd_x, fwd_h;  // fwd_h carries the recurrent bias
  DenseParams bwd_x, bwd_h;
  DenseParams out;  // 2u -> 2u

  BiRnnParams() = default;
  BiRnnParams(int d, int u)
      : fwd_x(d, u), fwd_h(u, u), bwd_x(d, u), bwd_h(u, u), out(2 * u, 2 * u) {}

  void init(Rng& rng) {
    init_xavier(fwd_x, rng);
    init_xavier(fwd_h, rng);
    init_xavier(bwd_x, rng);
    init_xavier(bwd_h, rng);
    init_xavier(out, rng);
  }

  void collect_params(ParamMap& out_map, const std::string& prefix) {
    collect(out_map, prefix + ".fwd_x", fwd_x);
    collect(out_map, prefix + ".fwd_h", fwd_h);
    collect(out_map, prefix + ".bwd_x", bwd_x);
    collect(out_map, prefix + ".bwd_h", bwd_h);
    collect(out_map, prefix + ".out", out);
  }
};

struct BiRnnState {
  std::vector<Var> hidden;   // h_i = [h_fwd,i ; h_bwd,i], each [N, 2u]
  std::vector<Var> outputs;  // y_i = tanh(W_o h_i + b_o),  each [N, 2u]
};

namespace detail {

// One direction of the recurrence: h_i = tanh(x_i W_x + h_{i-1} W_h + b).
// The first step drops the recurrent term, equivalent to h_0 = 0.
inline std::vector<Var> rnn_direction(const std::vector<Var>& seq, const DenseParams& wx,
                                      const DenseParams& wh) {
  Graph& g = *seq.front().graph;
  std::vector<Var> hs;
  hs.reserve(seq.size());
  Var prev{};
  for (std::size_t i = 0; i < seq.size(); ++i) {
    Var pre = dense(seq[i], g.param(wx.w), g.param(wx.b));
    if (i > 0) pre = add(pre, dense(prev, g.param(wh.w), g.param(wh.b)));
    prev = tanh_op(pre);
    hs.push_back(prev);
  }
  return hs;
}

}  // namespace detail

inline BiRnnState birnn_forward(const std::vector<Var>& seq, const BiRnnParams& params) {
  if (seq.empty()) throw ValueError("birnn_forward: empty level sequence");
  Graph& g = *seq.front().graph;
  const std::size_t l = seq.size();

  std::vector<Var> fwd = detail::rnn_direction(seq, params.fwd_x, params.fwd_h);
  std::vector<Var> rev(seq.rbegin(), seq.rend());
  std::vector<Var> bwd_rev = detail::rnn_direction(rev, params.bwd_x, params.bwd_h);

  BiRnnState state;
  for (std::size_t i = 0; i < l; ++i) {
    Var h = concat_cols(fwd[i], bwd_rev[l - 1 - i]);
    state.hidden.push_back(h);
    state.outputs.push_back(tanh_op(dense(h, g.param(params.out.w), g.param(params.out.b))));
  }
  return state;
}

struct AttentionPoolOut {
  Var pooled;   // [N, 2u]
  Var weights;  // [N, l], rows sum to 1
};

// Self-attention pooling with the dot product as score function:
//   score_i = <h_i, y_i>,  weights = softmax(score),  Y_att = sum_i w_i y_i.
inline AttentionPoolOut self_attention_pool_detailed(const BiRnnState& state) {
  if (state.hidden.empty() || state.outputs.empty())
    throw ValueError("self_attention_pool: empty state");
  if (state.hidden.size() != state.outputs.size())
    throw ShapeError("self_attention_pool: " + std::to_string(state.hidden.size()) +
                     " hidden states vs " + std::to_string(state.outputs.size()) + " outputs");
  Graph& g = *state.hidden.front().graph;
  const std::size_t l = state.hidden.size();
  for (std::size_t i = 0; i < l; ++i)
    require_same_shape(g.val(state.hidden[i]), g.val(state.outputs[i]),
                       "self_attention_pool widths");

  std::vector<Var> scores;
  scores.reserve(l);
  for (std::size_t i = 0; i < l; ++i)
    scores.push_back(dot_rows(state.hidden[i], state.outputs[i]));
  Var weights = softmax_rows(hstack(scores));  // [N, l]

  Var pooled{};
  for (std::size_t i = 0; i < l; ++i) {
    Var term = mul_cols(state.outputs[i], slice_cols(weights, static_cast<int>(i),
                                                     static_cast<int>(i) + 1));
    pooled = i == 0 ? term : add(pooled, term);
  }
  return {pooled, weights};
}

inline Var self_attention_pool(const BiRnnState& state) {
  return self_attention_pool_detailed(state).pooled;
}

}  // namespace affect
