#pragma once

#include <optional>
#include <string>
#include <vector>

#include "affect/init.hpp"
#include "affect/ops.hpp"

namespace affect {

// H = (1 + M) * T, elementwise. The additive 1 lets trunk features bypass
// the gate, so a near-zero mask leaves the trunk signal intact.
inline Var attention_combine(Var trunk_out, Var mask_out) {
  return mul(add_scalar(mask_out, 1.0), trunk_out);
}

// Residual attention block: a plain convolutional trunk gated by an
// hourglass mask branch (pooled descent, bilinear ascent, sigmoid).
// Channel count is preserved end to end; spatial size is preserved by
// same-padding in the trunk and by symmetric pool/upsample pairs in the mask.
class AttentionBlock {
 public:
  static constexpr int kTrunkDepth = 2;
  static constexpr int kMaxPoolStages = 2;

  AttentionBlock() = default;

  // Spatial extents are fixed at construction so the hourglass depth can be
  // validated up front: each pooling stage halves h and w exactly.
  AttentionBlock(int channels, int h, int w) : channels_(channels), h_(h), w_(w) {
    pool_stages_ = 0;
    int ph = h, pw = w;
    while (pool_stages_ < kMaxPoolStages && ph % 2 == 0 && pw % 2 == 0 && ph >= 4 && pw >= 4) {
      ph /= 2;
      pw /= 2;
      ++pool_stages_;
    }
    if (pool_stages_ == 0)
      throw ShapeError("attention mask branch needs even spatial extents >= 4, got " +
                       std::to_string(h) + "x" + std::to_string(w));
    for (int i = 0; i < kTrunkDepth; ++i) trunk_.emplace_back(channels, channels, 3, 3);
    for (int i = 0; i < pool_stages_; ++i) {
      mask_down_.emplace_back(channels, channels, 3, 3);
      mask_up_.emplace_back(channels, channels, 3, 3);
    }
    mask_gate_ = ConvParams(channels, channels, 1, 1);
  }

  int channels() const { return channels_; }
  int pool_stages() const { return pool_stages_; }

  void init(Rng& rng) {
    for (auto& c : trunk_) init_he(c, rng);
    for (auto& c : mask_down_) init_he(c, rng);
    for (auto& c : mask_up_) init_he(c, rng);
    init_he(mask_gate_, rng);
  }

  // T(x): stride-1 same-padded conv+relu stack, spatial size preserved.
  Var trunk_forward(Var x) const {
    check_input(x);
    Var v = x;
    for (const auto& c : trunk_) {
      Graph& g = *v.graph;
      v = relu(conv2d(v, g.param(c.w), g.param(c.b), 1, 1));
    }
    return v;
  }

  // M(x): pool+conv descent, upsample+conv ascent, then a 1x1 conv squeezed
  // through a sigmoid. Every output lies strictly inside (0,1).
  Var mask_forward(Var x) const {
    check_input(x);
    Graph& g = *x.graph;
    if (mask_override_) {
      if (mask_override_->shape() != g.val(x).shape())
        throw ShapeError("mask override shape " + shape_str(mask_override_->shape()) +
                         " does not match block input " + shape_str(g.val(x).shape()));
      return g.input(*mask_override_);
    }
    Var v = x;
    std::vector<std::pair<int, int>> sizes;
    for (int s = 0; s < pool_stages_; ++s) {
      const Tensor& cur = g.val(v);
      sizes.emplace_back(cur.dim(2), cur.dim(3));
      v = maxpool2d(v, 2, 2);
      v = relu(conv2d(v, g.param(mask_down_[s].w), g.param(mask_down_[s].b), 1, 1));
    }
    for (int s = pool_stages_ - 1; s >= 0; --s) {
      v = upsample_bilinear(v, sizes[static_cast<std::size_t>(s)].first,
                            sizes[static_cast<std::size_t>(s)].second);
      const auto& c = mask_up_[static_cast<std::size_t>(pool_stages_ - 1 - s)];
      v = relu(conv2d(v, g.param(c.w), g.param(c.b), 1, 1));
    }
    return sigmoid(conv2d(v, g.param(mask_gate_.w), g.param(mask_gate_.b), 1, 0));
  }

  Var forward(Var x) const {
    Var t = trunk_forward(x);
    Var m = mask_forward(x);
    const Tensor& tv = x.graph->val(t);
    const Tensor& mv = x.graph->val(m);
    if (tv.shape() != mv.shape())
      throw ShapeError("attention branches disagree: trunk " + shape_str(tv.shape()) +
                       " vs mask " + shape_str(mv.shape()));
    return attention_combine(t, m);
  }

  // Test seam: forces M(x) to a constant tensor so the combine rule can be
  // asserted in isolation.
  void set_mask_override(Tensor m) { mask_override_ = std::move(m); }
  void clear_mask_override() { mask_override_.reset(); }

  void collect_params(ParamMap& out, const std::string& prefix) {
    for (std::size_t i = 0; i < trunk_.size(); ++i)
      collect(out, prefix + ".trunk." + std::to_string(i), trunk_[i]);
    for (std::size_t i = 0; i < mask_down_.size(); ++i)
      collect(out, prefix + ".mask.down." + std::to_string(i), mask_down_[i]);
    for (std::size_t i = 0; i < mask_up_.size(); ++i)
      collect(out, prefix + ".mask.up." + std::to_string(i), mask_up_[i]);
    collect(out, prefix + ".mask.gate", mask_gate_);
  }

 private:
  void check_input(Var x) const {
    const Tensor& xv = x.graph->val(x);
    require_rank(xv, 4, "attention block input");
    if (xv.dim(1) != channels_)
      throw ShapeError("attention block expects " + std::to_string(channels_) +
                       " channels, got " + std::to_string(xv.dim(1)));
    if (xv.dim(2) != h_ || xv.dim(3) != w_)
      throw ShapeError("attention block built for " + std::to_string(h_) + "x" +
                       std::to_string(w_) + ", got " + std::to_string(xv.dim(2)) + "x" +
                       std::to_string(xv.dim(3)));
  }

  int channels_ = 0;
  int h_ = 0;
  int w_ = 0;
  int pool_stages_ = 0;
  std::vector<ConvParams> trunk_;
  std::vector<ConvParams> mask_down_;
  std::vector<ConvParams> mask_up_;
  ConvParams mask_gate_;
  std::optional<Tensor> mask_override_;
};

}  // namespace affect
