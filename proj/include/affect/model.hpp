#pragma once

#include <string>
#include <vector>

#include "affect/attention.hpp"
#include "affect/config.hpp"
#include "affect/fusion.hpp"
#include "affect/heads.hpp"
#include "affect/init.hpp"
#include "affect/ops.hpp"

namespace affect {

constexpr int kInputSize = 48;

// Small AlexNet-flavored backbone for 48x48 grayscale: three stages of
// stride-1 conv + relu + 2x2 maxpool, with residual attention blocks hung
// after the first `blocks` stages. Level embeddings tap each attention
// output plus the final stage.
class Model {
 public:
  static constexpr int kStages = 3;
  static constexpr int kStageChannels[kStages] = {8, 16, 32};

  Model() = default;

  explicit Model(const TrainConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    int ch = 1, size = kInputSize;
    for (int s = 0; s < kStages; ++s) {
      stages_.emplace_back(kStageChannels[s], ch, 3, 3);
      ch = kStageChannels[s];
      size /= 2;  // stage conv preserves spatial size; the pool halves it
      if (use_attention() && s < cfg_.blocks) blocks_.emplace_back(ch, size, size);
    }
    const int fused_width = 2 * cfg_.rnn_u;
    if (cfg_.attention_mode == AttentionMode::level2) {
      for (int t = 0; t < tap_count(); ++t)
        embeds_.emplace_back(kStageChannels[tap_stage(t)], cfg_.embed_d);
      rnn_ = BiRnnParams(cfg_.embed_d, cfg_.rnn_u);
    } else {
      const int flat = kStageChannels[kStages - 1] * size * size;
      flat_fc_ = DenseParams(flat, fused_width);
    }
    heads_ = HeadParams(cfg_.head_mode, fused_width, cfg_.n_dim, cfg_.n_cat);
  }

  const TrainConfig& config() const { return cfg_; }
  bool use_attention() const { return cfg_.attention_mode != AttentionMode::none; }
  int tap_count() const {
    return use_attention() ? cfg_.blocks + (cfg_.blocks < kStages ? 1 : 0) : 0;
  }
  const HeadParams& heads() const { return heads_; }
  AttentionBlock& block(int i) { return blocks_.at(static_cast<std::size_t>(i)); }

  void init(Rng& rng) {
    for (auto& s : stages_) init_he(s, rng);
    for (auto& b : blocks_) b.init(rng);
    for (auto& e : embeds_) init_he(e.proj, rng);
    if (cfg_.attention_mode == AttentionMode::level2)
      rnn_.init(rng);
    else
      init_xavier(flat_fc_, rng);
    heads_.init(rng);
  }

  struct Outputs {
    Var fused;
    Stage1Out s1;
    Stage2Out s2;
  };

  Outputs forward(Graph& g, Var images) const {
    const Tensor& im = g.val(images);
    require_rank(im, 4, "model input");
    if (im.dim(1) != 1 || im.dim(2) != kInputSize || im.dim(3) != kInputSize)
      throw ShapeError("model expects [N,1," + std::to_string(kInputSize) + "," +
                       std::to_string(kInputSize) + "] input, got " + shape_str(im.shape()));

    Var x = images;
    std::vector<Var> taps;
    for (int s = 0; s < kStages; ++s) {
      x = maxpool2d(relu(conv2d(x, g.param(stages_[s].w), g.param(stages_[s].b), 1, 1)), 2, 2);
      if (use_attention() && s < cfg_.blocks) {
        x = blocks_[static_cast<std::size_t>(s)].forward(x);
        taps.push_back(x);
      }
    }
    if (use_attention() && cfg_.blocks < kStages) taps.push_back(x);

    Outputs out;
    if (cfg_.attention_mode == AttentionMode::level2) {
      std::vector<Var> seq;
      for (std::size_t t = 0; t < taps.size(); ++t) seq.push_back(embeds_[t].forward(taps[t]));
      out.fused = self_attention_pool(birnn_forward(seq, rnn_));
    } else {
      out.fused = relu(dense(flatten(x), g.param(flat_fc_.w), g.param(flat_fc_.b)));
    }
    out.s1 = stage1_forward(out.fused, heads_);
    out.s2 = stage2_forward(out.s1, heads_);
    return out;
  }

  Var loss(Graph& g, const Outputs& out, const LossTargets& targets) const {
    return total_loss(out.s1, out.s2, heads_, targets, cfg_.loss, cfg_.alpha, cfg_.beta, cfg_.c);
  }

  void collect_params(ParamMap& out) {
    for (std::size_t s = 0; s < stages_.size(); ++s)
      collect(out, "backbone.stage" + std::to_string(s), stages_[s]);
    for (std::size_t b = 0; b < blocks_.size(); ++b)
      blocks_[b].collect_params(out, "block" + std::to_string(b + 1));
    for (std::size_t e = 0; e < embeds_.size(); ++e)
      collect(out, "fusion.embed." + std::to_string(e), embeds_[e].proj);
    if (cfg_.attention_mode == AttentionMode::level2)
      rnn_.collect_params(out, "fusion.rnn");
    else
      collect(out, "backbone.flat_fc", flat_fc_);
    heads_.collect_params(out, "heads");
  }

  ParamMap params() {
    ParamMap m;
    collect_params(m);
    return m;
  }

 private:
  // Backbone stage whose channel width feeds tap t.
  int tap_stage(int t) const { return t < cfg_.blocks ? t : kStages - 1; }

  TrainConfig cfg_;
  std::vector<ConvParams> stages_;
  std::vector<AttentionBlock> blocks_;
  std::vector<LevelEmbed> embeds_;
  BiRnnParams rnn_;
  DenseParams flat_fc_;
  HeadParams heads_;
};

}  // namespace affect
