#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "affect/data.hpp"
#include "affect/model.hpp"
#include "affect/objective.hpp"
#include "affect/optimizer.hpp"
#include "affect/serialize.hpp"

namespace affect {

// He/Xavier initialization of a fresh model, deterministic under the seed.
inline Model make_model(const TrainConfig& cfg) {
  Model model(cfg);
  Rng rng(derive_seed(cfg.seed, 0x696e6974ULL));
  model.init(rng);
  return model;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalMetrics {
  bool has_valence = false;
  bool has_arousal = false;
  real ccc_valence = 0.0, ccc_arousal = 0.0;
  real rmse_valence = 0.0, rmse_arousal = 0.0;
  bool degenerate_valence = false, degenerate_arousal = false;

  real ccc_mean() const {
    if (has_valence && has_arousal) return 0.5 * (ccc_valence + ccc_arousal);
    return has_valence ? ccc_valence : ccc_arousal;
  }
  real rmse_mean() const {
    if (has_valence && has_arousal) return 0.5 * (rmse_valence + rmse_arousal);
    return has_valence ? rmse_valence : rmse_arousal;
  }
};

struct Predictions {
  std::vector<real> valence, arousal;  // sized when present
};

namespace detail {

inline Tensor stack_images(const Dataset& data, const std::vector<std::size_t>& idx,
                           std::size_t lo, std::size_t hi,
                           const std::function<Tensor(const Tensor&, std::size_t)>& view) {
  const std::size_t batch = hi - lo;
  Tensor out({static_cast<int>(batch), 1, kCropSize, kCropSize});
  for (std::size_t b = 0; b < batch; ++b) {
    const Tensor img = view(data[idx[lo + b]].image, idx[lo + b]);
    if (img.shape() != Shape{1, kCropSize, kCropSize})
      throw ShapeError("batch expects [1,48,48] crops, got " + shape_str(img.shape()));
    std::copy(img.data(), img.data() + img.numel(),
              out.data() + b * static_cast<std::size_t>(kCropSize) * kCropSize);
  }
  return out;
}

inline void append_column(std::vector<real>& dst, const Tensor& col) {
  for (int n = 0; n < col.dim(0); ++n) dst.push_back(col.at2(n, 0));
}

}  // namespace detail

// Flip-averaged predictions: each 56x56 image is center-cropped, evaluated
// as-is and mirrored, and the two predictions are averaged per target.
inline Predictions predict_tta(const Model& model, const Dataset& data, int batch_size = 64) {
  Predictions out;
  const HeadParams& heads = model.heads();
  std::vector<std::size_t> idx(data.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t lo = 0; lo < data.size(); lo += static_cast<std::size_t>(batch_size)) {
    const std::size_t hi = std::min(data.size(), lo + static_cast<std::size_t>(batch_size));
    Tensor plain = detail::stack_images(data, idx, lo, hi, [](const Tensor& im, std::size_t) {
      return center_crop48(im);
    });
    Tensor mirrored = detail::stack_images(data, idx, lo, hi, [](const Tensor& im, std::size_t) {
      return hflip(center_crop48(im));
    });
    Graph g1, g2;
    auto o1 = model.forward(g1, g1.input(std::move(plain)));
    auto o2 = model.forward(g2, g2.input(std::move(mirrored)));
    const std::size_t batch = hi - lo;
    if (heads.has_valence()) {
      const Tensor& a = g1.val(o1.s2.valence);
      const Tensor& b = g2.val(o2.s2.valence);
      for (std::size_t n = 0; n < batch; ++n)
        out.valence.push_back(0.5 * (a.at2(static_cast<int>(n), 0) + b.at2(static_cast<int>(n), 0)));
    }
    if (heads.has_arousal()) {
      const Tensor& a = g1.val(o1.s2.arousal);
      const Tensor& b = g2.val(o2.s2.arousal);
      for (std::size_t n = 0; n < batch; ++n)
        out.arousal.push_back(0.5 * (a.at2(static_cast<int>(n), 0) + b.at2(static_cast<int>(n), 0)));
    }
  }
  return out;
}

// Single-image convenience wrapper over the flip-averaged path.
inline std::pair<real, real> tta_predict(const Model& model, const Tensor& image56) {
  Dataset one(1);
  one[0].image = image56;
  const Predictions p = predict_tta(model, one, 1);
  return {p.valence.empty() ? 0.0 : p.valence[0], p.arousal.empty() ? 0.0 : p.arousal[0]};
}

inline EvalMetrics evaluate_model(const Model& model, const Dataset& data, int batch_size = 64) {
  if (data.empty()) throw ValueError("evaluate: empty dataset");
  const Predictions pred = predict_tta(model, data, batch_size);
  EvalMetrics m;
  m.has_valence = model.heads().has_valence();
  m.has_arousal = model.heads().has_arousal();
  if (m.has_valence) {
    PredictionPair pair;
    for (std::size_t i = 0; i < data.size(); ++i) pair.truth.push_back(data[i].valence);
    pair.pred = pred.valence;
    const CccResult cr = ccc(pair);
    m.ccc_valence = cr.value;
    m.degenerate_valence = cr.degenerate;
    m.rmse_valence = rmse(pair);
  }
  if (m.has_arousal) {
    PredictionPair pair;
    for (std::size_t i = 0; i < data.size(); ++i) pair.truth.push_back(data[i].arousal);
    pair.pred = pred.arousal;
    const CccResult cr = ccc(pair);
    m.ccc_arousal = cr.value;
    m.degenerate_arousal = cr.degenerate;
    m.rmse_arousal = rmse(pair);
  }
  return m;
}

// Seven-way accuracy of the categorical head on center crops.
inline real classify_eval(const Model& model, const Dataset& data, int batch_size = 64) {
  if (!model.heads().has_classifier())
    throw ValueError("classify_eval: checkpoint has no classifier head (head_mode=" +
                     to_string(model.config().head_mode) + ")");
  if (data.empty()) throw ValueError("classify_eval: empty dataset");
  std::size_t correct = 0;
  std::vector<std::size_t> idx(data.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t lo = 0; lo < data.size(); lo += static_cast<std::size_t>(batch_size)) {
    const std::size_t hi = std::min(data.size(), lo + static_cast<std::size_t>(batch_size));
    Tensor batch = detail::stack_images(data, idx, lo, hi, [](const Tensor& im, std::size_t) {
      return center_crop48(im);
    });
    Graph g;
    auto out = model.forward(g, g.input(std::move(batch)));
    const Tensor& logits = g.val(out.s1.clf_logits);
    for (std::size_t n = 0; n < hi - lo; ++n) {
      const int label = data[idx[lo + n]].expression;
      if (label < 0)
        throw ValueError("classify_eval: sample " + std::to_string(idx[lo + n]) +
                         " has no expression label");
      int best = 0;
      for (int k = 1; k < kNumExpressionClasses; ++k)
        if (logits.at2(static_cast<int>(n), k) > logits.at2(static_cast<int>(n), best)) best = k;
      if (best == label) ++correct;
    }
  }
  return static_cast<real>(correct) / static_cast<real>(data.size());
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct MetricRow {
  std::string split;
  int epoch = 0;
  EvalMetrics metrics;
};

struct CurvePoint {
  int epoch = 0;
  real train_loss = 0.0;
  real lr = 0.0;
};

struct TrainResult {
  Checkpoint best;
  int best_epoch = 0;
  real best_ccc_mean = 0.0;
  std::vector<MetricRow> metrics;
  std::vector<CurvePoint> curve;
};

namespace detail {

inline Checkpoint snapshot(Model& model, const RmsProp& opt, int epoch, std::uint64_t seed) {
  Checkpoint ckpt;
  ckpt.config = model.config();
  ckpt.epoch = epoch;
  ckpt.rng_state = Rng(derive_seed(seed, 0x726573756d65ULL, static_cast<std::uint64_t>(epoch)))
                       .state_str();
  for (const auto& [name, tensor] : model.params()) ckpt.tensors.emplace(name, *tensor);
  for (const auto& [name, tensor] : opt.state()) ckpt.tensors.emplace("opt.v." + name, tensor);
  return ckpt;
}

}  // namespace detail

// Restores a model (and optionally the optimizer) from a checkpoint. Tensor
// names and shapes must match the architecture exactly.
inline Model model_from_checkpoint(const Checkpoint& ckpt, RmsProp* opt = nullptr) {
  Model model(ckpt.config);
  ParamMap params = model.params();
  for (auto& [name, tensor] : params) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end())
      throw ValueError("checkpoint incompatible with architecture: missing tensor " + name);
    if (it->second.shape() != tensor->shape())
      throw ShapeError("checkpoint tensor " + name + " has shape " +
                       shape_str(it->second.shape()) + ", architecture wants " +
                       shape_str(tensor->shape()));
    *tensor = it->second;
  }
  if (opt) {
    std::map<std::string, Tensor> state;
    for (const auto& [name, tensor] : ckpt.tensors)
      if (name.rfind("opt.v.", 0) == 0) state.emplace(name.substr(6), tensor);
    opt->load_state(std::move(state));
  }
  return model;
}

// Full training run: shuffled augmented mini-batches, combined objective,
// plateau LR schedule, per-epoch flip-averaged validation metrics, best
// checkpoint by validation mean CCC.
inline TrainResult train(const TrainConfig& cfg, const Dataset& train_set,
                         const Dataset& val_set) {
  cfg.validate();
  if (train_set.empty()) throw ValueError("train: empty training set");
  if (val_set.empty()) throw ValueError("train: empty validation set");

  Model model = make_model(cfg);
  ParamMap params = model.params();
  RmsProp opt;

  TrainResult result;
  std::vector<real> loss_history;
  real lr = cfg.lr;

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, 0x73687566ULL, static_cast<std::uint64_t>(epoch)));
    shuffle_indices(order, shuffle_rng);

    real epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t hi =
          std::min(order.size(), lo + static_cast<std::size_t>(cfg.batch_size));
      const std::size_t batch = hi - lo;

      // augmentation rng is a pure function of (seed, epoch, sample index)
      Tensor images = detail::stack_images(
          train_set, order, lo, hi, [&](const Tensor& im, std::size_t sample_idx) {
            Rng aug_rng(derive_seed(cfg.seed, 0x617567ULL,
                                    (static_cast<std::uint64_t>(epoch) << 32) |
                                        static_cast<std::uint64_t>(sample_idx)));
            return augment(im, aug_rng);
          });

      LossTargets targets;
      if (model.heads().has_valence()) {
        targets.valence = Tensor({static_cast<int>(batch), 1});
        for (std::size_t b = 0; b < batch; ++b)
          targets.valence.at2(static_cast<int>(b), 0) = train_set[order[lo + b]].valence;
      }
      if (model.heads().has_arousal()) {
        targets.arousal = Tensor({static_cast<int>(batch), 1});
        for (std::size_t b = 0; b < batch; ++b)
          targets.arousal.at2(static_cast<int>(b), 0) = train_set[order[lo + b]].arousal;
      }
      if (model.heads().has_classifier()) {
        for (std::size_t b = 0; b < batch; ++b) {
          const int e = train_set[order[lo + b]].expression;
          if (e < 0)
            throw ValueError("classification enabled but sample " +
                             std::to_string(order[lo + b]) + " lacks an expression label");
          targets.expression.push_back(e);
        }
      }

      Graph g;
      auto out = model.forward(g, g.input(std::move(images)));
      Var loss = model.loss(g, out, targets);
      const real loss_value = g.val(loss)[0];
      if (!std::isfinite(loss_value)) {
        const std::string bad = g.first_non_finite();
        throw NonFiniteError("training aborted at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(lo / cfg.batch_size) +
                             ": first non-finite tensor in op '" + bad + "'");
      }
      g.backward(loss);
      {
        const std::string bad = g.first_non_finite();
        if (!bad.empty())
          throw NonFiniteError("training aborted at epoch " + std::to_string(epoch) +
                               ": non-finite gradient in op '" + bad + "'");
      }
      opt.step(params, g, lr);
      epoch_loss += loss_value * static_cast<real>(batch);
      seen += batch;
    }
    epoch_loss /= static_cast<real>(seen);
    loss_history.push_back(epoch_loss);
    lr = plateau_lr(loss_history, cfg.lr, cfg.plateau_patience, cfg.min_delta);
    result.curve.push_back({epoch, epoch_loss, lr});

    EvalMetrics val = evaluate_model(model, val_set, cfg.batch_size);
    result.metrics.push_back({"val", epoch, val});
    if (result.best.tensors.empty() || val.ccc_mean() > result.best_ccc_mean) {
      result.best_ccc_mean = val.ccc_mean();
      result.best_epoch = epoch;
      result.best = detail::snapshot(model, opt, epoch, cfg.seed);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Report writers (fixed formatting keeps reruns byte-identical)
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt6(real v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

inline std::string fmt9e(real v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.9e", v);
  return buf;
}

}  // namespace detail

inline std::string metrics_csv_header(bool has_valence, bool has_arousal) {
  std::string h = "split,epoch";
  if (has_valence) h += ",ccc_valence";
  if (has_arousal) h += ",ccc_arousal";
  h += ",ccc_mean";
  if (has_valence) h += ",rmse_valence";
  if (has_arousal) h += ",rmse_arousal";
  h += ",rmse_mean";
  return h;
}

inline std::string metrics_csv_row(const MetricRow& row) {
  const EvalMetrics& m = row.metrics;
  std::string s = row.split + "," + std::to_string(row.epoch);
  if (m.has_valence) s += "," + detail::fmt6(m.ccc_valence);
  if (m.has_arousal) s += "," + detail::fmt6(m.ccc_arousal);
  s += "," + detail::fmt6(m.ccc_mean());
  if (m.has_valence) s += "," + detail::fmt6(m.rmse_valence);
  if (m.has_arousal) s += "," + detail::fmt6(m.rmse_arousal);
  s += "," + detail::fmt6(m.rmse_mean());
  return s;
}

inline void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows,
                              bool has_valence, bool has_arousal) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write metrics csv: " + path);
  out << metrics_csv_header(has_valence, has_arousal) << "\n";
  for (const MetricRow& row : rows) out << metrics_csv_row(row) << "\n";
}

inline void write_curve_csv(const std::string& path, const std::vector<CurvePoint>& curve) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write curve csv: " + path);
  out << "epoch,train_loss,lr\n";
  for (const CurvePoint& p : curve)
    out << p.epoch << "," << detail::fmt9e(p.train_loss) << "," << detail::fmt9e(p.lr) << "\n";
}

}  // namespace affect
