#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "affect/tensor.hpp"

namespace affect {

// Ground truth / prediction vectors for one target. Pure evaluation-side
// type; training losses consume tensors through the graph ops instead.
struct PredictionPair {
  std::vector<real> truth;
  std::vector<real> pred;

  void validate(std::size_t min_len = 1) const {
    if (truth.size() != pred.size())
      throw ShapeError("prediction pair length mismatch: " + std::to_string(truth.size()) +
                       " vs " + std::to_string(pred.size()));
    if (truth.size() < min_len)
      throw ValueError("prediction pair needs at least " + std::to_string(min_len) +
                       " elements, got " + std::to_string(truth.size()));
  }
};

struct TukeyConfig {
  real c = 4.685;
};

// Tukey's biweight rho: bounded at c^2/6, quadratic-like near zero.
inline real tukey_rho(real r, real c) {
  if (std::abs(r) > c) return c * c / 6.0;
  const real u = 1.0 - (r / c) * (r / c);
  return c * c / 6.0 * (1.0 - u * u * u);
}

// d(rho)/dr; identically zero beyond the cutoff, so outliers exert no pull.
inline real tukey_drho(real r, real c) {
  if (std::abs(r) > c) return 0.0;
  const real u = 1.0 - (r / c) * (r / c);
  return r * u * u;
}

inline real mse(const PredictionPair& p) {
  p.validate();
  real acc = 0.0;
  for (std::size_t i = 0; i < p.truth.size(); ++i) {
    const real r = p.truth[i] - p.pred[i];
    acc += r * r;
  }
  return acc / static_cast<real>(p.truth.size());
}

inline real rmse(const PredictionPair& p) { return std::sqrt(mse(p)); }

inline real tukey_loss(const PredictionPair& p, const TukeyConfig& cfg = {}) {
  p.validate();
  if (cfg.c <= 0.0) throw ValueError("tukey cutoff c must be positive");
  real acc = 0.0;
  for (std::size_t i = 0; i < p.truth.size(); ++i)
    acc += tukey_rho(p.truth[i] - p.pred[i], cfg.c);
  return acc / static_cast<real>(p.truth.size());
}

inline real tukey_grad(real residual, const TukeyConfig& cfg = {}) {
  if (cfg.c <= 0.0) throw ValueError("tukey cutoff c must be positive");
  return tukey_drho(residual, cfg.c);
}

struct CccResult {
  real value = 0.0;
  bool degenerate = false;  // both sequences constant
};

// Concordance correlation coefficient with population (1/n) moments and the
// squared mean-difference term. Degenerate input (zero denominator) yields 0
// with a flag rather than an error, so early-training evaluation never aborts.
inline CccResult ccc(const PredictionPair& p) {
  p.validate(2);
  const std::size_t n = p.truth.size();
  real my = 0.0, mp = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    my += p.truth[i];
    mp += p.pred[i];
  }
  my /= static_cast<real>(n);
  mp /= static_cast<real>(n);
  real vy = 0.0, vp = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const real dy = p.truth[i] - my;
    const real dp = p.pred[i] - mp;
    vy += dy * dy;
    vp += dp * dp;
    cov += dy * dp;
  }
  vy /= static_cast<real>(n);
  vp /= static_cast<real>(n);
  cov /= static_cast<real>(n);
  const real denom = vy + vp + (my - mp) * (my - mp);
  if (denom == 0.0) return {0.0, true};
  return {2.0 * cov / denom, false};
}

}  // namespace affect
