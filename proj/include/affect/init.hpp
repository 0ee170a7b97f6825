#pragma once

#include <cmath>
#include <map>
#include <string>

#include "affect/rng.hpp"
#include "affect/tensor.hpp"

namespace affect {

// Hierarchical name -> tensor registry; map keeps checkpoint order stable.
using ParamMap = std::map<std::string, Tensor*>;

struct ConvParams {
  Tensor w;  // [F, C, kh, kw]
  Tensor b;  // [F]
  ConvParams() = default;
  ConvParams(int out_ch, int in_ch, int kh, int kw) : w({out_ch, in_ch, kh, kw}), b({out_ch}) {}
};

struct DenseParams {
  Tensor w;  // [d_in, d_out]
  Tensor b;  // [d_out]
  DenseParams() = default;
  DenseParams(int d_in, int d_out) : w({d_in, d_out}), b({d_out}) {}
};

// He normal: N(0, 2/fan_in) with fan_in = C*kh*kw. Biases stay zero.
inline void init_he(ConvParams& p, Rng& rng) {
  const int fan_in = p.w.dim(1) * p.w.dim(2) * p.w.dim(3);
  const real stddev = std::sqrt(2.0 / static_cast<real>(fan_in));
  for (std::size_t i = 0; i < p.w.numel(); ++i) p.w[i] = rng.normal(0.0, stddev);
  p.b.fill(0.0);
}

// Xavier uniform: U(+-sqrt(6/(fan_in+fan_out))). Biases stay zero.
inline void init_xavier(DenseParams& p, Rng& rng) {
  const real bound = std::sqrt(6.0 / static_cast<real>(p.w.dim(0) + p.w.dim(1)));
  for (std::size_t i = 0; i < p.w.numel(); ++i) p.w[i] = rng.uniform(-bound, bound);
  p.b.fill(0.0);
}

inline void init_xavier_matrix(Tensor& w, Rng& rng) {
  const real bound = std::sqrt(6.0 / static_cast<real>(w.dim(0) + w.dim(1)));
  for (std::size_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-bound, bound);
}

inline void collect(ParamMap& out, const std::string& prefix, ConvParams& p) {
  out[prefix + ".w"] = &p.w;
  out[prefix + ".b"] = &p.b;
}

inline void collect(ParamMap& out, const std::string& prefix, DenseParams& p) {
  out[prefix + ".w"] = &p.w;
  out[prefix + ".b"] = &p.b;
}

}  // namespace affect
