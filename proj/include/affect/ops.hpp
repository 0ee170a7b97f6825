#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "affect/graph.hpp"
#include "affect/objective.hpp"
#include "affect/tensor.hpp"

namespace affect {

// ---------------------------------------------------------------------------
// Dense kernels. Row-major GEMM variants with loop orders chosen for
// contiguous inner access; every output element is written by exactly one
// iteration, so results are deterministic.
// ---------------------------------------------------------------------------

// C[m,n] += A[m,k] * B[k,n]
inline void gemm_nn(const real* a, const real* b, real* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const real* arow = a + static_cast<std::size_t>(i) * k;
    real* crow = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const real av = arow[p];
      if (av == 0.0) continue;
      const real* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
inline void gemm_nt(const real* a, const real* b, real* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const real* arow = a + static_cast<std::size_t>(i) * k;
    real* crow = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const real* brow = b + static_cast<std::size_t>(j) * k;
      real acc = 0.0;
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C[m,n] += A[k,m]^T * B[k,n]
inline void gemm_tn(const real* a, const real* b, real* c, int m, int k, int n) {
  for (int p = 0; p < k; ++p) {
    const real* arow = a + static_cast<std::size_t>(p) * m;
    const real* brow = b + static_cast<std::size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const real av = arow[i];
      if (av == 0.0) continue;
      real* crow = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// Unrolls one sample's padded patches into col[C*kh*kw, OH*OW].
inline void im2col(const real* x, int C, int H, int W, int kh, int kw, int stride, int pad,
                   int OH, int OW, real* col) {
  for (int c = 0; c < C; ++c) {
    for (int a = 0; a < kh; ++a) {
      for (int b = 0; b < kw; ++b) {
        real* dst = col + (static_cast<std::size_t>(c) * kh * kw + a * kw + b) *
                              (static_cast<std::size_t>(OH) * OW);
        for (int i = 0; i < OH; ++i) {
          const int ih = i * stride + a - pad;
          if (ih < 0 || ih >= H) {
            std::fill(dst + static_cast<std::size_t>(i) * OW,
                      dst + static_cast<std::size_t>(i + 1) * OW, 0.0);
            continue;
          }
          const real* src = x + (static_cast<std::size_t>(c) * H + ih) * W;
          for (int j = 0; j < OW; ++j) {
            const int iw = j * stride + b - pad;
            dst[static_cast<std::size_t>(i) * OW + j] = (iw >= 0 && iw < W) ? src[iw] : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates col[C*kh*kw, OH*OW] back into the image.
inline void col2im(const real* col, int C, int H, int W, int kh, int kw, int stride, int pad,
                   int OH, int OW, real* x) {
  for (int c = 0; c < C; ++c) {
    for (int a = 0; a < kh; ++a) {
      for (int b = 0; b < kw; ++b) {
        const real* src = col + (static_cast<std::size_t>(c) * kh * kw + a * kw + b) *
                                    (static_cast<std::size_t>(OH) * OW);
        for (int i = 0; i < OH; ++i) {
          const int ih = i * stride + a - pad;
          if (ih < 0 || ih >= H) continue;
          real* dst = x + (static_cast<std::size_t>(c) * H + ih) * W;
          for (int j = 0; j < OW; ++j) {
            const int iw = j * stride + b - pad;
            if (iw >= 0 && iw < W) dst[iw] += src[static_cast<std::size_t>(i) * OW + j];
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Differentiable operators
// ---------------------------------------------------------------------------

// Cross-correlation (no kernel flip), zero padding, floor output extents:
// OH = (H + 2*pad - kh)/stride + 1.
inline Var conv2d(Var x, Var w, Var b, int stride = 1, int pad = 0) {
  Graph& g = *x.graph;
  const Tensor& X = g.val(x);
  const Tensor& K = g.val(w);
  const Tensor& B = g.val(b);
  require_rank(X, 4, "conv2d input");
  require_rank(K, 4, "conv2d kernel");
  require_rank(B, 1, "conv2d bias");
  const int N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  const int F = K.dim(0), kh = K.dim(2), kw = K.dim(3);
  if (K.dim(1) != C)
    throw ShapeError("conv2d: kernel channel dim " + std::to_string(K.dim(1)) +
                     " does not match input channel dim " + std::to_string(C));
  if (B.dim(0) != F)
    throw ShapeError("conv2d: bias dim " + std::to_string(B.dim(0)) +
                     " does not match filter count " + std::to_string(F));
  if (stride < 1) throw ValueError("conv2d: stride must be >= 1");
  if (kh > H + 2 * pad)
    throw ShapeError("conv2d: kernel height " + std::to_string(kh) +
                     " exceeds padded input height " + std::to_string(H + 2 * pad));
  if (kw > W + 2 * pad)
    throw ShapeError("conv2d: kernel width " + std::to_string(kw) +
                     " exceeds padded input width " + std::to_string(W + 2 * pad));
  const int OH = (H + 2 * pad - kh) / stride + 1;
  const int OW = (W + 2 * pad - kw) / stride + 1;
  const int ckk = C * kh * kw;
  const int ohw = OH * OW;

  Tensor Y({N, F, OH, OW});
  std::vector<real> col(static_cast<std::size_t>(ckk) * ohw);
  for (int n = 0; n < N; ++n) {
    im2col(X.data() + X.idx4(n, 0, 0, 0), C, H, W, kh, kw, stride, pad, OH, OW, col.data());
    real* yn = Y.data() + Y.idx4(n, 0, 0, 0);
    gemm_nn(K.data(), col.data(), yn, F, ckk, ohw);
    for (int f = 0; f < F; ++f) {
      const real bias = B[static_cast<std::size_t>(f)];
      real* row = yn + static_cast<std::size_t>(f) * ohw;
      for (int i = 0; i < ohw; ++i) row[i] += bias;
    }
  }

  const int xid = x.id, wid = w.id, bid = b.id;
  Var out = g.add_node("conv2d", std::move(Y), {xid, wid, bid}, nullptr);
  const int oid = out.id;
  g.set_backward(oid, [=](Graph& gg) {
    const Tensor& Xv = gg.val(xid);
    const Tensor& Kv = gg.val(wid);
    const Tensor& dY = gg.node(oid).grad;
    Tensor& dX = gg.grad_buffer(xid);
    Tensor& dK = gg.grad_buffer(wid);
    Tensor& dB = gg.grad_buffer(bid);
    std::vector<real> colb(static_cast<std::size_t>(ckk) * ohw);
    std::vector<real> dcol(static_cast<std::size_t>(ckk) * ohw);
    for (int n = 0; n < N; ++n) {
      const real* dyn = dY.data() + dY.idx4(n, 0, 0, 0);
      // bias: sum over spatial positions
      for (int f = 0; f < F; ++f) {
        const real* row = dyn + static_cast<std::size_t>(f) * ohw;
        real acc = 0.0;
        for (int i = 0; i < ohw; ++i) acc += row[i];
        dB[static_cast<std::size_t>(f)] += acc;
      }
      im2col(Xv.data() + Xv.idx4(n, 0, 0, 0), C, H, W, kh, kw, stride, pad, OH, OW, colb.data());
      gemm_nt(dyn, colb.data(), dK.data(), F, ohw, ckk);
      std::fill(dcol.begin(), dcol.end(), 0.0);
      gemm_tn(Kv.data(), dyn, dcol.data(), ckk, F, ohw);
      col2im(dcol.data(), C, H, W, kh, kw, stride, pad, OH, OW, dX.data() + dX.idx4(n, 0, 0, 0));
    }
  });
  return out;
}

// Per-window maximum; ties route gradient to the first-scanned (row-major)
// position so the backward pass is deterministic.
inline Var maxpool2d(Var x, int window, int stride) {
  Graph& g = *x.graph;
  const Tensor& X = g.val(x);
  require_rank(X, 4, "maxpool2d input");
  const int N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  if (window > H || window > W)
    throw ShapeError("maxpool2d: window " + std::to_string(window) + " larger than input " +
                     std::to_string(H) + "x" + std::to_string(W));
  if (stride < 1) throw ValueError("maxpool2d: stride must be >= 1");
  const int OH = (H - window) / stride + 1;
  const int OW = (W - window) / stride + 1;

  Tensor Y({N, C, OH, OW});
  auto argmax = std::make_shared<std::vector<int>>(Y.numel());
  std::size_t o = 0;
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const real* plane = X.data() + X.idx4(n, c, 0, 0);
      for (int i = 0; i < OH; ++i) {
        for (int j = 0; j < OW; ++j, ++o) {
          real best = plane[static_cast<std::size_t>(i * stride) * W + j * stride];
          int bestpos = i * stride * W + j * stride;
          for (int a = 0; a < window; ++a) {
            for (int bcol = 0; bcol < window; ++bcol) {
              const int pos = (i * stride + a) * W + (j * stride + bcol);
              const real v = plane[static_cast<std::size_t>(pos)];
              if (v > best) {
                best = v;
                bestpos = pos;
              }
            }
          }
          Y[o] = best;
          (*argmax)[o] = bestpos;
        }
      }
    }
  }
  {
    std::uint64_t arg_hash = 0xcbf29ce484222325ULL;
    for (int v : *argmax) arg_hash = (arg_hash ^ static_cast<std::uint64_t>(v)) * 1099511628211ULL;
    g.fold_pattern(arg_hash);
  }

  const int xid = x.id;
  const std::size_t plane_sz = static_cast<std::size_t>(H) * W;
  const std::size_t oplane_sz = static_cast<std::size_t>(OH) * OW;
  Var out = g.add_node("maxpool2d", std::move(Y), {xid}, nullptr);
  const int oid = out.id;
  g.set_backward(oid, [=](Graph& gg) {
    const Tensor& dY = gg.node(oid).grad;
    Tensor& dX = gg.grad_buffer(xid);
    std::size_t oo = 0;
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < C; ++c) {
        real* plane = dX.data() + (static_cast<std::size_t>(n) * C + c) * plane_sz;
        const real* dplane = dY.data() + (static_cast<std::size_t>(n) * C + c) * oplane_sz;
        for (std::size_t i = 0; i < oplane_sz; ++i, ++oo)
          plane[static_cast<std::size_t>((*argmax)[oo])] += dplane[i];
      }
    }
  });
  return out;
}

struct BilinearAxis {
  std::vector<int> lo, hi;
  std::vector<real> frac;
};

inline BilinearAxis bilinear_axis(int in, int out) {
  BilinearAxis ax;
  ax.lo.resize(static_cast<std::size_t>(out));
  ax.hi.resize(static_cast<std::size_t>(out));
  ax.frac.resize(static_cast<std::size_t>(out));
  const real scale = out > 1 ? static_cast<real>(in - 1) / static_cast<real>(out - 1) : 0.0;
  for (int i = 0; i < out; ++i) {
    const real pos = scale * i;
    int lo = static_cast<int>(std::floor(pos));
    if (lo > in - 1) lo = in - 1;
    const int hi = std::min(lo + 1, in - 1);
    ax.lo[static_cast<std::size_t>(i)] = lo;
    ax.hi[static_cast<std::size_t>(i)] = hi;
    ax.frac[static_cast<std::size_t>(i)] = pos - lo;
  }
  return ax;
}

// Align-corners bilinear upsampling; corners map exactly onto corners. The
// mask branch only ever enlarges, so shrinking is rejected.
inline Var upsample_bilinear(Var x, int out_h, int out_w) {
  Graph& g = *x.graph;
  const Tensor& X = g.val(x);
  require_rank(X, 4, "upsample_bilinear input");
  const int N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  if (out_h < H || out_w < W)
    throw ShapeError("upsample_bilinear: target " + std::to_string(out_h) + "x" +
                     std::to_string(out_w) + " smaller than input " + std::to_string(H) + "x" +
                     std::to_string(W));
  const BilinearAxis ay = bilinear_axis(H, out_h);
  const BilinearAxis axx = bilinear_axis(W, out_w);

  Tensor Y({N, C, out_h, out_w});
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const real* src = X.data() + X.idx4(n, c, 0, 0);
      real* dst = Y.data() + Y.idx4(n, c, 0, 0);
      for (int i = 0; i < out_h; ++i) {
        const int y0 = ay.lo[static_cast<std::size_t>(i)], y1 = ay.hi[static_cast<std::size_t>(i)];
        const real fy = ay.frac[static_cast<std::size_t>(i)];
        for (int j = 0; j < out_w; ++j) {
          const int x0 = axx.lo[static_cast<std::size_t>(j)],
                    x1 = axx.hi[static_cast<std::size_t>(j)];
          const real fx = axx.frac[static_cast<std::size_t>(j)];
          dst[static_cast<std::size_t>(i) * out_w + j] =
              (1 - fy) * ((1 - fx) * src[static_cast<std::size_t>(y0) * W + x0] +
                          fx * src[static_cast<std::size_t>(y0) * W + x1]) +
              fy * ((1 - fx) * src[static_cast<std::size_t>(y1) * W + x0] +
                    fx * src[static_cast<std::size_t>(y1) * W + x1]);
        }
      }
    }
  }

  const int xid = x.id;
  Var out = g.add_node("upsample_bilinear", std::move(Y), {xid}, nullptr);
  const int oid = out.id;
  g.set_backward(oid, [=](Graph& gg) {
    const Tensor& dY = gg.node(oid).grad;
    Tensor& dX = gg.grad_buffer(xid);
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < C; ++c) {
        real* src = dX.data() + dX.idx4(n, c, 0, 0);
        const real* dst = dY.data() + dY.idx4(n, c, 0, 0);
        for (int i = 0; i < out_h; ++i) {
          const int y0 = ay.lo[static_cast<std::size_t>(i)],
                    y1 = ay.hi[static_cast<std::size_t>(i)];
          const real fy = ay.frac[static_cast<std::size_t>(i)];
          for (int j = 0; j < out_w; ++j) {
            const int x0 = axx.lo[static_cast<std::size_t>(j)],
                      x1 = axx.hi[static_cast<std::size_t>(j)];
            const real fx = axx.frac[static_cast<std::size_t>(j)];
            const real gv = dst[static_cast<std::size_t>(i) * out_w + j];
            src[static_cast<std::size_t>(y0) * W + x0] += (1 - fy) * (1 - fx) * gv;
            src[static_cast<std::size_t>(y0) * W + x1] += (1 - fy) * fx * gv;
            src[static_cast<std::size_t>(y1) * W + x0] += fy * (1 - fx) * gv;
            src[static_cast<std::size_t>(y1) * W + x1] += fy * fx * gv;
          }
        }
      }
    }
  });
  return out;
}

// Per-channel spatial mean: [N,C,H,W] -> [N,C].
inline Var global_avg_pool(Var x) {
  Graph& g = *x.graph;
  const Tensor& X = g.val(x);
  require_rank(X, 4, "global_avg_pool input");
  const int N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  Tensor Y({N, C});
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const real* plane = X.data() + X.idx4(n, c, 0, 0);
      real acc = 0.0;
      for (std::size_t i = 0; i < hw; ++i) acc += plane[i];
      Y.at2(n, c) = acc / static_cast<real>(hw);
    }
  }
  const int xid = x.id;
  Var out = g.add_node("global_avg_pool", std::move(Y), {xid}, nullptr);
  const int oid = out.id;
  g.set_backward(oid, [=](Graph& gg) {
    const Tensor& dY = gg.node(oid).grad;
    Tensor& dX = gg.grad_buffer(xid);
    const real inv = 1.0 / static_cast<real>(hw);
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < C; ++c) {
        const real gv = dY.at2(n, c) * inv;
        real* plane = dX.data() + dX.idx4(n, c, 0, 0);
        for (std::size_t i = 0; i < hw; ++i) plane[i] += gv;
      }
    }
  });
  return out;
}

// Affine map y = x*W + b with x:[N,d_in], W:[d_in,d_out], b:[d_out].
inline Var dense(Var x, Var w, Var b) {
  Graph& g = *x.graph;
  const Tensor& X = g.val(x);
  const Tensor& Wt = g.val(w);
  const Tensor& B = g.val(b);
  require_rank(X, 2, "dense input");
  require_rank(Wt, 2, "dense weight");
  require_rank(B, 1, "dense bias");
  const int N = X.dim(0), din = X.dim(1), dout = Wt.dim(1);
  if (Wt.dim(0) != din)
    throw ShapeError("dense: input width " + std::to_string(din) + " does not match weight rows " +
                     std::to_string(Wt.dim(0)));
  if (B.dim(0) != dout)
    throw ShapeError("dense: bias dim " + std::to_string(B.dim(0)) +
                     " does not match weight cols " + std::to_string(dout));
  Tensor Y({N, dout});
  gemm_nn(X.data(), Wt.data(), Y.data(), N, din, dout);
  for (int n = 0; n < N; ++n) {
    real* row = Y.data() + Y.idx2(n, 0);
    for (int j = 0; j < dout; ++j) row[j] += B[static_cast<std::size_t>(j)];
  }
  const int xid = x.id, wid = w.id, bid = b.id;
  Var out = g.add_node("dense", std::move(Y), {xid, wid, bid}, nullptr);
  const int oid = out.id;
  g.set_backward(oid, [=](Graph& gg) {
    const Tensor& dY = gg.node(oid).grad;
    const Tensor& Xv = gg.val(xid);
    const Tensor& Wv = gg.val(wid);
    Tensor& dX = gg.grad_buffer(xid);
    Tensor& dW = gg.grad_buffer(wid);
    Tensor& dB = gg.grad_buffer(bid);
    gemm_nt(dY.data(), Wv.data(), dX.data(), N, dout, din);
    gemm_tn(Xv.data(), dY.data(), dW.data(), din, N, dout);
    for (int n = 0; n < N; ++n) {
      const real* row = dY.data() + dY.idx2(n, 0);
      for (int j = 0; j < dout; ++j) dB[static_cast<std::size_t>(j)] += row[j];
    }
  });
  return out;
}

enum class Act { relu, sigmoid, tanh };

inline Act parse_act(const std::string& kind) {
  if (kind == "relu") return Act::relu;
  if (kind == "sigmoid") return Act::sigmoid;
  if (kind == "tanh") return Act::tanh;
  throw ValueError("unknown activation kind '" + kind + "'");
}

inline real stable_sigmoid(real v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const real e = std::exp(v);
  return e / (1.0 + e);
}

inline Var activation(Var x, Act kind) {
  Graph& g = *x.graph;
  const Tensor& X = g.val(x);
  Tensor Y(X.shape());
  const std::size_t n = X.numel();
  switch (kind) {
    case Act::relu: {
      std::uint64_t mask_hash = 0xcbf29ce484222325ULL;
      for (std::size_t i = 0; i < n; ++i) {
        Y[i] = X[i] > 0.0 ? X[i] : 0.0;
        mask_hash = (mask_hash ^ static_cast<std::uint64_t>(X[i] > 0.0)) * 1099511628211ULL;
      }
      g.fold_pattern(mask_hash);
      break;
    }
    case Act::sigmoid:
      for (std::size_t i = 0; i < n; ++i) Y[i] = stable_sigmoid(X[i]);
      break;
    case Act::tanh:
      for (std::size_t i = 0; i < n; ++i) Y[i] = std::tanh(X[i]);
      break;
  }
  const int xid = x.id;
  Var out = g.add_node("activation", std::move(Y), {xid}, nullptr);
  const int oid = out.id;
  g.set_backward(oid, [=](Graph& gg) {
    const Tensor& dY = gg.node(oid).grad;
    const Tensor& Xv = gg.val(xid);
    const Tensor& Yv = gg.val(oid);
    Tensor& dX = gg.grad_buffer(xid);
    for (std::size_t i = 0; i < n; ++i) {
      real d = 0.0;
      switch (kind) {
        case Act::relu:
          d = Xv[i] > 0.0 ? 1.0 : 0.0;
          break;
        case Act::sigmoid:
          d = Yv[i] * (1.0 - Yv[i]);
          break;
        case Act::tanh:
          d = 1.0 - Yv[i] * Yv[i];
          break;
      }
      dX[i] += dY[i] * d;
    }
  });
  return out;
}

inline Var relu(Var x) { return activation(x, Act::relu); }
inline Var sigmoid(Var x) { return activation(x, Act::sigmoid); }
inline Var tanh_op(Var x) { return activation(x, Act::tanh); }

// Softmax over the last axis of a [l] vector or [N,l] matrix, computed with
// max-subtraction. Outputs are positive and each row sums to 1.
inline Var softmax_rows(Var x) {
  Graph& g = *x.graph;
  const Tensor& X = g.val(x);
  if (X.rank() != 1 && X.rank() != 2)
    throw ShapeError("softmax expects rank 1 or 2, got " + shape_str(X.shape()));
  const int rows = X.rank() == 2 ? X.dim(0) : 1;
  const int cols = X.rank() == 2 ? X.dim(1) : X.dim(0);
  Tensor Y(X.shape());
  for (int r = 0; r < rows; ++r) {
    const real* in = X.data() + static_cast<std::size_t>(r) * cols;
    real* out = Y.data() + static_cast<std::size_t>(r) * cols;
    real mx = in[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, in[j]);
    real sum = 0.0;
    for (int j = 0; j < cols; ++j) {
      out[j] = std::exp(in[j] - mx);
      sum += out[j];
    }
    for (int j = 0; j < cols; ++j) out[j] /= sum;
  }
  const int xid = x.id;
  Var out = g.add_node("softmax", std::move(Y), {xid}, nullptr);
  const int oid = out.id;
  g.set_backward(oid, [=](Graph& gg) {
    const Tensor& dY = gg.node(oid).grad;
    const Tensor& S = gg.val(oid);
    Tensor& dX = gg.grad_buffer(xid);
    for (int r = 0; r < rows; ++r) {
      const real* s = S.data() + static_cast<std::size_t>(r) * cols;
      const real* dy = dY.data() + static_cast<std::size_t>(r) * cols;
      real* dx = dX.data() + static_cast<std::size_t>(r) * cols;
      real dot = 0.0;
      for (int j = 0; j < cols; ++j) dot += dy[j] * s[j];
      for (int j = 0; j < cols; ++j) dx[j] += s[j] * (dy[j] - dot);
    }
  });
  return out;
}

inline Var softmax_vec(Var x) { return softmax_rows(x); }

// ---------------------------------------------------------------------------
// Elementwise and structural ops
// ---------------------------------------------------------------------------

inline Var add(Var a, Var b) {
  Graph& g = *a.graph;
  const Tensor& A = g.val(a);
  const Tensor& B = g.val(b);
  require_same_shape(A, B, "add");
  Tensor Y(A.shape());
  for (std::size_t i = 0; i < Y.numel(); ++i) Y[i] = A[i] + B[i];
  const int aid = a.id, bid = b.id;
  Var out = g.add_node("add", std::move(Y), {aid, bid}, nullptr);
  const int oid = out.id;
  g.set_backward(oid, [=](Graph& gg) {
    const Tensor& dY = gg.node(oid).grad;
    accumulate(gg.grad_buffer(aid), dY);
    accumulate(gg.grad_buffer(bid), dY);
  });
  return out;
}

inline Var mul(Var a, Var b) {
  Graph& g = *a.graph;
  const Tensor& A = g.val(a);
  const Tensor& B = g.val(b);
  require_same_shape(A, B, "mul");
  Tensor Y(A.shape());
  for (std::size_t i = 0; i < Y.numel(); ++i) Y[i] = A[i] * B[i];
  const int aid = a.id, bid = b.id;
  Var out = g.add_node("mul", std::move(Y), {aid, bid}, nullptr);
  const int oid = out.id;
  g.set_backward(oid, [=](Graph& gg) {
    const Tensor& dY = gg.node(oid).grad;
    const Tensor& Av = gg.val(aid);
    const Tensor& Bv = gg.val(bid);
    Tensor& dA = gg.grad_buffer(aid);
    Tensor& dB = gg.grad_buffer(bid);
    for (std::size_t i = 0; i < dY.numel(); ++i) {
      dA[i] += dY[i] * Bv[i];
      dB[i] += dY[i] * Av[i];
    }
  });
  return out;
}

inline Var add_scalar(Var a, real k) {
  Graph& g = *a.graph;
  const Tensor& A = g.val(a);
  Tensor Y(A.shape());
  for (std::size_t i = 0; i < Y.numel(); ++i) Y[i] = A[i] + k;
  const int aid = a.id;
  Var out = g.add_node("add_scalar", std::move(Y), {aid}, nullptr);
  const int oid = out.id;
  g.set_backward(oid, [=](Graph& gg) { accumulate(gg.grad_buffer(aid), gg.node(oid).grad); });
  return out;
}

inline Var scale(Var a, real k) {
  Graph& g = *a.graph;
  const Tensor& A = g.val(a);
  Tensor Y(A.shape());
  for (std::size_t i = 0; i < Y.numel(); ++i) Y[i] = A[i] * k;
  const int aid = a.id;
  Var out = g.add_node("scale", std::move(Y), {aid}, nullptr);
  const int oid = out.id;
  g.set_backward(oid, [=](Graph& gg) {
    const Tensor& dY = gg.node(oid).grad;
    Tensor& dA = gg.grad_buffer(aid);
    for (std::size_t i = 0; i < dY.numel(); ++i) dA[i] += dY[i] * k;
  });
  return out;
}

inline Var reshape(Var a, Shape shape) {
  Graph& g = *a.graph;
  Tensor Y = g.val(a).reshaped(shape);
  const int aid = a.id;
  const Shape orig = g.val(a).shape();
  Var out = g.add_node("reshape", std::move(Y), {aid}, nullptr);
  const int oid = out.id;
  g.set_backward(oid, [=](Graph& gg) {
    accumulate(gg.grad_buffer(aid), gg.node(oid).grad.reshaped(orig));
  });
  return out;
}

inline Var flatten(Var a) {
  const Tensor& A = a.graph->val(a);
  const int n = A.dim(0);
  return reshape(a, {n, static_cast<int>(A.numel()) / n});
}

// [N,p] ++ [N,q] -> [N,p+q]
inline Var concat_cols(Var a, Var b) {
  Graph& g = *a.graph;
  const Tensor& A = g.val(a);
  const Tensor& B = g.val(b);
  require_rank(A, 2, "concat_cols lhs");
  require_rank(B, 2, "concat_cols rhs");
  if (A.dim(0) != B.dim(0))
    throw ShapeError("concat_cols: row counts " + std::to_string(A.dim(0)) + " and " +
                     std::to_string(B.dim(0)) + " differ");
  const int N = A.dim(0), p = A.dim(1), q = B.dim(1);
  Tensor Y({N, p + q});
  for (int n = 0; n < N; ++n) {
    std::copy(A.data() + A.idx2(n, 0), A.data() + A.idx2(n, 0) + p, Y.data() + Y.idx2(n, 0));
    std::copy(B.data() + B.idx2(n, 0), B.data() + B.idx2(n, 0) + q, Y.data() + Y.idx2(n, p));
  }
  const int aid = a.id, bid = b.id;
  Var out = g.add_node("concat_cols", std::move(Y), {aid, bid}, nullptr);
  const int oid = out.id;
  g.set_backward(oid, [=](Graph& gg) {
    const Tensor& dY = gg.node(oid).grad;
    Tensor& dA = gg.grad_buffer(aid);
    Tensor& dB = gg.grad_buffer(bid);
    for (int n = 0; n < N; ++n) {
      for (int j = 0; j < p; ++j) dA.at2(n, j) += dY.at2(n, j);
      for (int j = 0; j < q; ++j) dB.at2(n, j) += dY.at2(n, p + j);
    }
  });
  return out;
}

inline Var hstack(const std::vector<Var>& vars) {
  if (vars.empty()) throw ValueError("hstack: empty input list");
  Var acc = vars[0];
  for (std::size_t i = 1; i < vars.size(); ++i) acc = concat_cols(acc, vars[i]);
  return acc;
}

// [N,m] -> [N, j1-j0]
inline Var slice_cols(Var a, int j0, int j1) {
  Graph& g = *a.graph;
  const Tensor& A = g.val(a);
  require_rank(A, 2, "slice_cols input");
  const int N = A.dim(0), m = A.dim(1);
  if (j0 < 0 || j1 > m || j0 >= j1)
    throw ShapeError("slice_cols: range [" + std::to_string(j0) + "," + std::to_string(j1) +
                     ") invalid for width " + std::to_string(m));
  Tensor Y({N, j1 - j0});
  for (int n = 0; n < N; ++n)
    std::copy(A.data() + A.idx2(n, j0), A.data() + A.idx2(n, j1), Y.data() + Y.idx2(n, 0));
  const int aid = a.id;
  Var out = g.add_node("slice_cols", std::move(Y), {aid}, nullptr);
  const int oid = out.id;
  g.set_backward(oid, [=](Graph& gg) {
    const Tensor& dY = gg.node(oid).grad;
    Tensor& dA = gg.grad_buffer(aid);
    for (int n = 0; n < N; ++n)
      for (int j = j0; j < j1; ++j) dA.at2(n, j) += dY.at2(n, j - j0);
  });
  return out;
}

// Row-wise dot product: [N,K] x [N,K] -> [N,1]
inline Var dot_rows(Var a, Var b) {
  Graph& g = *a.graph;
  const Tensor& A = g.val(a);
  const Tensor& B = g.val(b);
  require_same_shape(A, B, "dot_rows");
  require_rank(A, 2, "dot_rows input");
  const int N = A.dim(0), K = A.dim(1);
  Tensor Y({N, 1});
  for (int n = 0; n < N; ++n) {
    real acc = 0.0;
    for (int k = 0; k < K; ++k) acc += A.at2(n, k) * B.at2(n, k);
    Y.at2(n, 0) = acc;
  }
  const int aid = a.id, bid = b.id;
  Var out = g.add_node("dot_rows", std::move(Y), {aid, bid}, nullptr);
  const int oid = out.id;
  g.set_backward(oid, [=](Graph& gg) {
    const Tensor& dY = gg.node(oid).grad;
    const Tensor& Av = gg.val(aid);
    const Tensor& Bv = gg.val(bid);
    Tensor& dA = gg.grad_buffer(aid);
    Tensor& dB = gg.grad_buffer(bid);
    for (int n = 0; n < N; ++n) {
      const real gv = dY.at2(n, 0);
      for (int k = 0; k < K; ++k) {
        dA.at2(n, k) += gv * Bv.at2(n, k);
        dB.at2(n, k) += gv * Av.at2(n, k);
      }
    }
  });
  return out;
}

// Scale each row of [N,K] by the matching entry of [N,1].
inline Var mul_cols(Var a, Var s) {
  Graph& g = *a.graph;
  const Tensor& A = g.val(a);
  const Tensor& S = g.val(s);
  require_rank(A, 2, "mul_cols input");
  if (S.rank() != 2 || S.dim(1) != 1 || S.dim(0) != A.dim(0))
    throw ShapeError("mul_cols: scale shape " + shape_str(S.shape()) + " must be [" +
                     std::to_string(A.dim(0)) + ",1]");
  const int N = A.dim(0), K = A.dim(1);
  Tensor Y({N, K});
  for (int n = 0; n < N; ++n) {
    const real sv = S.at2(n, 0);
    for (int k = 0; k < K; ++k) Y.at2(n, k) = A.at2(n, k) * sv;
  }
  const int aid = a.id, sid = s.id;
  Var out = g.add_node("mul_cols", std::move(Y), {aid, sid}, nullptr);
  const int oid = out.id;
  g.set_backward(oid, [=](Graph& gg) {
    const Tensor& dY = gg.node(oid).grad;
    const Tensor& Av = gg.val(aid);
    const Tensor& Sv = gg.val(sid);
    Tensor& dA = gg.grad_buffer(aid);
    Tensor& dS = gg.grad_buffer(sid);
    for (int n = 0; n < N; ++n) {
      const real sv = Sv.at2(n, 0);
      real acc = 0.0;
      for (int k = 0; k < K; ++k) {
        dA.at2(n, k) += dY.at2(n, k) * sv;
        acc += dY.at2(n, k) * Av.at2(n, k);
      }
      dS.at2(n, 0) += acc;
    }
  });
  return out;
}

inline Var mean_all(Var a) {
  Graph& g = *a.graph;
  const Tensor& A = g.val(a);
  real acc = 0.0;
  for (std::size_t i = 0; i < A.numel(); ++i) acc += A[i];
  Tensor Y({1});
  Y[0] = acc / static_cast<real>(A.numel());
  const int aid = a.id;
  const real inv = 1.0 / static_cast<real>(A.numel());
  Var out = g.add_node("mean_all", std::move(Y), {aid}, nullptr);
  const int oid = out.id;
  g.set_backward(oid, [=](Graph& gg) {
    const real gv = gg.node(oid).grad[0] * inv;
    Tensor& dA = gg.grad_buffer(aid);
    for (std::size_t i = 0; i < dA.numel(); ++i) dA[i] += gv;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Fused losses (batch means)
// ---------------------------------------------------------------------------

// Mean softmax cross-entropy over integer class labels.
inline Var softmax_xent(Var logits, std::vector<int> labels) {
  Graph& g = *logits.graph;
  const Tensor& L = g.val(logits);
  require_rank(L, 2, "softmax_xent logits");
  const int N = L.dim(0), K = L.dim(1);
  if (static_cast<int>(labels.size()) != N)
    throw ShapeError("softmax_xent: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(N));
  for (int lbl : labels)
    if (lbl < 0 || lbl >= K)
      throw ValueError("softmax_xent: label " + std::to_string(lbl) + " outside [0," +
                       std::to_string(K) + ")");
  Tensor Y({1});
  real total = 0.0;
  for (int n = 0; n < N; ++n) {
    const real* row = L.data() + L.idx2(n, 0);
    real mx = row[0];
    for (int j = 1; j < K; ++j) mx = std::max(mx, row[j]);
    real sum = 0.0;
    for (int j = 0; j < K; ++j) sum += std::exp(row[j] - mx);
    total += std::log(sum) + mx - row[labels[static_cast<std::size_t>(n)]];
  }
  Y[0] = total / static_cast<real>(N);
  const int lid = logits.id;
  auto lbls = std::make_shared<std::vector<int>>(std::move(labels));
  Var out = g.add_node("softmax_xent", std::move(Y), {lid}, nullptr);
  const int oid = out.id;
  g.set_backward(oid, [=](Graph& gg) {
    const real gv = gg.node(oid).grad[0] / static_cast<real>(N);
    const Tensor& Lv = gg.val(lid);
    Tensor& dL = gg.grad_buffer(lid);
    for (int n = 0; n < N; ++n) {
      const real* row = Lv.data() + Lv.idx2(n, 0);
      real mx = row[0];
      for (int j = 1; j < K; ++j) mx = std::max(mx, row[j]);
      real sum = 0.0;
      for (int j = 0; j < K; ++j) sum += std::exp(row[j] - mx);
      for (int j = 0; j < K; ++j) {
        const real p = std::exp(row[j] - mx) / sum;
        dL.at2(n, j) += gv * (p - (j == (*lbls)[static_cast<std::size_t>(n)] ? 1.0 : 0.0));
      }
    }
  });
  return out;
}

// Mean squared residual against a constant target of the same shape.
inline Var mse_loss(Var pred, Tensor target) {
  Graph& g = *pred.graph;
  const Tensor& P = g.val(pred);
  require_same_shape(P, target, "mse_loss");
  const std::size_t n = P.numel();
  Tensor Y({1});
  real acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const real r = target[i] - P[i];
    acc += r * r;
  }
  Y[0] = acc / static_cast<real>(n);
  const int pid = pred.id;
  auto tgt = std::make_shared<Tensor>(std::move(target));
  Var out = g.add_node("mse_loss", std::move(Y), {pid}, nullptr);
  const int oid = out.id;
  g.set_backward(oid, [=](Graph& gg) {
    const real gv = gg.node(oid).grad[0];
    const Tensor& Pv = gg.val(pid);
    Tensor& dP = gg.grad_buffer(pid);
    for (std::size_t i = 0; i < n; ++i)
      dP[i] += gv * 2.0 * (Pv[i] - (*tgt)[i]) / static_cast<real>(n);
  });
  return out;
}

// Mean Tukey biweight of the residuals truth - pred.
inline Var tukey_loss_op(Var pred, Tensor target, real c) {
  Graph& g = *pred.graph;
  const Tensor& P = g.val(pred);
  require_same_shape(P, target, "tukey_loss");
  if (c <= 0.0) throw ValueError("tukey cutoff c must be positive");
  const std::size_t n = P.numel();
  Tensor Y({1});
  real acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += tukey_rho(target[i] - P[i], c);
  Y[0] = acc / static_cast<real>(n);
  const int pid = pred.id;
  auto tgt = std::make_shared<Tensor>(std::move(target));
  Var out = g.add_node("tukey_loss", std::move(Y), {pid}, nullptr);
  const int oid = out.id;
  g.set_backward(oid, [=](Graph& gg) {
    const real gv = gg.node(oid).grad[0];
    const Tensor& Pv = gg.val(pid);
    Tensor& dP = gg.grad_buffer(pid);
    for (std::size_t i = 0; i < n; ++i)
      dP[i] += gv * (-tukey_drho((*tgt)[i] - Pv[i], c)) / static_cast<real>(n);
  });
  return out;
}

}  // namespace affect
