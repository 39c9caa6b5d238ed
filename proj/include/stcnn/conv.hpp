// Copyright 2026 The stcnn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Spatiotemporal primitives over channels-last [N,T,H,W,C] tensors:
// 3D convolution (with 2D-in-3D and temporal-only special cases), temporal
// separable convolution, max/average pooling and batch normalization.
//
// Convolution weights are [kt,kh,kw,c_in,c_out]. SAME padding produces
// ceil(in/stride) extents; when the total pad is odd the extra goes on the
// trailing side. The temporal axis can pad with zeros or with edge-frame
// replication; the backbone uses replication so that a temporally constant
// clip stays constant through every 3D convolution.

#pragma once

#include <array>
#include <cstring>
#include <limits>

#include "stcnn/ops.hpp"

namespace stcnn {

enum class Padding { Same, Valid };
enum class TemporalPad { Zero, Replicate };

struct ConvOpt {
  std::array<std::int64_t, 3> stride{1, 1, 1};  // (st, sh, sw)
  Padding padding = Padding::Same;
  TemporalPad tpad = TemporalPad::Zero;
};

inline std::int64_t conv_out_extent(std::int64_t in, std::int64_t k, std::int64_t s, Padding p) {
  STCNN_CHECK(in > 0 && k >= 1 && s >= 1, "bad conv geometry in=" << in << " k=" << k << " s=" << s);
  if (p == Padding::Same) return (in + s - 1) / s;  // ceil(in/s)
  return (in - k) / s + 1;                          // may be <= 0; caller checks
}

inline std::int64_t pad_front(std::int64_t in, std::int64_t k, std::int64_t s, Padding p) {
  if (p == Padding::Valid) return 0;
  const std::int64_t out = conv_out_extent(in, k, s, p);
  const std::int64_t total = std::max<std::int64_t>((out - 1) * s + k - in, 0);
  return total / 2;  // trailing side gets the odd element
}

// Descriptive bundle for a convolution's learnable state, mirroring how the
// layer tables talk about filters. Bias may be empty (BatchNorm supplies the
// shift in the backbone).
template <typename T>
struct FilterBank {
  Tensor<T> weights;  // [kt,kh,kw,c_in,c_out]
  Tensor<T> bias;     // [c_out] or undefined
  ConvOpt opt;
};

namespace detail {

struct ConvGeom {
  std::int64_t n, t, h, w, ci;
  std::int64_t kt, kh, kw, co;
  std::int64_t ot, oh, ow;
  std::int64_t pt, ph, pw;
  std::array<std::int64_t, 3> stride;
  TemporalPad tpad;
};

template <typename T>
ConvGeom conv_geometry(const Tensor<T>& x, const Tensor<T>& w, const ConvOpt& opt) {
  STCNN_CHECK(x.rank() == 5, "conv3d input must be [N,T,H,W,C], got " << shape_str(x.shape()));
  STCNN_CHECK(w.rank() == 5, "conv3d weights must be [kt,kh,kw,ci,co], got " << shape_str(w.shape()));
  ConvGeom g;
  g.n = x.dim(0); g.t = x.dim(1); g.h = x.dim(2); g.w = x.dim(3); g.ci = x.dim(4);
  g.kt = w.dim(0); g.kh = w.dim(1); g.kw = w.dim(2); g.co = w.dim(4);
  STCNN_CHECK(w.dim(3) == g.ci, "channel mismatch: input has " << g.ci << " channels, filter expects "
                                                               << w.dim(3));
  g.stride = opt.stride;
  g.tpad = opt.tpad;
  g.ot = conv_out_extent(g.t, g.kt, opt.stride[0], opt.padding);
  g.oh = conv_out_extent(g.h, g.kh, opt.stride[1], opt.padding);
  g.ow = conv_out_extent(g.w, g.kw, opt.stride[2], opt.padding);
  STCNN_CHECK(g.ot > 0 && g.oh > 0 && g.ow > 0,
              "zero-size output for input " << shape_str(x.shape()) << " with kernel "
                                            << shape_str(w.shape()));
  g.pt = pad_front(g.t, g.kt, opt.stride[0], opt.padding);
  g.ph = pad_front(g.h, g.kh, opt.stride[1], opt.padding);
  g.pw = pad_front(g.w, g.kw, opt.stride[2], opt.padding);
  return g;
}

// Shared tap walk for the three conv passes. Mode: 0 = forward accumulate
// into out, 1 = grad wrt x, 2 = grad wrt w.
template <typename T, int Mode>
void conv3d_pass(const ConvGeom& g, const T* x, const T* w, const T* up, T* acc) {
  const std::int64_t x_row = g.ci;               // stride over wi
  const std::int64_t x_hrow = g.w * g.ci;        // stride over hi
  const std::int64_t x_trow = g.h * g.w * g.ci;  // stride over ti
  const std::int64_t o_row = g.co;
  for (std::int64_t n = 0; n < g.n; ++n) {
    const T* xn = x + n * g.t * x_trow;
    for (std::int64_t to = 0; to < g.ot; ++to) {
      for (std::int64_t ho = 0; ho < g.oh; ++ho) {
        for (std::int64_t wo = 0; wo < g.ow; ++wo) {
          const std::int64_t opos = ((n * g.ot + to) * g.oh + ho) * g.ow + wo;
          for (std::int64_t kt = 0; kt < g.kt; ++kt) {
            std::int64_t ti = to * g.stride[0] + kt - g.pt;
            if (ti < 0 || ti >= g.t) {
              if (g.tpad == TemporalPad::Zero) continue;
              ti = ti < 0 ? 0 : g.t - 1;  // replicate edge frame
            }
            for (std::int64_t kh = 0; kh < g.kh; ++kh) {
              const std::int64_t hi = ho * g.stride[1] + kh - g.ph;
              if (hi < 0 || hi >= g.h) continue;
              for (std::int64_t kw = 0; kw < g.kw; ++kw) {
                const std::int64_t wi = wo * g.stride[2] + kw - g.pw;
                if (wi < 0 || wi >= g.w) continue;
                const std::int64_t xoff = ti * x_trow + hi * x_hrow + wi * x_row;
                const std::int64_t woff = (((kt * g.kh + kh) * g.kw + kw) * g.ci) * g.co;
                if constexpr (Mode == 0) {
                  const T* xp = xn + xoff;
                  T* op = acc + opos * o_row;
                  for (std::int64_t ci = 0; ci < g.ci; ++ci) {
                    const T xv = xp[ci];
                    const T* wp = w + woff + ci * g.co;
                    for (std::int64_t co = 0; co < g.co; ++co) op[co] += xv * wp[co];
                  }
                } else if constexpr (Mode == 1) {
                  const T* u = up + opos * o_row;
                  T* gx = acc + n * g.t * x_trow + xoff;
                  for (std::int64_t ci = 0; ci < g.ci; ++ci) {
                    const T* wp = w + woff + ci * g.co;
                    T s = T(0);
                    for (std::int64_t co = 0; co < g.co; ++co) s += wp[co] * u[co];
                    gx[ci] += s;
                  }
                } else {
                  const T* u = up + opos * o_row;
                  const T* xp = xn + xoff;
                  for (std::int64_t ci = 0; ci < g.ci; ++ci) {
                    const T xv = xp[ci];
                    T* gw = acc + woff + ci * g.co;
                    for (std::int64_t co = 0; co < g.co; ++co) gw[co] += xv * u[co];
                  }
                }
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                         const ConvOpt& opt) {
  const auto g = detail::conv_geometry(x, w, opt);
  Tensor<T> out(Shape{g.n, g.ot, g.oh, g.ow, g.co});
  if (bias && bias->defined()) {
    STCNN_CHECK(bias->size() == g.co, "bias length " << bias->size() << " vs c_out " << g.co);
    const std::int64_t rows = out.size() / g.co;
    for (std::int64_t r = 0; r < rows; ++r)
      std::memcpy(out.data() + r * g.co, bias->data(), sizeof(T) * static_cast<std::size_t>(g.co));
  }
  detail::conv3d_pass<T, 0>(g, x.data(), w.data(), nullptr, out.data());
  return out;
}

// Tape op. `bias` may be an invalid Var for bias-free convolutions.
template <typename T>
Var conv3d(Tape<T>& tape, Var x, Var w, Var bias, const ConvOpt& opt) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& wv = tape.value(w);
  const Tensor<T>* bp = bias.valid() ? &tape.value(bias) : nullptr;
  Tensor<T> out = conv3d_forward(xv, wv, bp, opt);
  bool rg = tape.requires_grad(x) || tape.requires_grad(w) ||
            (bias.valid() && tape.requires_grad(bias));
  return tape.record(std::move(out), rg, [=](Tape<T>& tp, const Tensor<T>& up) {
    const auto g = detail::conv_geometry(tp.value(x), tp.value(w), opt);
    if (tp.requires_grad(x)) {
      Tensor<T> gx(tp.value(x).shape());
      detail::conv3d_pass<T, 1>(g, nullptr, tp.value(w).data(), up.data(), gx.data());
      tp.accumulate(x, gx);
    }
    if (tp.requires_grad(w)) {
      Tensor<T> gw(tp.value(w).shape());
      detail::conv3d_pass<T, 2>(g, tp.value(x).data(), nullptr, up.data(), gw.data());
      tp.accumulate(w, gw);
    }
    if (bias.valid() && tp.requires_grad(bias)) {
      Tensor<T> gb(Shape{g.co});
      const std::int64_t rows = up.size() / g.co;
      for (std::int64_t r = 0; r < rows; ++r) {
        const T* u = up.data() + r * g.co;
        for (std::int64_t c = 0; c < g.co; ++c) gb[c] += u[c];
      }
      tp.accumulate(bias, gb);
    }
  });
}

// Spatial [1,k,k] convolution followed by temporal [kt,1,1] convolution.
// Exactly the composition of the two conv3d calls; the full stride rides on
// the spatial half (a [1,k,k] kernel strided in time just subsamples frames),
// the temporal half is dense.
template <typename T>
Var sepconv3d(Tape<T>& tape, Var x, Var w_spatial, Var b_spatial, Var w_temporal, Var b_temporal,
              const ConvOpt& opt) {
  const Tensor<T>& ws = tape.value(w_spatial);
  const Tensor<T>& wt = tape.value(w_temporal);
  STCNN_CHECK(ws.dim(0) == 1, "spatial filter must be [1,k,k], got " << shape_str(ws.shape()));
  STCNN_CHECK(wt.dim(1) == 1 && wt.dim(2) == 1,
              "temporal filter must be [kt,1,1], got " << shape_str(wt.shape()));
  STCNN_CHECK(ws.dim(4) == wt.dim(3), "separable pair mismatch: spatial c_out " << ws.dim(4)
                                          << " vs temporal c_in " << wt.dim(3));
  ConvOpt temporal_opt = opt;
  temporal_opt.stride = {1, 1, 1};
  Var mid = conv3d(tape, x, w_spatial, b_spatial, opt);
  return conv3d(tape, mid, w_temporal, b_temporal, temporal_opt);
}

struct PoolOpt {
  std::array<std::int64_t, 3> window{1, 1, 1};
  std::array<std::int64_t, 3> stride{1, 1, 1};
  Padding padding = Padding::Same;
};

// Windowed maximum. Gradient routes to the argmax element; ties go to the
// first element in scan order.
template <typename T>
Var maxpool3d(Tape<T>& tape, Var x, const PoolOpt& opt) {
  const Tensor<T>& xv = tape.value(x);
  STCNN_CHECK(xv.rank() == 5, "maxpool3d input must be [N,T,H,W,C]");
  for (int i = 0; i < 3; ++i)
    STCNN_CHECK(opt.window[static_cast<std::size_t>(i)] >= 1 && opt.stride[static_cast<std::size_t>(i)] >= 1,
                "pool window/stride must be positive");
  const std::int64_t n = xv.dim(0), t = xv.dim(1), h = xv.dim(2), w = xv.dim(3), c = xv.dim(4);
  const std::int64_t ot = conv_out_extent(t, opt.window[0], opt.stride[0], opt.padding);
  const std::int64_t oh = conv_out_extent(h, opt.window[1], opt.stride[1], opt.padding);
  const std::int64_t ow = conv_out_extent(w, opt.window[2], opt.stride[2], opt.padding);
  STCNN_CHECK(ot > 0 && oh > 0 && ow > 0, "pool window " << opt.window[0] << "x" << opt.window[1]
                                              << "x" << opt.window[2] << " larger than input "
                                              << shape_str(xv.shape()));
  const std::int64_t pt = pad_front(t, opt.window[0], opt.stride[0], opt.padding);
  const std::int64_t ph = pad_front(h, opt.window[1], opt.stride[1], opt.padding);
  const std::int64_t pw = pad_front(w, opt.window[2], opt.stride[2], opt.padding);
  Tensor<T> out(Shape{n, ot, oh, ow, c});
  auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(out.size()));
  const std::int64_t xh = w * c, xt = h * w * c, xn = t * h * w * c;
  std::int64_t opos = 0;
  for (std::int64_t in = 0; in < n; ++in)
    for (std::int64_t to = 0; to < ot; ++to)
      for (std::int64_t ho = 0; ho < oh; ++ho)
        for (std::int64_t wo = 0; wo < ow; ++wo, opos += c)
          for (std::int64_t ic = 0; ic < c; ++ic) {
            T best = -std::numeric_limits<T>::infinity();
            std::int64_t best_ix = -1;
            for (std::int64_t kt = 0; kt < opt.window[0]; ++kt) {
              const std::int64_t ti = to * opt.stride[0] + kt - pt;
              if (ti < 0 || ti >= t) continue;
              for (std::int64_t kh = 0; kh < opt.window[1]; ++kh) {
                const std::int64_t hi = ho * opt.stride[1] + kh - ph;
                if (hi < 0 || hi >= h) continue;
                for (std::int64_t kw = 0; kw < opt.window[2]; ++kw) {
                  const std::int64_t wi = wo * opt.stride[2] + kw - pw;
                  if (wi < 0 || wi >= w) continue;
                  const std::int64_t ix = in * xn + ti * xt + hi * xh + wi * c + ic;
                  if (xv[ix] > best) { best = xv[ix]; best_ix = ix; }
                }
              }
            }
            out[opos + ic] = best;
            (*argmax)[static_cast<std::size_t>(opos + ic)] = best_ix;
          }
  return tape.record(std::move(out), tape.requires_grad(x), [=](Tape<T>& tp, const Tensor<T>& up) {
    Tensor<T> gx(tp.value(x).shape());
    for (std::int64_t i = 0; i < up.size(); ++i) gx[(*argmax)[static_cast<std::size_t>(i)]] += up[i];
    tp.accumulate(x, gx);
  });
}

// Mean over (T,H,W): [N,T,H,W,C] -> [N,C].
template <typename T>
Var avgpool_spacetime(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  STCNN_CHECK(xv.rank() == 5, "avgpool_spacetime input must be [N,T,H,W,C]");
  const std::int64_t n = xv.dim(0), c = xv.dim(4);
  const std::int64_t m = xv.dim(1) * xv.dim(2) * xv.dim(3);
  Tensor<T> out(Shape{n, c});
  for (std::int64_t in = 0; in < n; ++in) {
    const T* base = xv.data() + in * m * c;
    T* o = out.data() + in * c;
    for (std::int64_t r = 0; r < m; ++r)
      for (std::int64_t ic = 0; ic < c; ++ic) o[ic] += base[r * c + ic];
    for (std::int64_t ic = 0; ic < c; ++ic) o[ic] /= static_cast<T>(m);
  }
  return tape.record(std::move(out), tape.requires_grad(x), [=](Tape<T>& tp, const Tensor<T>& up) {
    Tensor<T> gx(tp.value(x).shape());
    for (std::int64_t in = 0; in < n; ++in)
      for (std::int64_t r = 0; r < m; ++r)
        for (std::int64_t ic = 0; ic < c; ++ic)
          gx[(in * m + r) * c + ic] = up[in * c + ic] / static_cast<T>(m);
    tp.accumulate(x, gx);
  });
}

// Mean over (H,W) only: [N,T,H,W,C] -> [N,T,C]. Keeps time for the head's
// per-frame logits.
template <typename T>
Var avgpool_spatial(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  STCNN_CHECK(xv.rank() == 5, "avgpool_spatial input must be [N,T,H,W,C]");
  const std::int64_t n = xv.dim(0), t = xv.dim(1), c = xv.dim(4);
  const std::int64_t m = xv.dim(2) * xv.dim(3);
  Tensor<T> out(Shape{n, t, c});
  for (std::int64_t nt = 0; nt < n * t; ++nt) {
    const T* base = xv.data() + nt * m * c;
    T* o = out.data() + nt * c;
    for (std::int64_t r = 0; r < m; ++r)
      for (std::int64_t ic = 0; ic < c; ++ic) o[ic] += base[r * c + ic];
    for (std::int64_t ic = 0; ic < c; ++ic) o[ic] /= static_cast<T>(m);
  }
  return tape.record(std::move(out), tape.requires_grad(x), [=](Tape<T>& tp, const Tensor<T>& up) {
    Tensor<T> gx(tp.value(x).shape());
    for (std::int64_t nt = 0; nt < n * t; ++nt)
      for (std::int64_t r = 0; r < m; ++r)
        for (std::int64_t ic = 0; ic < c; ++ic)
          gx[(nt * m + r) * c + ic] = up[nt * c + ic] / static_cast<T>(m);
    tp.accumulate(x, gx);
  });
}

// Batch normalization over (N,T,H,W) per channel. In train mode the batch
// statistics are returned through `batch_mean/batch_var` so the caller can
// fold them into the running stats; the op itself never mutates state.
// `gamma` may be an invalid Var (scale fixed to 1).
template <typename T>
Var batchnorm(Tape<T>& tape, Var x, Var gamma, Var beta, const Tensor<T>& running_mean,
              const Tensor<T>& running_var, bool train, T eps, Tensor<T>* batch_mean = nullptr,
              Tensor<T>* batch_var = nullptr) {
  const Tensor<T>& xv = tape.value(x);
  STCNN_CHECK(xv.rank() == 5, "batchnorm input must be [N,T,H,W,C]");
  const std::int64_t c = xv.dim(4);
  const std::int64_t rows = xv.size() / c;
  const Tensor<T>& bv = tape.value(beta);
  STCNN_CHECK(bv.size() == c, "beta length " << bv.size() << " vs channels " << c);
  const Tensor<T>* gv = gamma.valid() ? &tape.value(gamma) : nullptr;
  if (gv) STCNN_CHECK(gv->size() == c, "gamma length " << gv->size() << " vs channels " << c);

  Tensor<T> mu(Shape{c}), var(Shape{c});
  if (train) {
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* row = xv.data() + r * c;
      for (std::int64_t ic = 0; ic < c; ++ic) mu[ic] += row[ic];
    }
    for (std::int64_t ic = 0; ic < c; ++ic) mu[ic] /= static_cast<T>(rows);
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* row = xv.data() + r * c;
      for (std::int64_t ic = 0; ic < c; ++ic) {
        const T d = row[ic] - mu[ic];
        var[ic] += d * d;
      }
    }
    for (std::int64_t ic = 0; ic < c; ++ic) var[ic] /= static_cast<T>(rows);
    if (batch_mean) *batch_mean = mu.clone();
    if (batch_var) *batch_var = var.clone();
  } else {
    STCNN_CHECK(running_mean.size() == c && running_var.size() == c,
                "running stats do not match channels " << c);
    mu = running_mean.clone();
    var = running_var.clone();
  }

  Tensor<T> inv_std(Shape{c});
  for (std::int64_t ic = 0; ic < c; ++ic)
    inv_std[ic] = T(1) / std::sqrt(static_cast<double>(var[ic]) + static_cast<double>(eps));

  Tensor<T> out(xv.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * c;
    T* o = out.data() + r * c;
    for (std::int64_t ic = 0; ic < c; ++ic) {
      const T xh = (row[ic] - mu[ic]) * inv_std[ic];
      o[ic] = (gv ? (*gv)[ic] : T(1)) * xh + bv[ic];
    }
  }

  const bool rg = tape.requires_grad(x) || tape.requires_grad(beta) ||
                  (gamma.valid() && tape.requires_grad(gamma));
  return tape.record(std::move(out), rg, [=](Tape<T>& tp, const Tensor<T>& up) {
    const Tensor<T>& xval = tp.value(x);
    const Tensor<T>* gval = gamma.valid() ? &tp.value(gamma) : nullptr;
    // dbeta and dgamma are plain per-channel reductions.
    if (tp.requires_grad(beta)) {
      Tensor<T> gb(Shape{c});
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t ic = 0; ic < c; ++ic) gb[ic] += up[r * c + ic];
      tp.accumulate(beta, gb);
    }
    if (gamma.valid() && tp.requires_grad(gamma)) {
      Tensor<T> gg(Shape{c});
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t ic = 0; ic < c; ++ic)
          gg[ic] += up[r * c + ic] * (xval[r * c + ic] - mu[ic]) * inv_std[ic];
      tp.accumulate(gamma, gg);
    }
    if (!tp.requires_grad(x)) return;
    Tensor<T> gx(xval.shape());
    if (!train) {
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t ic = 0; ic < c; ++ic)
          gx[r * c + ic] = up[r * c + ic] * (gval ? (*gval)[ic] : T(1)) * inv_std[ic];
    } else {
      // Standard train-mode backward through the batch statistics.
      Tensor<T> sum_dy(Shape{c}), sum_dy_xh(Shape{c});
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t ic = 0; ic < c; ++ic) {
          const T dy = up[r * c + ic] * (gval ? (*gval)[ic] : T(1));
          sum_dy[ic] += dy;
          sum_dy_xh[ic] += dy * (xval[r * c + ic] - mu[ic]) * inv_std[ic];
        }
      const T inv_rows = T(1) / static_cast<T>(rows);
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t ic = 0; ic < c; ++ic) {
          const T dy = up[r * c + ic] * (gval ? (*gval)[ic] : T(1));
          const T xh = (xval[r * c + ic] - mu[ic]) * inv_std[ic];
          gx[r * c + ic] =
              inv_std[ic] * (dy - sum_dy[ic] * inv_rows - xh * sum_dy_xh[ic] * inv_rows);
        }
    }
    tp.accumulate(x, gx);
  });
}

}  // namespace stcnn
