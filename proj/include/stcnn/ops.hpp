// Copyright 2026 The stcnn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable tensor operations: elementwise arithmetic with numpy-style
// broadcasting, reductions, activations, matrix-vector products and the
// softmax cross-entropy loss.

#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "stcnn/tape.hpp"

namespace stcnn {

namespace detail {

// Right-aligned broadcast shape; a dimension matches if equal or one of them is 1.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
  const int r = std::max(ra, rb);
  Shape out(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    const std::int64_t da = i < ra ? a[static_cast<std::size_t>(ra - 1 - i)] : 1;
    const std::int64_t db = i < rb ? b[static_cast<std::size_t>(rb - 1 - i)] : 1;
    STCNN_CHECK(da == db || da == 1 || db == 1,
                "shapes not broadcastable: " << shape_str(a) << " vs " << shape_str(b));
    out[static_cast<std::size_t>(r - 1 - i)] = std::max(da, db);
  }
  return out;
}

// Row-major strides with 0 on broadcast (extent-1) dimensions, right-aligned
// against an output of rank `r`.
inline std::vector<std::int64_t> broadcast_strides(const Shape& s, int r) {
  std::vector<std::int64_t> st(static_cast<std::size_t>(r), 0);
  std::int64_t acc = 1;
  const int rs = static_cast<int>(s.size());
  for (int i = rs - 1; i >= 0; --i) {
    st[static_cast<std::size_t>(r - rs + i)] = (s[static_cast<std::size_t>(i)] == 1) ? 0 : acc;
    acc *= s[static_cast<std::size_t>(i)];
  }
  return st;
}

// Applies fn(out_index, a_index, b_index) over the broadcast iteration space.
template <typename Fn>
void broadcast_iterate(const Shape& out, const std::vector<std::int64_t>& sa,
                       const std::vector<std::int64_t>& sb, Fn&& fn) {
  const int r = static_cast<int>(out.size());
  std::vector<std::int64_t> ix(static_cast<std::size_t>(r), 0);
  std::int64_t ia = 0, ib = 0;
  const std::int64_t total = numel(out);
  for (std::int64_t o = 0; o < total; ++o) {
    fn(o, ia, ib);
    for (int d = r - 1; d >= 0; --d) {
      auto du = static_cast<std::size_t>(d);
      ++ix[du];
      ia += sa[du];
      ib += sb[du];
      if (ix[du] < out[du]) break;
      ia -= sa[du] * out[du];
      ib -= sb[du] * out[du];
      ix[du] = 0;
    }
  }
}

// Sums `src` (of shape `from`) into a tensor of shape `to`, where `to` is
// broadcast-compatible with `from`. Used to push gradients back through a
// broadcast; total gradient mass is preserved exactly.
template <typename T>
Tensor<T> reduce_to_shape(const Tensor<T>& src, const Shape& to) {
  if (src.shape() == to) return src;
  Tensor<T> out(to);
  const int r = src.rank();
  auto st = broadcast_strides(to, r);
  std::vector<std::int64_t> zero(static_cast<std::size_t>(r), 0);
  broadcast_iterate(src.shape(), st, zero,
                    [&](std::int64_t o, std::int64_t it, std::int64_t) { out[it] += src[o]; });
  return out;
}

}  // namespace detail

enum class EwKind { Add, Sub, Mul };

// Elementwise op with broadcasting; gradients of broadcast inputs are
// reduce-summed back to their shape.
template <typename T>
Var elementwise(Tape<T>& tape, EwKind kind, Var a, Var b) {
  const Tensor<T>& ta = tape.value(a);
  const Tensor<T>& tb = tape.value(b);
  const Shape out_shape = detail::broadcast_shape(ta.shape(), tb.shape());
  Tensor<T> out(out_shape);
  const int r = static_cast<int>(out_shape.size());
  const auto sa = detail::broadcast_strides(ta.shape(), r);
  const auto sb = detail::broadcast_strides(tb.shape(), r);
  if (ta.shape() == tb.shape()) {  // fast path, no index bookkeeping
    const std::int64_t n = out.size();
    const T* pa = ta.data();
    const T* pb = tb.data();
    T* po = out.data();
    switch (kind) {
      case EwKind::Add: for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i]; break;
      case EwKind::Sub: for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i]; break;
      case EwKind::Mul: for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i]; break;
    }
  } else {
    detail::broadcast_iterate(out_shape, sa, sb, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
      switch (kind) {
        case EwKind::Add: out[o] = ta[ia] + tb[ib]; break;
        case EwKind::Sub: out[o] = ta[ia] - tb[ib]; break;
        case EwKind::Mul: out[o] = ta[ia] * tb[ib]; break;
      }
    });
  }
  const bool rg = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.record(std::move(out), rg, [=](Tape<T>& tp, const Tensor<T>& up) {
    const Tensor<T>& va = tp.value(a);
    const Tensor<T>& vb = tp.value(b);
    auto grad_for = [&](Var target, Var other, bool negate_other_side) {
      if (!tp.requires_grad(target)) return;
      Tensor<T> g(up.shape());
      if (kind == EwKind::Mul) {
        const Shape& osh = up.shape();
        const int rr = static_cast<int>(osh.size());
        const auto sx = detail::broadcast_strides(tp.value(other).shape(), rr);
        std::vector<std::int64_t> zz(static_cast<std::size_t>(rr), 0);
        const Tensor<T>& vo = tp.value(other);
        detail::broadcast_iterate(osh, sx, zz, [&](std::int64_t o, std::int64_t io, std::int64_t) {
          g[o] = up[o] * vo[io];
        });
      } else {
        for (std::int64_t i = 0; i < up.size(); ++i)
          g[i] = negate_other_side ? -up[i] : up[i];
      }
      tp.accumulate(target, detail::reduce_to_shape(g, tp.value(target).shape()));
    };
    (void)va; (void)vb;
    grad_for(a, b, false);
    grad_for(b, a, kind == EwKind::Sub);
  });
}

template <typename T>
Var add(Tape<T>& t, Var a, Var b) { return elementwise(t, EwKind::Add, a, b); }
template <typename T>
Var sub(Tape<T>& t, Var a, Var b) { return elementwise(t, EwKind::Sub, a, b); }
template <typename T>
Var mul(Tape<T>& t, Var a, Var b) { return elementwise(t, EwKind::Mul, a, b); }

template <typename T>
Var mul_scalar(Tape<T>& t, Var a, T s) {
  Var sv = t.leaf(Tensor<T>::scalar(s), false);
  return mul(t, a, sv);
}

template <typename T>
Var add_scalar(Tape<T>& t, Var a, T s) {
  Var sv = t.leaf(Tensor<T>::scalar(s), false);
  return add(t, a, sv);
}

// View with a new shape; gradient flows straight through.
template <typename T>
Var reshape(Tape<T>& tape, Var a, Shape s) {
  Tensor<T> out = tape.value(a).reshaped(std::move(s));
  const Shape back = tape.value(a).shape();
  return tape.record(std::move(out), tape.requires_grad(a),
                     [=](Tape<T>& tp, const Tensor<T>& up) { tp.accumulate(a, up.reshaped(back)); });
}

template <typename T>
Var sum(Tape<T>& tape, Var a) {
  const Tensor<T>& ta = tape.value(a);
  Tensor<T> out = Tensor<T>::scalar(ta.sum());
  const Shape sh = ta.shape();
  return tape.record(std::move(out), tape.requires_grad(a), [=](Tape<T>& tp, const Tensor<T>& up) {
    Tensor<T> g(sh, up[0]);
    tp.accumulate(a, g);
  });
}

template <typename T>
Var mean(Tape<T>& tape, Var a) {
  const std::int64_t n = tape.value(a).size();
  return mul_scalar(tape, sum(tape, a), T(1) / static_cast<T>(n));
}

// Mean over axis 1 of a rank-N tensor (used to average logits over time).
template <typename T>
Var mean_axis1(Tape<T>& tape, Var a) {
  const Tensor<T>& x = tape.value(a);
  STCNN_CHECK(x.rank() >= 2, "mean_axis1 needs rank >= 2, got " << shape_str(x.shape()));
  const std::int64_t n0 = x.dim(0), n1 = x.dim(1);
  std::int64_t inner = 1;
  for (int i = 2; i < x.rank(); ++i) inner *= x.dim(i);
  Shape osh = x.shape();
  osh.erase(osh.begin() + 1);
  Tensor<T> out(osh);
  for (std::int64_t i = 0; i < n0; ++i)
    for (std::int64_t j = 0; j < n1; ++j)
      for (std::int64_t k = 0; k < inner; ++k)
        out[i * inner + k] += x[(i * n1 + j) * inner + k] / static_cast<T>(n1);
  return tape.record(std::move(out), tape.requires_grad(a), [=](Tape<T>& tp, const Tensor<T>& up) {
    Tensor<T> g(tp.value(a).shape());
    for (std::int64_t i = 0; i < n0; ++i)
      for (std::int64_t j = 0; j < n1; ++j)
        for (std::int64_t k = 0; k < inner; ++k)
          g[(i * n1 + j) * inner + k] = up[i * inner + k] / static_cast<T>(n1);
    tp.accumulate(a, g);
  });
}

template <typename T>
Var relu(Tape<T>& tape, Var a) {
  const Tensor<T>& x = tape.value(a);
  Tensor<T> out(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return tape.record(std::move(out), tape.requires_grad(a), [=](Tape<T>& tp, const Tensor<T>& up) {
    const Tensor<T>& xv = tp.value(a);
    Tensor<T> g(xv.shape());
    for (std::int64_t i = 0; i < xv.size(); ++i) g[i] = xv[i] > T(0) ? up[i] : T(0);
    tp.accumulate(a, g);
  });
}

template <typename T>
Var sigmoid(Tape<T>& tape, Var a) {
  const Tensor<T>& x = tape.value(a);
  Tensor<T> out(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i)
    out[i] = T(1) / (T(1) + std::exp(-static_cast<double>(x[i])));
  Tensor<T> saved = out;
  return tape.record(std::move(out), tape.requires_grad(a), [=](Tape<T>& tp, const Tensor<T>& up) {
    Tensor<T> g(saved.shape());
    for (std::int64_t i = 0; i < saved.size(); ++i) g[i] = up[i] * saved[i] * (T(1) - saved[i]);
    tp.accumulate(a, g);
  });
}

// W x + b for a square W over the channel dimension.
template <typename T>
Var matmul_vec(Tape<T>& tape, Var w, Var x, Var b) {
  const Tensor<T>& W = tape.value(w);
  const Tensor<T>& X = tape.value(x);
  const Tensor<T>& B = tape.value(b);
  STCNN_CHECK(W.rank() == 2 && W.dim(0) == W.dim(1),
              "weight must be square [n,n], got " << shape_str(W.shape()));
  const std::int64_t n = W.dim(0);
  STCNN_CHECK(X.rank() == 1 && X.dim(0) == n,
              "x " << shape_str(X.shape()) << " does not match W " << shape_str(W.shape()));
  STCNN_CHECK(B.rank() == 1 && B.dim(0) == n,
              "bias " << shape_str(B.shape()) << " does not match W " << shape_str(W.shape()));
  Tensor<T> out(Shape{n});
  for (std::int64_t i = 0; i < n; ++i) {
    T acc = B[i];
    for (std::int64_t j = 0; j < n; ++j) acc += W[i * n + j] * X[j];
    out[i] = acc;
  }
  const bool rg = tape.requires_grad(w) || tape.requires_grad(x) || tape.requires_grad(b);
  return tape.record(std::move(out), rg, [=](Tape<T>& tp, const Tensor<T>& up) {
    const Tensor<T>& Wv = tp.value(w);
    const Tensor<T>& Xv = tp.value(x);
    if (tp.requires_grad(w)) {
      Tensor<T> gw(Wv.shape());
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < n; ++j) gw[i * n + j] = up[i] * Xv[j];
      tp.accumulate(w, gw);
    }
    if (tp.requires_grad(x)) {
      Tensor<T> gx(Xv.shape());
      for (std::int64_t j = 0; j < n; ++j) {
        T acc = T(0);
        for (std::int64_t i = 0; i < n; ++i) acc += Wv[i * n + j] * up[i];
        gx[j] = acc;
      }
      tp.accumulate(x, gx);
    }
    if (tp.requires_grad(b)) tp.accumulate(b, up);
  });
}

// x[..., in] @ W[in, out] + b[out], applied over the trailing dimension.
template <typename T>
Var linear(Tape<T>& tape, Var x, Var w, Var b) {
  const Tensor<T>& X = tape.value(x);
  const Tensor<T>& W = tape.value(w);
  STCNN_CHECK(W.rank() == 2, "linear weight must be rank-2, got " << shape_str(W.shape()));
  const std::int64_t in = W.dim(0), out_c = W.dim(1);
  STCNN_CHECK(X.dim(X.rank() - 1) == in, "linear input " << shape_str(X.shape())
                                                          << " vs weight " << shape_str(W.shape()));
  const std::int64_t rows = X.size() / in;
  Shape osh = X.shape();
  osh.back() = out_c;
  Tensor<T> out(osh);
  const Tensor<T>& B = tape.value(b);
  STCNN_CHECK(B.size() == out_c, "linear bias " << shape_str(B.shape()));
  for (std::int64_t r = 0; r < rows; ++r) {
    T* o = out.data() + r * out_c;
    for (std::int64_t j = 0; j < out_c; ++j) o[j] = B[j];
    const T* xr = X.data() + r * in;
    for (std::int64_t i = 0; i < in; ++i) {
      const T xv = xr[i];
      const T* wr = W.data() + i * out_c;
      for (std::int64_t j = 0; j < out_c; ++j) o[j] += xv * wr[j];
    }
  }
  const bool rg = tape.requires_grad(x) || tape.requires_grad(w) || tape.requires_grad(b);
  return tape.record(std::move(out), rg, [=](Tape<T>& tp, const Tensor<T>& up) {
    const Tensor<T>& Xv = tp.value(x);
    const Tensor<T>& Wv = tp.value(w);
    if (tp.requires_grad(x)) {
      Tensor<T> gx(Xv.shape());
      for (std::int64_t r = 0; r < rows; ++r) {
        const T* u = up.data() + r * out_c;
        T* gxr = gx.data() + r * in;
        for (std::int64_t i = 0; i < in; ++i) {
          const T* wr = Wv.data() + i * out_c;
          T acc = T(0);
          for (std::int64_t j = 0; j < out_c; ++j) acc += wr[j] * u[j];
          gxr[i] = acc;
        }
      }
      tp.accumulate(x, gx);
    }
    if (tp.requires_grad(w)) {
      Tensor<T> gw(Wv.shape());
      for (std::int64_t r = 0; r < rows; ++r) {
        const T* u = up.data() + r * out_c;
        const T* xr = Xv.data() + r * in;
        for (std::int64_t i = 0; i < in; ++i) {
          T* gwr = gw.data() + i * out_c;
          const T xv = xr[i];
          for (std::int64_t j = 0; j < out_c; ++j) gwr[j] += xv * u[j];
        }
      }
      tp.accumulate(w, gw);
    }
    if (tp.requires_grad(b)) {
      Tensor<T> gb(Shape{out_c});
      for (std::int64_t r = 0; r < rows; ++r) {
        const T* u = up.data() + r * out_c;
        for (std::int64_t j = 0; j < out_c; ++j) gb[j] += u[j];
      }
      tp.accumulate(b, gb);
    }
  });
}

// Softmax over the trailing (class) dimension. Max-subtraction for stability.
template <typename T>
Var softmax(Tape<T>& tape, Var logits) {
  const Tensor<T>& X = tape.value(logits);
  const std::int64_t c = X.dim(X.rank() - 1);
  const std::int64_t rows = X.size() / c;
  Tensor<T> out(X.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xr = X.data() + r * c;
    T* o = out.data() + r * c;
    T mx = xr[0];
    for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, xr[j]);
    T z = T(0);
    for (std::int64_t j = 0; j < c; ++j) {
      o[j] = std::exp(static_cast<double>(xr[j] - mx));
      z += o[j];
    }
    for (std::int64_t j = 0; j < c; ++j) o[j] /= z;
  }
  Tensor<T> saved = out;
  return tape.record(std::move(out), tape.requires_grad(logits), [=](Tape<T>& tp, const Tensor<T>& up) {
    Tensor<T> g(saved.shape());
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* s = saved.data() + r * c;
      const T* u = up.data() + r * c;
      T dot = T(0);
      for (std::int64_t j = 0; j < c; ++j) dot += u[j] * s[j];
      T* gr = g.data() + r * c;
      for (std::int64_t j = 0; j < c; ++j) gr[j] = s[j] * (u[j] - dot);
    }
    tp.accumulate(logits, g);
  });
}

// Mean softmax cross-entropy over a batch of logits [N, C] with integer labels.
template <typename T>
Var cross_entropy(Tape<T>& tape, Var logits, const std::vector<int>& labels) {
  const Tensor<T>& X = tape.value(logits);
  STCNN_CHECK(X.rank() == 2, "cross_entropy expects [N,C] logits, got " << shape_str(X.shape()));
  const std::int64_t n = X.dim(0), c = X.dim(1);
  STCNN_CHECK(static_cast<std::int64_t>(labels.size()) == n,
              "labels " << labels.size() << " vs batch " << n);
  Tensor<T> probs(X.shape());
  double loss = 0;
  for (std::int64_t r = 0; r < n; ++r) {
    const T* xr = X.data() + r * c;
    T* p = probs.data() + r * c;
    T mx = xr[0];
    for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, xr[j]);
    double z = 0;
    for (std::int64_t j = 0; j < c; ++j) z += std::exp(static_cast<double>(xr[j] - mx));
    const double logz = std::log(z);
    for (std::int64_t j = 0; j < c; ++j)
      p[j] = static_cast<T>(std::exp(static_cast<double>(xr[j] - mx)) / z);
    const int y = labels[static_cast<std::size_t>(r)];
    STCNN_CHECK(y >= 0 && y < c, "label " << y << " out of range for " << c << " classes");
    loss += logz - static_cast<double>(xr[y] - mx);
  }
  loss /= static_cast<double>(n);
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(loss));
  std::vector<int> ls = labels;
  return tape.record(std::move(out), tape.requires_grad(logits), [=](Tape<T>& tp, const Tensor<T>& up) {
    Tensor<T> g(probs.shape());
    const T scale = up[0] / static_cast<T>(n);
    for (std::int64_t r = 0; r < n; ++r)
      for (std::int64_t j = 0; j < c; ++j) {
        T v = probs[r * c + j];
        if (j == ls[static_cast<std::size_t>(r)]) v -= T(1);
        g[r * c + j] = v * scale;
      }
    tp.accumulate(logits, g);
  });
}

// Flips a batch [N,T,H,W,C] or single clip [T,H,W,C] along its time axis.
template <typename T>
Tensor<T> reverse_time_tensor(const Tensor<T>& x) {
  STCNN_CHECK(x.rank() == 5 || x.rank() == 4,
              "reverse_time expects [N,T,H,W,C] or [T,H,W,C], got " << shape_str(x.shape()));
  const std::int64_t n = x.rank() == 5 ? x.dim(0) : 1;
  const std::int64_t t = x.rank() == 5 ? x.dim(1) : x.dim(0);
  const std::int64_t inner = x.size() / (n * t);
  Tensor<T> out(x.shape());
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < t; ++j)
      std::copy(x.data() + (i * t + j) * inner, x.data() + (i * t + j + 1) * inner,
                out.data() + (i * t + (t - 1 - j)) * inner);
  return out;
}

template <typename T>
Var reverse_time(Tape<T>& tape, Var a) {
  Tensor<T> out = reverse_time_tensor(tape.value(a));
  return tape.record(std::move(out), tape.requires_grad(a), [=](Tape<T>& tp, const Tensor<T>& up) {
    tp.accumulate(a, reverse_time_tensor(up));
  });
}

// Concatenates rank-5 tensors along the channel (trailing) axis, in the order
// given. Backward slices the upstream gradient back out.
template <typename T>
Var concat_channels(Tape<T>& tape, const std::vector<Var>& parts) {
  STCNN_CHECK(!parts.empty(), "concat of zero tensors");
  const Tensor<T>& first = tape.value(parts[0]);
  Shape osh = first.shape();
  std::int64_t ctotal = 0;
  std::vector<std::int64_t> widths;
  for (Var p : parts) {
    const Tensor<T>& v = tape.value(p);
    STCNN_CHECK(v.rank() == first.rank(), "concat rank mismatch");
    for (int d = 0; d + 1 < v.rank(); ++d)
      STCNN_CHECK(v.dim(d) == first.dim(d), "concat extent mismatch at dim " << d << ": "
                                                << shape_str(v.shape()) << " vs " << shape_str(first.shape()));
    widths.push_back(v.dim(v.rank() - 1));
    ctotal += widths.back();
  }
  osh.back() = ctotal;
  const std::int64_t rows = numel(osh) / ctotal;
  Tensor<T> out(osh);
  std::int64_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor<T>& v = tape.value(parts[k]);
    const std::int64_t w = widths[k];
    for (std::int64_t r = 0; r < rows; ++r)
      std::copy(v.data() + r * w, v.data() + (r + 1) * w, out.data() + r * ctotal + off);
    off += w;
  }
  bool rg = false;
  for (Var p : parts) rg = rg || tape.requires_grad(p);
  std::vector<Var> ps = parts;
  std::vector<std::int64_t> ws = widths;
  return tape.record(std::move(out), rg, [=](Tape<T>& tp, const Tensor<T>& up) {
    std::int64_t o = 0;
    for (std::size_t k = 0; k < ps.size(); ++k) {
      const std::int64_t w = ws[k];
      if (tp.requires_grad(ps[k])) {
        Tensor<T> g(tp.value(ps[k]).shape());
        for (std::int64_t r = 0; r < rows; ++r)
          std::copy(up.data() + r * ctotal + o, up.data() + r * ctotal + o + w, g.data() + r * w);
        tp.accumulate(ps[k], g);
      }
      o += w;
    }
  });
}

// Inverted dropout; identity when `train` is false or rate is 0.
template <typename T>
Var dropout(Tape<T>& tape, Var a, double rate, Rng& rng, bool train) {
  if (!train || rate <= 0.0) return a;
  const Tensor<T>& x = tape.value(a);
  Tensor<T> mask(x.shape());
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (std::int64_t i = 0; i < x.size(); ++i)
    mask[i] = rng.uniform() >= rate ? keep_scale : T(0);
  Tensor<T> out(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) out[i] = x[i] * mask[i];
  return tape.record(std::move(out), tape.requires_grad(a), [=](Tape<T>& tp, const Tensor<T>& up) {
    Tensor<T> g(up.shape());
    for (std::int64_t i = 0; i < up.size(); ++i) g[i] = up[i] * mask[i];
    tp.accumulate(a, g);
  });
}

}  // namespace stcnn
