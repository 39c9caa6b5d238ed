// Copyright 2026 The stcnn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Composite units: the four-branch Inception block in its 2D, 3D and
// temporally separable forms, and the spatio-temporal feature gate
// y = sigmoid(W pool(x) + b) * x with mean pooling over space and time.

#pragma once

#include <optional>
#include <vector>

#include "stcnn/conv.hpp"

namespace stcnn {

enum class ConvKind { Conv2D, Conv3D, Sep };

inline const char* to_string(ConvKind k) {
  switch (k) {
    case ConvKind::Conv2D: return "2d";
    case ConvKind::Conv3D: return "3d";
    case ConvKind::Sep: return "sep";
  }
  return "?";
}

// Per-branch channel widths of an Inception block. Output channels are
// b0 + b1_out + b2_out + b3_proj; every branch preserves (T,H,W).
struct InceptionConfig {
  std::int64_t b0 = 0;
  std::int64_t b1_reduce = 0, b1_out = 0;
  std::int64_t b2_reduce = 0, b2_out = 0;
  std::int64_t b3_proj = 0;
  std::int64_t spatial_k = 3;
  std::int64_t temporal_k = 3;  // used by the 3D and Sep kinds

  std::int64_t out_channels() const { return b0 + b1_out + b2_out + b3_proj; }
};

// Convolution followed by optional BatchNorm and ReLU. Running stats are
// shallow handles into the parameter store; the op never mutates them.
template <typename T>
struct ConvUnit {
  Var w;          // invalid => unit absent
  Var bias;       // used only when BN is absent
  bool has_bn = false;
  Var gamma;      // invalid => scale fixed at 1
  Var beta;
  Tensor<T> running_mean, running_var;
  bool relu = true;

  bool present() const { return w.valid(); }
};

// Pending running-stat update produced by one train-mode BN evaluation.
template <typename T>
struct BnUpdate {
  Tensor<T> running_mean, running_var;  // shared buffers to update
  Tensor<T> batch_mean, batch_var;
};

template <typename T>
using BnSink = std::vector<BnUpdate<T>>;

template <typename T>
struct ForwardCtx {
  bool train = false;           // BN uses batch statistics; dropout active
  T bn_eps = T(1e-3);
  BnSink<T>* bn_sink = nullptr;
  Rng* rng = nullptr;           // dropout stream
};

template <typename T>
Var apply_conv_unit(Tape<T>& tape, Var x, const ConvUnit<T>& u, const ConvOpt& opt,
                    const ForwardCtx<T>& ctx) {
  Var y = conv3d(tape, x, u.w, u.has_bn ? Var{} : u.bias, opt);
  if (u.has_bn) {
    Tensor<T> bmean, bvar;
    y = batchnorm(tape, y, u.gamma, u.beta, u.running_mean, u.running_var, ctx.train, ctx.bn_eps,
                  ctx.train ? &bmean : nullptr, ctx.train ? &bvar : nullptr);
    if (ctx.train && ctx.bn_sink)
      ctx.bn_sink->push_back(BnUpdate<T>{u.running_mean, u.running_var, bmean, bvar});
  }
  if (u.relu) y = relu(tape, y);
  return y;
}

// Channel gate computed from the space-time mean of the input.
struct GateParams {
  Var w;  // [n,n] over channels
  Var b;  // [n]
  bool present() const { return w.valid(); }
};

template <typename T>
Var feature_gate(Tape<T>& tape, Var x, const GateParams& p) {
  const Shape xsh = tape.value(x).shape();
  STCNN_CHECK(xsh.size() == 5, "feature_gate input must be [N,T,H,W,C]");
  const std::int64_t c = xsh[4];
  const Shape wsh = tape.value(p.w).shape();
  STCNN_CHECK(wsh.size() == 2 && wsh[0] == c && wsh[1] == c,
              "gate weight " << shape_str(wsh) << " vs channels " << c);
  Var pooled = avgpool_spacetime(tape, x);           // [N,C]
  Var z = linear(tape, pooled, p.w, p.b);            // [N,C]
  Var s = sigmoid(tape, z);
  Var s5 = reshape(tape, s, Shape{xsh[0], 1, 1, 1, c});
  return mul(tape, x, s5);                           // gate replicated over (T,H,W)
}

// Parameters of one Inception block. Which units are present depends on the
// block kind: temporal units and gates exist only for Sep blocks.
template <typename T>
struct InceptionBlockParams {
  ConvUnit<T> b0, b0_temporal;
  ConvUnit<T> b1_reduce, b1_conv, b1_temporal;
  ConvUnit<T> b2_reduce, b2_conv, b2_temporal;
  ConvUnit<T> b3_proj, b3_temporal;
  GateParams b0_gate, b1_gate, b2_gate, b3_gate;
};

namespace detail {

template <typename T>
Var finish_branch(Tape<T>& tape, Var y, const ConvUnit<T>& temporal, const GateParams& gate,
                  std::int64_t temporal_k, const ForwardCtx<T>& ctx, const char* branch) {
  if (temporal.present()) {
    const Shape wsh = tape.value(temporal.w).shape();
    STCNN_CHECK(wsh[0] == temporal_k && wsh[1] == 1 && wsh[2] == 1,
                "branch " << branch << " temporal filter must be [" << temporal_k << ",1,1], got "
                          << shape_str(wsh));
    ConvOpt topt;
    topt.tpad = TemporalPad::Replicate;
    y = apply_conv_unit(tape, y, temporal, topt, ctx);
    if (gate.present()) y = feature_gate(tape, y, gate);
  }
  return y;
}

}  // namespace detail

// Four-branch Inception block. Branch outputs are concatenated along
// channels in the fixed order (b0, b1, b2, b3); all branches keep (T,H,W).
// Sep kind factors the kxk convolutions into spatial-then-temporal pairs and
// adds a temporal convolution to the 1x1 and pool branches as well.
template <typename T>
Var inception_block(Tape<T>& tape, Var x, const InceptionConfig& cfg,
                    const InceptionBlockParams<T>& p, ConvKind kind, const ForwardCtx<T>& ctx) {
  const Shape xsh = tape.value(x).shape();
  STCNN_CHECK(xsh.size() == 5, "inception_block input must be [N,T,H,W,C]");
  const std::int64_t in_channels = xsh[4];
  const std::int64_t k = cfg.spatial_k;
  const std::int64_t kt = kind == ConvKind::Conv3D || kind == ConvKind::Sep ? cfg.temporal_k : 1;
  ConvOpt pointwise;  // 1x1x1, stride 1, SAME
  ConvOpt spatial_conv;
  spatial_conv.tpad = TemporalPad::Replicate;

  auto check_channels = [&](const ConvUnit<T>& u, std::int64_t want_in, const char* branch) {
    const std::int64_t got = tape.value(u.w).dim(3);
    STCNN_CHECK(got == want_in, "branch " << branch << " expects " << got
                                          << " input channels, block is wired for " << want_in);
  };

  // Branch 0: pointwise.
  check_channels(p.b0, in_channels, "b0");
  Var b0 = apply_conv_unit(tape, x, p.b0, pointwise, ctx);
  b0 = detail::finish_branch(tape, b0, p.b0_temporal, p.b0_gate, cfg.temporal_k, ctx, "b0");

  // Branches 1 and 2: reduce then kxk (spatial-then-temporal when separable).
  auto conv_branch = [&](const ConvUnit<T>& reduce, const ConvUnit<T>& conv,
                         const ConvUnit<T>& temporal, const GateParams& gate, const char* name) {
    check_channels(reduce, in_channels, name);
    Var y = apply_conv_unit(tape, x, reduce, pointwise, ctx);
    const Shape wsh = tape.value(conv.w).shape();
    if (kind == ConvKind::Sep) {
      STCNN_CHECK(wsh[0] == 1 && wsh[1] == k && wsh[2] == k,
                  "branch " << name << " spatial filter must be [1," << k << "," << k << "], got "
                            << shape_str(wsh));
      y = apply_conv_unit(tape, y, conv, spatial_conv, ctx);
      y = detail::finish_branch(tape, y, temporal, gate, cfg.temporal_k, ctx, name);
    } else {
      STCNN_CHECK(wsh[0] == kt && wsh[1] == k && wsh[2] == k,
                  "branch " << name << " filter must be [" << kt << "," << k << "," << k << "], got "
                            << shape_str(wsh));
      y = apply_conv_unit(tape, y, conv, spatial_conv, ctx);
    }
    return y;
  };
  Var b1 = conv_branch(p.b1_reduce, p.b1_conv, p.b1_temporal, p.b1_gate, "b1");
  Var b2 = conv_branch(p.b2_reduce, p.b2_conv, p.b2_temporal, p.b2_gate, "b2");

  // Branch 3: max pool (temporal window only when the block is 3D/Sep),
  // then pointwise projection.
  PoolOpt pool;
  pool.window = {kind == ConvKind::Conv2D ? 1 : cfg.temporal_k, 3, 3};
  pool.stride = {1, 1, 1};
  Var b3 = maxpool3d(tape, x, pool);
  check_channels(p.b3_proj, in_channels, "b3");
  b3 = apply_conv_unit(tape, b3, p.b3_proj, pointwise, ctx);
  b3 = detail::finish_branch(tape, b3, p.b3_temporal, p.b3_gate, cfg.temporal_k, ctx, "b3");

  return concat_channels(tape, std::vector<Var>{b0, b1, b2, b3});
}

// The separable block of the S3D family: every branch, including the two
// pointwise ones and the pool branch, ends in a [kt,1,1] temporal
// convolution (channel-preserving on the pointwise/pool branches).
template <typename T>
Var sep_inception_block(Tape<T>& tape, Var x, const InceptionConfig& cfg,
                        const InceptionBlockParams<T>& p, const ForwardCtx<T>& ctx) {
  return inception_block(tape, x, cfg, p, ConvKind::Sep, ctx);
}

}  // namespace stcnn
