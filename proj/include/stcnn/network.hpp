// Copyright 2026 The stcnn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Executable network: an ArchSpec plus a named parameter store. The forward
// pass interprets the layer list on a tape; parameters bind to the tape per
// call so several workers can evaluate disjoint batches concurrently against
// the same (read-only) store.

#pragma once

#include <map>
#include <string>
#include <vector>

#include "stcnn/arch.hpp"
#include "stcnn/checkpoint.hpp"

namespace stcnn {

template <typename T>
class Network {
 public:
  explicit Network(ArchSpec spec) : spec_(std::move(spec)) { allocate(); }

  const ArchSpec& spec() const { return spec_; }

  // Parameter access -------------------------------------------------------

  const std::vector<std::string>& param_order() const { return order_; }

  Tensor<T>& param(const std::string& name) {
    auto it = params_.find(name);
    STCNN_CHECK(it != params_.end(), "no parameter named '" << name << "'");
    return it->second;
  }
  const Tensor<T>& param(const std::string& name) const {
    return const_cast<Network*>(this)->param(name);
  }
  bool has_param(const std::string& name) const { return params_.count(name) > 0; }
  bool trainable(const std::string& name) const { return trainable_.at(name); }

  std::vector<std::string> trainable_names() const {
    std::vector<std::string> out;
    for (const auto& n : order_)
      if (trainable_.at(n)) out.push_back(n);
    return out;
  }

  std::int64_t num_params(bool trainable_only = true) const {
    std::int64_t n = 0;
    for (const auto& name : order_)
      if (!trainable_only || trainable_.at(name)) n += params_.at(name).size();
    return n;
  }

  // Seeded init. 3D kernels start temporally constant (every temporal offset
  // holds the same 2D weights, scaled by 1/kt), matching how inflated models
  // begin life; gates start at zero so every gate opens at 0.5.
  void init(std::uint64_t seed) {
    Rng rng(seed);
    for (const auto& name : order_) init_one(name, rng);
  }

  // Tape binding ------------------------------------------------------------

  struct Bound {
    Tape<T>* tape = nullptr;
    std::map<std::string, Var> vars;
    Var var(const std::string& name) const {
      auto it = vars.find(name);
      STCNN_CHECK(it != vars.end(), "parameter '" << name << "' is not bound");
      return it->second;
    }
  };

  Bound bind(Tape<T>& tape, bool requires_grad) const {
    Bound b;
    b.tape = &tape;
    for (const auto& name : order_)
      b.vars[name] = tape.leaf(params_.at(name), requires_grad && trainable_.at(name));
    return b;
  }

  // Forward -----------------------------------------------------------------

  // Runs the network on [N,T,H,W,C] input. With `until` set, returns that
  // layer's activation instead of the logits.
  Var forward(Bound& bound, Var x, const ForwardCtx<T>& ctx, const std::string& until = "") const {
    Tape<T>& tape = *bound.tape;
    const Tensor<T>& xv = tape.value(x);
    STCNN_CHECK(xv.rank() == 5, "network input must be [N,T,H,W,C]");
    STCNN_CHECK(xv.dim(4) == spec_.input.c, "input has " << xv.dim(4) << " channels, spec wants "
                                                         << spec_.input.c);
    Var h = x;
    bool found = until.empty();
    for (const auto& l : spec_.layers) {
      h = run_layer(bound, l, h, ctx);
      if (!until.empty() && l.name == until) { found = true; break; }
    }
    if (!found) {
      std::string names;
      for (const auto& l : spec_.layers) names += l.name + " ";
      throw Error("unknown layer '" + until + "'; valid layers: " + names);
    }
    return h;
  }

  // Eval-mode logits for a batch, no gradient bookkeeping.
  Tensor<T> logits_eval(const Tensor<T>& batch, const std::string& until = "") const {
    Tape<T> tape;
    Bound b = bind(tape, false);
    Var x = tape.leaf(batch, false);
    ForwardCtx<T> ctx;
    ctx.train = false;
    Var out = forward(b, x, ctx, until);
    return tape.value(out);
  }

  // Updates BatchNorm running statistics from a train-mode forward:
  // r <- momentum * r + (1 - momentum) * batch_stat. Call order is the
  // deterministic layer order captured in the sink.
  static void apply_bn_updates(const BnSink<T>& sink, T momentum) {
    for (const auto& u : sink) {
      Tensor<T> rm = u.running_mean;  // shallow handles into the store
      Tensor<T> rv = u.running_var;
      for (std::int64_t i = 0; i < rm.size(); ++i) {
        rm[i] = momentum * rm[i] + (T(1) - momentum) * u.batch_mean[i];
        rv[i] = momentum * rv[i] + (T(1) - momentum) * u.batch_var[i];
      }
    }
  }

  // Inflation ----------------------------------------------------------------

  // Initializes this network from a 2D-kind network of the same backbone:
  // full-3D filters get the 2D weights replicated over time and divided by
  // kt; separable units copy the 2D weights into the spatial half and make
  // the temporal half a channel identity (again mean-preserving). BatchNorm
  // state is copied; gates stay at zero.
  void inflate_from(const Network<T>& src) {
    STCNN_CHECK(src.spec_.layers.size() == spec_.layers.size(),
                "inflation source has a different backbone");
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      const LayerSpec& dst_l = spec_.layers[i];
      const LayerSpec& src_l = src.spec_.layers[i];
      STCNN_CHECK(src_l.name == dst_l.name, "inflation source layer mismatch at " << dst_l.name);
      if (src_l.type == LayerType::StemConv || src_l.type == LayerType::Inception)
        STCNN_CHECK(src_l.kind == ConvKind::Conv2D,
                    "inflation source must be a 2D-kind network, layer " << src_l.name << " is "
                                                                         << to_string(src_l.kind));
      inflate_layer(dst_l, src);
    }
  }

  // Checkpoints ---------------------------------------------------------------

  void save(const std::string& path) const { save_checkpoint<T>(path, order_, params_); }

  void load(const std::string& path) {
    auto loaded = load_checkpoint<T>(path);
    for (const auto& name : order_) {
      auto it = loaded.find(name);
      STCNN_CHECK(it != loaded.end(), "checkpoint is missing tensor '" << name << "'");
      STCNN_CHECK(it->second.shape() == params_.at(name).shape(),
                  "checkpoint tensor '" << name << "' has shape " << shape_str(it->second.shape())
                                        << ", network expects "
                                        << shape_str(params_.at(name).shape()));
    }
    for (const auto& name : order_) {
      Tensor<T>& dst = params_.at(name);
      const Tensor<T>& srcT = loaded.at(name);
      std::copy(srcT.data(), srcT.data() + srcT.size(), dst.data());
    }
  }

  std::vector<std::string> layer_names() const {
    std::vector<std::string> out;
    for (const auto& l : spec_.layers) out.push_back(l.name);
    return out;
  }

 private:
  // Parameter allocation -----------------------------------------------------

  void add(const std::string& name, Shape shape, bool is_trainable) {
    STCNN_CHECK(!params_.count(name), "duplicate parameter '" << name << "'");
    order_.push_back(name);
    params_.emplace(name, Tensor<T>(std::move(shape)));
    trainable_[name] = is_trainable;
  }

  void add_conv(const std::string& prefix, std::int64_t kt, std::int64_t k, std::int64_t ci,
                std::int64_t co) {
    add(prefix + "/w", Shape{kt, k, k, ci, co}, true);
    if (spec_.bn_scale) add(prefix + "/bn/gamma", Shape{co}, true);
    add(prefix + "/bn/beta", Shape{co}, true);
    add(prefix + "/bn/mean", Shape{co}, false);
    add(prefix + "/bn/var", Shape{co}, false);
  }

  void add_gate(const std::string& prefix, std::int64_t c) {
    add(prefix + "/gate/w", Shape{c, c}, true);
    add(prefix + "/gate/b", Shape{c}, true);
  }

  void allocate() {
    std::int64_t c = spec_.input.c;
    for (const auto& l : spec_.layers) {
      switch (l.type) {
        case LayerType::StemConv:
          if (l.kind == ConvKind::Sep) {
            add_conv(l.name + "/spatial", 1, l.spatial_k, c, l.out_channels);
            add_conv(l.name + "/temporal", l.sep_temporal_k, 1, l.out_channels, l.out_channels);
            if (l.gated) add_gate(l.name, l.out_channels);
          } else {
            add_conv(l.name, l.kind == ConvKind::Conv3D ? l.temporal_k : 1, l.spatial_k, c,
                     l.out_channels);
          }
          c = l.out_channels;
          break;
        case LayerType::Pointwise:
          add_conv(l.name, 1, 1, c, l.out_channels);
          c = l.out_channels;
          break;
        case LayerType::MaxPool:
          break;
        case LayerType::Inception: {
          const auto& ic = l.incep;
          const bool sep = l.kind == ConvKind::Sep;
          const std::int64_t kt = l.kind == ConvKind::Conv2D ? 1 : ic.temporal_k;
          add_conv(l.name + "/b0", 1, 1, c, ic.b0);
          if (sep) {
            add_conv(l.name + "/b0/temporal", ic.temporal_k, 1, ic.b0, ic.b0);
            if (l.gated) add_gate(l.name + "/b0", ic.b0);
          }
          add_conv(l.name + "/b1/reduce", 1, 1, c, ic.b1_reduce);
          add_conv(l.name + "/b1/conv", sep ? 1 : kt, ic.spatial_k, ic.b1_reduce, ic.b1_out);
          if (sep) {
            add_conv(l.name + "/b1/temporal", ic.temporal_k, 1, ic.b1_out, ic.b1_out);
            if (l.gated) add_gate(l.name + "/b1", ic.b1_out);
          }
          add_conv(l.name + "/b2/reduce", 1, 1, c, ic.b2_reduce);
          add_conv(l.name + "/b2/conv", sep ? 1 : kt, ic.spatial_k, ic.b2_reduce, ic.b2_out);
          if (sep) {
            add_conv(l.name + "/b2/temporal", ic.temporal_k, 1, ic.b2_out, ic.b2_out);
            if (l.gated) add_gate(l.name + "/b2", ic.b2_out);
          }
          add_conv(l.name + "/b3/proj", 1, 1, c, ic.b3_proj);
          if (sep) {
            add_conv(l.name + "/b3/temporal", ic.temporal_k, 1, ic.b3_proj, ic.b3_proj);
            if (l.gated) add_gate(l.name + "/b3", ic.b3_proj);
          }
          c = ic.out_channels();
          break;
        }
        case LayerType::Head:
          add("Head/w", Shape{c, spec_.classes}, true);
          add("Head/b", Shape{spec_.classes}, true);
          break;
      }
    }
  }

  void init_one(const std::string& name, Rng& rng) {
    Tensor<T>& t = params_.at(name);
    if (name.ends_with("/bn/beta") || name.ends_with("/bn/mean") || name.ends_with("/gate/w") ||
        name.ends_with("/gate/b") || name == "Head/b") {
      t.fill(T(0));
    } else if (name.ends_with("/bn/var") || name.ends_with("/bn/gamma")) {
      t.fill(T(1));
    } else if (name == "Head/w") {
      t.fill_normal(rng, 0.0, 1.0 / std::sqrt(static_cast<double>(t.dim(0))));
    } else {  // convolution weights [kt,kh,kw,ci,co]
      const std::int64_t kt = t.dim(0);
      const std::int64_t slice = t.size() / kt;
      const double fan_in = static_cast<double>(t.dim(1) * t.dim(2) * t.dim(3));
      const double stddev = std::sqrt(2.0 / fan_in);
      Tensor<T> base(Shape{slice});
      base.fill_normal(rng, 0.0, stddev);
      for (std::int64_t off = 0; off < kt; ++off)
        for (std::int64_t i = 0; i < slice; ++i)
          t[off * slice + i] = base[i] / static_cast<T>(kt);
    }
  }

  // Forward helpers -----------------------------------------------------------

  ConvUnit<T> unit(const Bound& b, const std::string& prefix) const {
    ConvUnit<T> u;
    u.w = b.var(prefix + "/w");
    u.has_bn = true;
    if (spec_.bn_scale) u.gamma = b.var(prefix + "/bn/gamma");
    u.beta = b.var(prefix + "/bn/beta");
    u.running_mean = params_.at(prefix + "/bn/mean");
    u.running_var = params_.at(prefix + "/bn/var");
    return u;
  }

  GateParams gate(const Bound& b, const std::string& prefix) const {
    GateParams g;
    g.w = b.var(prefix + "/gate/w");
    g.b = b.var(prefix + "/gate/b");
    return g;
  }

  Var run_layer(Bound& bound, const LayerSpec& l, Var h, const ForwardCtx<T>& ctx) const {
    Tape<T>& tape = *bound.tape;
    switch (l.type) {
      case LayerType::StemConv: {
        if (l.kind == ConvKind::Sep) {
          ConvOpt sopt;
          sopt.stride = l.stride;  // spatial half carries the stride
          Var y = apply_conv_unit(tape, h, unit(bound, l.name + "/spatial"), sopt, ctx);
          ConvOpt topt;
          topt.tpad = TemporalPad::Replicate;
          y = apply_conv_unit(tape, y, unit(bound, l.name + "/temporal"), topt, ctx);
          if (l.gated) y = feature_gate(tape, y, gate(bound, l.name));
          return y;
        }
        ConvOpt opt;
        opt.stride = l.stride;
        opt.tpad = TemporalPad::Replicate;
        return apply_conv_unit(tape, h, unit(bound, l.name), opt, ctx);
      }
      case LayerType::Pointwise:
        return apply_conv_unit(tape, h, unit(bound, l.name), ConvOpt{}, ctx);
      case LayerType::MaxPool: {
        PoolOpt p;
        p.window = l.window;
        p.stride = l.stride;
        return maxpool3d(tape, h, p);
      }
      case LayerType::Inception: {
        InceptionBlockParams<T> p;
        const bool sep = l.kind == ConvKind::Sep;
        p.b0 = unit(bound, l.name + "/b0");
        p.b1_reduce = unit(bound, l.name + "/b1/reduce");
        p.b1_conv = unit(bound, l.name + "/b1/conv");
        p.b2_reduce = unit(bound, l.name + "/b2/reduce");
        p.b2_conv = unit(bound, l.name + "/b2/conv");
        p.b3_proj = unit(bound, l.name + "/b3/proj");
        if (sep) {
          p.b0_temporal = unit(bound, l.name + "/b0/temporal");
          p.b1_temporal = unit(bound, l.name + "/b1/temporal");
          p.b2_temporal = unit(bound, l.name + "/b2/temporal");
          p.b3_temporal = unit(bound, l.name + "/b3/temporal");
          if (l.gated) {
            p.b0_gate = gate(bound, l.name + "/b0");
            p.b1_gate = gate(bound, l.name + "/b1");
            p.b2_gate = gate(bound, l.name + "/b2");
            p.b3_gate = gate(bound, l.name + "/b3");
          }
        }
        return inception_block(tape, h, l.incep, p, l.kind, ctx);
      }
      case LayerType::Head: {
        Var pooled = avgpool_spatial(tape, h);  // [N,T,C]
        if (ctx.train && ctx.rng && spec_.dropout_rate > 0)
          pooled = dropout(tape, pooled, spec_.dropout_rate, *ctx.rng, true);
        Var logits = linear(tape, pooled, bound.var("Head/w"), bound.var("Head/b"));
        return mean_axis1(tape, logits);  // clip logits: temporal average
      }
    }
    throw Error("unreachable layer type");
  }

  // Inflation helpers ----------------------------------------------------------

  void copy_bn(const std::string& prefix, const Network<T>& src, const std::string& src_prefix) {
    for (const char* part : {"/bn/beta", "/bn/mean", "/bn/var"}) {
      Tensor<T>& dst = params_.at(prefix + part);
      const Tensor<T>& s = src.params_.at(src_prefix + part);
      STCNN_CHECK(dst.size() == s.size(), "inflation BN mismatch at " << prefix << part);
      std::copy(s.data(), s.data() + s.size(), dst.data());
    }
    if (spec_.bn_scale) {
      Tensor<T>& dst = params_.at(prefix + "/bn/gamma");
      const Tensor<T>& s = src.params_.at(src_prefix + "/bn/gamma");
      std::copy(s.data(), s.data() + s.size(), dst.data());
    }
  }

  void tile_weights(const std::string& dst_name, const Tensor<T>& w2d) {
    Tensor<T>& dst = params_.at(dst_name);
    const std::int64_t kt = dst.dim(0);
    const std::int64_t slice = dst.size() / kt;
    STCNN_CHECK(w2d.size() == slice && w2d.dim(1) == dst.dim(1) && w2d.dim(2) == dst.dim(2) &&
                    w2d.dim(3) == dst.dim(3) && w2d.dim(4) == dst.dim(4),
                "2D weights " << shape_str(w2d.shape()) << " do not match 3D target "
                              << shape_str(dst.shape()) << " for " << dst_name);
    for (std::int64_t t = 0; t < kt; ++t)
      for (std::int64_t i = 0; i < slice; ++i)
        dst[t * slice + i] = w2d[i] / static_cast<T>(kt);
  }

  // Channel-identity temporal kernel, mean-preserving over time. The paired
  // BatchNorm is set up so its eval transform is exactly the identity.
  void identity_temporal(const std::string& prefix, T eps = T(1e-3)) {
    Tensor<T>& w = params_.at(prefix + "/w");
    w.fill(T(0));
    const std::int64_t kt = w.dim(0), c = w.dim(3);
    for (std::int64_t t = 0; t < kt; ++t)
      for (std::int64_t i = 0; i < c; ++i)
        w[(t * c + i) * c + i] = T(1) / static_cast<T>(kt);
    params_.at(prefix + "/bn/beta").fill(T(0));
    params_.at(prefix + "/bn/mean").fill(T(0));
    params_.at(prefix + "/bn/var").fill(T(1) - eps);
    if (spec_.bn_scale) params_.at(prefix + "/bn/gamma").fill(T(1));
  }

  void inflate_layer(const LayerSpec& l, const Network<T>& src) {
    auto copy_param = [&](const std::string& name) {
      Tensor<T>& dst = params_.at(name);
      const Tensor<T>& s = src.params_.at(name);
      STCNN_CHECK(dst.shape() == s.shape(), "inflation shape mismatch at " << name);
      std::copy(s.data(), s.data() + s.size(), dst.data());
    };
    switch (l.type) {
      case LayerType::MaxPool:
        return;
      case LayerType::Head:
        copy_param("Head/w");
        copy_param("Head/b");
        return;
      case LayerType::Pointwise:
        copy_param(l.name + "/w");
        copy_bn(l.name, src, l.name);
        return;
      case LayerType::StemConv:
        if (l.kind == ConvKind::Sep) {
          tile_weights(l.name + "/spatial/w", src.params_.at(l.name + "/w"));
          copy_bn(l.name + "/spatial", src, l.name);
          identity_temporal(l.name + "/temporal");
          // gates, if any, keep their zero init
        } else {
          tile_weights(l.name + "/w", src.params_.at(l.name + "/w"));
          copy_bn(l.name, src, l.name);
        }
        return;
      case LayerType::Inception: {
        const bool sep = l.kind == ConvKind::Sep;
        for (const char* p : {"/b0", "/b1/reduce", "/b2/reduce", "/b3/proj"}) {
          copy_param(l.name + p + "/w");
          copy_bn(l.name + p, src, l.name + p);
        }
        for (const char* p : {"/b1/conv", "/b2/conv"}) {
          if (sep) {
            copy_param(l.name + p + "/w");  // spatial [1,k,k] copies as-is
          } else {
            tile_weights(l.name + p + "/w", src.params_.at(l.name + p + "/w"));
          }
          copy_bn(l.name + p, src, l.name + p);
        }
        if (sep)
          for (const char* p : {"/b0/temporal", "/b1/temporal", "/b2/temporal", "/b3/temporal"})
            identity_temporal(l.name + p);
        return;
      }
    }
  }

  ArchSpec spec_;
  std::vector<std::string> order_;
  std::map<std::string, Tensor<T>> params_;
  std::map<std::string, bool> trainable_;
};

}  // namespace stcnn
