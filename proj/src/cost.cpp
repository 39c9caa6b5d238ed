// Copyright 2026 The stcnn Authors
// SPDX-License-Identifier: Apache-2.0

#include "stcnn/cost.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace stcnn {

std::string CostConvention::tag() const {
  std::ostringstream os;
  os << "mac" << mac_factor << ",bn" << (include_bn_params ? 1 : 0) << ",head"
     << (include_head ? 1 : 0) << ",gate-" << (gate_flops_per_position ? "per-position" : "pooled");
  return os.str();
}

namespace {

struct Geom {
  std::int64_t t, h, w, c;
  std::int64_t positions() const { return t * h * w; }
};

struct Accum {
  const CostConvention& conv;
  const ArchSpec& spec;
  std::int64_t batch;
  CostRow row;

  std::int64_t bn_params(std::int64_t c) const {
    if (!conv.include_bn_params) return 0;
    return spec.bn_scale ? 2 * c : c;
  }

  // conv + BN + ReLU over `pos` output positions.
  void conv_unit(std::int64_t kt, std::int64_t kh, std::int64_t kw, std::int64_t ci,
                 std::int64_t co, std::int64_t pos) {
    row.params += kt * kh * kw * ci * co + bn_params(co);
    const double out_elems = static_cast<double>(pos) * static_cast<double>(co) *
                             static_cast<double>(batch);
    row.flops += out_elems * static_cast<double>(kt * kh * kw * ci) * conv.mac_factor;
    row.ew_flops += out_elems;  // BatchNorm at inference
    row.ew_flops += out_elems;  // ReLU
  }

  void gate(std::int64_t c, std::int64_t pos) {
    row.params += c * c + c;
    const double elems = static_cast<double>(pos) * static_cast<double>(c) *
                         static_cast<double>(batch);
    const double matmul = static_cast<double>(c) * static_cast<double>(c) * conv.mac_factor;
    row.flops += conv.gate_flops_per_position ? static_cast<double>(pos) * batch * matmul
                                              : static_cast<double>(batch) * matmul;
    row.ew_flops += elems;                                  // pooling accumulation
    row.ew_flops += static_cast<double>(c) * batch;         // sigmoid
    row.ew_flops += elems;                                  // broadcast multiply
  }

  void maxpool(std::int64_t wt, std::int64_t wh, std::int64_t ww, std::int64_t c,
               std::int64_t pos) {
    row.ew_flops += static_cast<double>(pos) * c * batch * static_cast<double>(wt * wh * ww - 1);
  }
};

Geom after_stride(const Geom& g, const std::array<std::int64_t, 3>& s) {
  return Geom{conv_out_extent(g.t, 1, s[0], Padding::Same),
              conv_out_extent(g.h, 1, s[1], Padding::Same),
              conv_out_extent(g.w, 1, s[2], Padding::Same), g.c};
}

CostReport report_for(const ArchSpec& spec, InputGeometry input, const CostConvention& conv,
                      std::int64_t batch) {
  CostReport rep;
  rep.input = input;
  rep.batch = batch;
  rep.convention = conv;
  Geom g{input.t, input.h, input.w, input.c};
  for (const auto& l : spec.layers) {
    Accum a{conv, spec, batch, CostRow{}};
    a.row.name = l.name;
    a.row.kind = "-";
    switch (l.type) {
      case LayerType::StemConv: {
        a.row.type = "stem-conv";
        a.row.kind = to_string(l.kind);
        const Geom out = after_stride(g, l.stride);
        if (l.kind == ConvKind::Sep) {
          // Spatial half carries the full stride; temporal half is dense.
          a.conv_unit(1, l.spatial_k, l.spatial_k, g.c, l.out_channels, out.positions());
          a.conv_unit(l.sep_temporal_k, 1, 1, l.out_channels, l.out_channels, out.positions());
          if (l.gated) a.gate(l.out_channels, out.positions());
        } else {
          const std::int64_t kt = l.kind == ConvKind::Conv3D ? l.temporal_k : 1;
          a.conv_unit(kt, l.spatial_k, l.spatial_k, g.c, l.out_channels, out.positions());
        }
        g = out;
        g.c = l.out_channels;
        break;
      }
      case LayerType::Pointwise:
        a.row.type = "pointwise";
        a.conv_unit(1, 1, 1, g.c, l.out_channels, g.positions());
        g.c = l.out_channels;
        break;
      case LayerType::MaxPool: {
        a.row.type = "maxpool";
        const Geom out = after_stride(g, l.stride);
        a.maxpool(l.window[0], l.window[1], l.window[2], g.c, out.positions());
        g = out;
        break;
      }
      case LayerType::Inception: {
        a.row.type = "inception";
        a.row.kind = to_string(l.kind);
        const auto& ic = l.incep;
        const bool sep = l.kind == ConvKind::Sep;
        const std::int64_t kt = l.kind == ConvKind::Conv2D ? 1 : ic.temporal_k;
        const std::int64_t pos = g.positions();  // stride 1, SAME: all convs see it
        a.conv_unit(1, 1, 1, g.c, ic.b0, pos);
        a.conv_unit(1, 1, 1, g.c, ic.b1_reduce, pos);
        a.conv_unit(1, 1, 1, g.c, ic.b2_reduce, pos);
        a.conv_unit(1, 1, 1, g.c, ic.b3_proj, pos);
        a.maxpool(l.kind == ConvKind::Conv2D ? 1 : ic.temporal_k, 3, 3, g.c, pos);
        if (sep) {
          a.conv_unit(1, ic.spatial_k, ic.spatial_k, ic.b1_reduce, ic.b1_out, pos);
          a.conv_unit(1, ic.spatial_k, ic.spatial_k, ic.b2_reduce, ic.b2_out, pos);
          for (auto c : {ic.b0, ic.b1_out, ic.b2_out, ic.b3_proj})
            a.conv_unit(ic.temporal_k, 1, 1, c, c, pos);
          if (l.gated)
            for (auto c : {ic.b0, ic.b1_out, ic.b2_out, ic.b3_proj}) a.gate(c, pos);
        } else {
          a.conv_unit(kt, ic.spatial_k, ic.spatial_k, ic.b1_reduce, ic.b1_out, pos);
          a.conv_unit(kt, ic.spatial_k, ic.spatial_k, ic.b2_reduce, ic.b2_out, pos);
        }
        g.c = ic.out_channels();
        break;
      }
      case LayerType::Head: {
        a.row.type = "head";
        if (conv.include_head) {
          a.row.params += g.c * spec.classes + spec.classes;
          const double frames = static_cast<double>(g.t) * batch;
          a.row.flops += frames * static_cast<double>(g.c) * static_cast<double>(spec.classes) *
                         conv.mac_factor;
          a.row.ew_flops += static_cast<double>(g.positions()) * g.c * batch;  // spatial pool
          a.row.ew_flops += frames * static_cast<double>(spec.classes) * 2;    // bias + time avg
        }
        g = Geom{1, 1, 1, spec.classes};
        break;
      }
    }
    if (l.type != LayerType::Head) a.row.out_c = g.c;
    else a.row.out_c = spec.classes;
    a.row.out_t = g.t;
    a.row.out_h = g.h;
    a.row.out_w = g.w;
    a.row.activations = g.positions() * a.row.out_c;
    rep.rows.push_back(a.row);
  }
  rep.total.name = "total";
  for (const auto& r : rep.rows) {
    rep.total.params += r.params;
    rep.total.flops += r.flops;
    rep.total.ew_flops += r.ew_flops;
    rep.total.activations += r.activations;
  }
  return rep;
}

}  // namespace

CostReport count_params(const ArchSpec& spec, const CostConvention& conv) {
  return report_for(spec, spec.input, conv, 1);
}

CostReport count_flops(const ArchSpec& spec, InputGeometry input, const CostConvention& conv,
                       std::int64_t batch) {
  STCNN_CHECK(input.t > 0 && input.h > 0 && input.w > 0 && input.c > 0,
              "count_flops needs positive geometry");
  return report_for(spec, input, conv, batch);
}

std::string CostReport::to_csv() const {
  std::ostringstream os;
  os << "# schema=stcnn-cost-report v=1 convention=" << convention.tag() << " input=" << input.t
     << "x" << input.h << "x" << input.w << "x" << input.c << " batch=" << batch << "\n";
  os << "name,type,kind,params,flops,ew_flops,out_t,out_h,out_w,out_c,activations\n";
  auto line = [&](const CostRow& r) {
    os << r.name << "," << r.type << "," << r.kind << "," << r.params << "," << std::llround(r.flops)
       << "," << std::llround(r.ew_flops) << "," << r.out_t << "," << r.out_h << "," << r.out_w
       << "," << r.out_c << "," << r.activations << "\n";
  };
  for (const auto& r : rows) line(r);
  line(total);
  return os.str();
}

std::vector<TradeoffRow> tradeoff_curve(Family family, ConvKind kind3d, bool mini,
                                        InputGeometry input, const CostConvention& conv) {
  STCNN_CHECK(family == Family::BottomHeavy || family == Family::TopHeavy,
              "tradeoff curves sweep the bottom-heavy or top-heavy family");
  std::vector<TradeoffRow> rows;
  const int total = backbone_k_total();
  const int lo = family == Family::BottomHeavy ? 0 : 1;
  const int hi = family == Family::BottomHeavy ? total : total + 1;
  for (int k = lo; k <= hi; ++k) {
    ArchSpec s = build_variant(family, kind3d, k, false, mini, 0,
                               input.t > 0 ? input : InputGeometry{}, 0);
    const CostReport rep = count_flops(s, s.input, conv);
    TradeoffRow r;
    r.k = k;
    r.n_3d = s.num_3d_units();
    r.params = rep.total.params;
    r.flops = rep.total.flops;
    rows.push_back(r);
  }
  return rows;
}

std::string tradeoff_csv(const std::vector<TradeoffRow>& rows, Family family, ConvKind kind3d) {
  std::ostringstream os;
  os << "# schema=stcnn-tradeoff v=1 family=" << to_string(family) << " conv=" << to_string(kind3d)
     << "\n";
  os << "k,n_3d_units,params,flops\n";
  for (const auto& r : rows)
    os << r.k << "," << r.n_3d << "," << r.params << "," << std::llround(r.flops) << "\n";
  return os.str();
}

std::vector<CostTarget> table3_targets() {
  return {
      {"i3d", 12.06, 107.89},
      {"s3d", 8.77, 66.38},
      {"s3dg", 11.56, 71.38},
      {"fast-s3d", 0, 43.47},
  };
}

bool ReconcileResult::within(double param_tol, double flop_tol) const {
  for (const auto& e : entries)
    if (std::abs(e.residual) > (e.is_flops ? flop_tol : param_tol)) return false;
  return true;
}

ReconcileResult reconcile(const std::vector<CostTarget>& targets, InputGeometry input,
                          const CostConvention& conv) {
  ReconcileResult res;
  res.convention = conv;
  for (const auto& t : targets) {
    ArchSpec spec = preset(t.arch);
    if (t.params_m > 0) {
      const CostReport rep = count_params(spec, conv);
      ReconcileEntry e;
      e.arch = t.arch;
      e.is_flops = false;
      e.got = rep.total_mparams();
      e.want = t.params_m;
      e.residual = e.got / e.want - 1.0;
      res.entries.push_back(e);
    }
    if (t.gflops > 0) {
      const CostReport rep = count_flops(spec, input, conv);
      ReconcileEntry e;
      e.arch = t.arch;
      e.is_flops = true;
      e.got = rep.total_gflops();
      e.want = t.gflops;
      e.residual = e.got / e.want - 1.0;
      res.entries.push_back(e);
    }
  }
  for (const auto& e : res.entries)
    res.worst_abs_residual = std::max(res.worst_abs_residual, std::abs(e.residual));
  return res;
}

std::vector<ReconcileResult> calibrate(const std::vector<CostTarget>& targets,
                                       InputGeometry input) {
  std::vector<ReconcileResult> out;
  for (int mac : {1, 2})
    for (bool bn : {false, true})
      for (bool head : {true, false})
        for (bool gate_pp : {false, true}) {
          CostConvention c;
          c.mac_factor = mac;
          c.include_bn_params = bn;
          c.include_head = head;
          c.gate_flops_per_position = gate_pp;
          out.push_back(reconcile(targets, input, c));
        }
  std::sort(out.begin(), out.end(), [](const ReconcileResult& a, const ReconcileResult& b) {
    return a.worst_abs_residual < b.worst_abs_residual;
  });
  return out;
}

}  // namespace stcnn
