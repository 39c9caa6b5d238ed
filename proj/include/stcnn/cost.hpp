// Copyright 2026 The stcnn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Analytic cost accounting: exact parameter counts and theoretical FLOPs per
// layer for any ArchSpec, under an explicit, documented convention. The
// convention records how a multiply-accumulate is priced, whether BatchNorm
// parameters and the classifier head are included, and how the gate's n x n
// product is charged. Elementwise work (ReLU, BatchNorm at inference, gate
// sigmoid, pooling arithmetic) goes into a separate column so the
// convolution-only total can be compared on its own.

#pragma once

#include <string>
#include <vector>

#include "stcnn/arch.hpp"

namespace stcnn {

struct CostConvention {
  int mac_factor = 1;                   // FLOPs charged per multiply-accumulate
  bool include_bn_params = false;       // count BatchNorm beta (and gamma if present)
  bool include_head = true;             // count the classifier head
  bool gate_flops_per_position = false; // charge the gate matmul at every (t,h,w)
  std::string tag() const;
};

// Counting rules for a bare convolution.
inline std::int64_t conv_param_count(std::int64_t kt, std::int64_t kh, std::int64_t kw,
                                     std::int64_t ci, std::int64_t co, bool bias) {
  return kt * kh * kw * ci * co + (bias ? co : 0);
}
inline double conv_mac_count(std::int64_t kt, std::int64_t kh, std::int64_t kw, std::int64_t ci,
                             std::int64_t co, std::int64_t out_positions) {
  return static_cast<double>(out_positions) * static_cast<double>(co) *
         static_cast<double>(kt * kh * kw * ci);
}

struct CostRow {
  std::string name;
  std::string type;
  std::string kind;
  std::int64_t params = 0;
  double flops = 0;     // MAC-priced convolution/matmul work
  double ew_flops = 0;  // elementwise work, 1 FLOP per element
  std::int64_t out_t = 0, out_h = 0, out_w = 0, out_c = 0;
  std::int64_t activations = 0;  // output elements (batch 1)
};

struct CostReport {
  std::vector<CostRow> rows;
  CostRow total;
  InputGeometry input;
  std::int64_t batch = 1;
  CostConvention convention;

  double total_gflops() const { return total.flops / 1e9; }
  double total_mparams() const { return static_cast<double>(total.params) / 1e6; }
  std::string to_csv() const;
};

// Exact integer parameter counts (FLOPs columns populated too when geometry
// is supplied; count_params uses the spec's own input geometry).
CostReport count_params(const ArchSpec& spec, const CostConvention& conv = {});
CostReport count_flops(const ArchSpec& spec, InputGeometry input, const CostConvention& conv = {},
                       std::int64_t batch = 1);

// (K, cost) sweep for one surgery family and conv kind.
struct TradeoffRow {
  int k = 0;
  int n_3d = 0;
  std::int64_t params = 0;
  double flops = 0;
};
std::vector<TradeoffRow> tradeoff_curve(Family family, ConvKind kind3d, bool mini,
                                        InputGeometry input, const CostConvention& conv = {});
std::string tradeoff_csv(const std::vector<TradeoffRow>& rows, Family family, ConvKind kind3d);

// Reconciliation against published cost anchors. Sweeps the documented
// convention space and reports the residual of every target under each
// convention; `best` minimizes the worst absolute relative residual.
struct CostTarget {
  std::string arch;    // preset name
  double params_m = 0; // expected params in millions (0 = not checked)
  double gflops = 0;   // expected GFLOPs at the given geometry (0 = not checked)
};

struct ReconcileEntry {
  std::string arch;
  double got = 0, want = 0, residual = 0;  // residual = got/want - 1
  bool is_flops = false;
};

struct ReconcileResult {
  CostConvention convention;
  std::vector<ReconcileEntry> entries;
  double worst_abs_residual = 0;
  bool within(double param_tol, double flop_tol) const;
};

std::vector<CostTarget> table3_targets();
ReconcileResult reconcile(const std::vector<CostTarget>& targets, InputGeometry input,
                          const CostConvention& conv);
// Returns every convention's result, best first.
std::vector<ReconcileResult> calibrate(const std::vector<CostTarget>& targets, InputGeometry input);

}  // namespace stcnn
