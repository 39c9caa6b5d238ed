// Copyright 2026 The stcnn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Weight-offset statistics: for every convolution kernel with temporal
// extent kt > 1, summarizes the weight population at each temporal offset
// t in -(kt-1)/2 .. +(kt-1)/2 (t = 0 is the kernel center). A freshly
// inflated network has identical distributions at every offset; training
// moves them apart where temporal structure is being used.

#pragma once

#include <algorithm>
#include <sstream>

#include "stcnn/network.hpp"

namespace stcnn {

struct OffsetRow {
  std::string layer;       // parameter name of the kernel
  int order = 0;           // bottom-to-top position among temporal kernels
  std::int64_t offset = 0; // temporal offset, 0 = center
  std::int64_t count = 0;
  double mean = 0, stddev = 0;
  double min = 0, q25 = 0, median = 0, q75 = 0, max = 0;
};

struct OffsetStats {
  std::vector<OffsetRow> rows;
  bool empty() const { return rows.empty(); }

  std::string to_csv() const {
    std::ostringstream os;
    os << "# schema=stcnn-offset-stats v=1\n";
    os << "layer,order,offset,count,mean,stddev,min,q25,median,q75,max\n";
    for (const auto& r : rows)
      os << r.layer << "," << r.order << "," << r.offset << "," << r.count << "," << r.mean << ","
         << r.stddev << "," << r.min << "," << r.q25 << "," << r.median << "," << r.q75 << ","
         << r.max << "\n";
    return os.str();
  }

  // stddev of the off-center offsets divided by stddev at the center, for
  // one layer (averaged over the off-center offsets).
  double offcenter_ratio(const std::string& layer) const {
    double center = 0, off = 0;
    int off_n = 0;
    for (const auto& r : rows) {
      if (r.layer != layer) continue;
      if (r.offset == 0) center = r.stddev;
      else { off += r.stddev; ++off_n; }
    }
    STCNN_CHECK(off_n > 0 && center > 0, "layer '" << layer << "' has no off-center offsets");
    return (off / off_n) / center;
  }

  std::vector<std::string> layers_in_order() const {
    std::vector<std::string> out;
    for (const auto& r : rows)
      if (out.empty() || out.back() != r.layer) out.push_back(r.layer);
    return out;
  }
};

namespace detail {

inline double quantile_sorted(const std::vector<double>& v, double q) {
  if (v.size() == 1) return v[0];
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] * (1 - frac) + v[hi] * frac;
}

}  // namespace detail

template <typename T>
OffsetStats weight_offset_stats(const Network<T>& net) {
  OffsetStats stats;
  int order = 0;
  for (const auto& name : net.param_order()) {
    if (!name.ends_with("/w")) continue;
    const Tensor<T>& w = net.param(name);
    if (w.rank() != 5 || w.dim(0) <= 1) continue;
    const std::int64_t kt = w.dim(0);
    const std::int64_t slice = w.size() / kt;
    ++order;
    for (std::int64_t t = 0; t < kt; ++t) {
      std::vector<double> vals(static_cast<std::size_t>(slice));
      for (std::int64_t i = 0; i < slice; ++i)
        vals[static_cast<std::size_t>(i)] = static_cast<double>(w[t * slice + i]);
      OffsetRow r;
      r.layer = name;
      r.order = order;
      r.offset = t - (kt - 1) / 2;
      r.count = slice;
      for (double v : vals) r.mean += v;
      r.mean /= static_cast<double>(slice);
      for (double v : vals) r.stddev += (v - r.mean) * (v - r.mean);
      r.stddev = std::sqrt(r.stddev / static_cast<double>(slice));
      std::sort(vals.begin(), vals.end());
      r.min = vals.front();
      r.max = vals.back();
      r.q25 = detail::quantile_sorted(vals, 0.25);
      r.median = detail::quantile_sorted(vals, 0.5);
      r.q75 = detail::quantile_sorted(vals, 0.75);
      stats.rows.push_back(r);
    }
  }
  return stats;
}

// Companion plotting script for the CSV (boxplot per layer); the kit itself
// only emits data.
inline std::string offset_plot_script(const std::string& csv_name) {
  std::ostringstream os;
  os << "#!/usr/bin/env python3\n"
     << "\"\"\"Renders per-layer weight-offset boxplots from " << csv_name << ".\"\"\"\n"
     << "import csv, collections\n"
     << "import matplotlib.pyplot as plt\n\n"
     << "rows = [r for r in csv.DictReader(open('" << csv_name
     << "')) if not r['layer'].startswith('#')]\n"
     << "layers = collections.OrderedDict()\n"
     << "for r in rows:\n"
     << "    layers.setdefault(r['layer'], []).append(r)\n"
     << "fig, axes = plt.subplots(1, len(layers), figsize=(3 * len(layers), 3), sharey=True)\n"
     << "if len(layers) == 1: axes = [axes]\n"
     << "for ax, (name, rs) in zip(axes, layers.items()):\n"
     << "    stats = [dict(med=float(r['median']), q1=float(r['q25']), q3=float(r['q75']),\n"
     << "                  whislo=float(r['min']), whishi=float(r['max']),\n"
     << "                  label=r['offset']) for r in rs]\n"
     << "    ax.bxp(stats, showfliers=False)\n"
     << "    ax.set_title(name.split('/')[0], fontsize=8)\n"
     << "    ax.set_xlabel('t offset')\n"
     << "plt.tight_layout()\n"
     << "plt.savefig('weight_offsets.png', dpi=120)\n"
     << "print('wrote weight_offsets.png')\n";
  return os.str();
}

inline std::string curve_plot_script(const std::string& csv_name) {
  std::ostringstream os;
  os << "#!/usr/bin/env python3\n"
     << "\"\"\"Plots the (K, FLOPs) tradeoff curve from " << csv_name << ".\"\"\"\n"
     << "import csv\n"
     << "import matplotlib.pyplot as plt\n\n"
     << "rows = list(csv.DictReader(open('" << csv_name << "')))\n"
     << "xs = [float(r['flops']) / 1e9 for r in rows]\n"
     << "ks = [int(r['k']) for r in rows]\n"
     << "plt.plot(xs, ks, marker='o')\n"
     << "plt.xlabel('GFLOPs (64-frame clip)')\n"
     << "plt.ylabel('transition index K')\n"
     << "plt.tight_layout()\n"
     << "plt.savefig('tradeoff_curve.png', dpi=120)\n"
     << "print('wrote tradeoff_curve.png')\n";
  return os.str();
}

}  // namespace stcnn
