// Copyright 2026 The stcnn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Evaluation probes: temporal-reversal behaviour of a trained (or fresh)
// network, and space-time-pooled embedding export for external projection
// tools.

#pragma once

#include <sstream>

#include "stcnn/train.hpp"

namespace stcnn {

struct ReversalReport {
  double acc_normal = 0;
  double acc_reversed = 0;      // accuracy against the original labels
  double max_logit_delta = 0;   // worst |logit(normal) - logit(reversed)| over clips
  std::int64_t count = 0;

  std::string to_csv() const {
    std::ostringstream os;
    os << "# schema=stcnn-reversal v=1\n";
    os << "clips,acc_normal,acc_reversed,max_logit_delta\n";
    os << count << "," << acc_normal << "," << acc_reversed << "," << max_logit_delta << "\n";
    return os.str();
  }
};

// Runs every clip and its temporal mirror through the network (eval mode).
template <typename T>
ReversalReport reversal_probe(const Network<T>& net, const Dataset<T>& ds, int batch = 16) {
  ReversalReport rep;
  rep.count = ds.size();
  std::int64_t hit_n = 0, hit_r = 0;
  for (std::int64_t start = 0; start < ds.size(); start += batch) {
    std::vector<int> idx;
    for (std::int64_t i = start; i < std::min<std::int64_t>(start + batch, ds.size()); ++i)
      idx.push_back(static_cast<int>(i));
    const Tensor<T> clips = batch_of(ds, idx);
    const Tensor<T> logits_n = net.logits_eval(clips);
    const Tensor<T> logits_r = net.logits_eval(reverse_time_tensor(clips));
    const std::int64_t c = logits_n.dim(1);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const T* ln = logits_n.data() + static_cast<std::int64_t>(r) * c;
      const T* lr = logits_r.data() + static_cast<std::int64_t>(r) * c;
      const int label = ds.labels[static_cast<std::size_t>(idx[r])];
      auto argmax = [&](const T* row) {
        std::int64_t best = 0;
        for (std::int64_t j = 1; j < c; ++j)
          if (row[j] > row[best]) best = j;
        return best;
      };
      if (argmax(ln) == label) ++hit_n;
      if (argmax(lr) == label) ++hit_r;
      for (std::int64_t j = 0; j < c; ++j)
        rep.max_logit_delta = std::max(rep.max_logit_delta,
                                       std::abs(static_cast<double>(ln[j]) - static_cast<double>(lr[j])));
    }
  }
  rep.acc_normal = static_cast<double>(hit_n) / static_cast<double>(ds.size());
  rep.acc_reversed = static_cast<double>(hit_r) / static_cast<double>(ds.size());
  return rep;
}

// One row per clip: label plus the named layer's activation pooled over
// space and time (vector length = the layer's channel extent).
template <typename T>
std::string export_embeddings(const Network<T>& net, const Dataset<T>& ds,
                              const std::string& layer, int batch = 16) {
  std::ostringstream os;
  bool wrote_header = false;
  for (std::int64_t start = 0; start < ds.size(); start += batch) {
    std::vector<int> idx;
    for (std::int64_t i = start; i < std::min<std::int64_t>(start + batch, ds.size()); ++i)
      idx.push_back(static_cast<int>(i));
    const Tensor<T> act = net.logits_eval(batch_of(ds, idx), layer);
    STCNN_CHECK(act.rank() == 5, "embedding layer '" << layer << "' is not an activation map");
    const std::int64_t c = act.dim(4);
    const std::int64_t m = act.dim(1) * act.dim(2) * act.dim(3);
    if (!wrote_header) {
      os << "# schema=stcnn-embeddings v=1 layer=" << layer << " dim=" << c << "\n";
      os << "clip,label";
      for (std::int64_t j = 0; j < c; ++j) os << ",e" << j;
      os << "\n";
      wrote_header = true;
    }
    for (std::size_t r = 0; r < idx.size(); ++r) {
      os << idx[r] << "," << ds.labels[static_cast<std::size_t>(idx[r])];
      const T* base = act.data() + static_cast<std::int64_t>(r) * m * c;
      for (std::int64_t j = 0; j < c; ++j) {
        double mean = 0;
        for (std::int64_t p = 0; p < m; ++p) mean += static_cast<double>(base[p * c + j]);
        os << "," << mean / static_cast<double>(m);
      }
      os << "\n";
    }
  }
  return os.str();
}

}  // namespace stcnn
