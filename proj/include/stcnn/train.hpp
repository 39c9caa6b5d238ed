// Copyright 2026 The stcnn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale supervised training: synchronous SGD with classic momentum,
// a piecewise-constant step-decay schedule, deterministic batching, optional
// data-parallel workers with ordered gradient merging, and evaluation.

#pragma once

#include <cmath>
#include <iostream>
#include <map>
#include <numeric>
#include <thread>

#include "stcnn/data.hpp"
#include "stcnn/network.hpp"

namespace stcnn {

struct LrSchedule {
  double initial = 0.1;
  std::vector<std::int64_t> decay_steps;  // strictly increasing
  std::vector<double> factors;            // cumulative multiplier applied at each step

  // Piecewise constant; the decayed value applies from the decay step on.
  double at(std::int64_t step) const {
    STCNN_CHECK(decay_steps.size() == factors.size(), "schedule steps/factors length mismatch");
    double lr = initial;
    for (std::size_t i = 0; i < decay_steps.size(); ++i) {
      if (i > 0)
        STCNN_CHECK(decay_steps[i] > decay_steps[i - 1], "decay steps must be strictly increasing");
      if (step >= decay_steps[i]) lr = initial * factors[i];
    }
    return lr;
  }

  // The protocol shape: decays to 0.01x-of-initial at 75% and 0.001x at 87.5%
  // of the run, scaled to `total_steps`.
  static LrSchedule step_decay(double initial, std::int64_t total_steps) {
    LrSchedule s;
    s.initial = initial;
    s.decay_steps = {total_steps * 3 / 4, total_steps * 7 / 8};
    s.factors = {0.1, 0.01};
    return s;
  }
};

struct TrainConfig {
  LrSchedule lr = LrSchedule::step_decay(0.1, 800);
  double momentum = 0.9;
  int batch = 8;
  std::int64_t steps = 800;
  std::uint64_t seed = 1;
  int workers = 1;
  std::int64_t eval_every = 200;  // 0 disables periodic eval
  double bn_momentum = 0.99;
  bool bn_frozen = false;  // eval-mode BN during training (for equivalence tests)

  void validate() const {
    STCNN_CHECK(momentum >= 0.0 && momentum < 1.0, "momentum must be in [0,1)");
    STCNN_CHECK(batch >= 1 && steps >= 1 && workers >= 1, "batch/steps/workers must be positive");
  }
};

// Classic momentum: v <- momentum * v + g, p <- p - lr * v.
template <typename T>
void sgd_momentum_step(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& velocity, double lr,
                       double momentum) {
  STCNN_CHECK(param.size() == grad.size() && param.size() == velocity.size(),
              "sgd shapes misaligned: " << shape_str(param.shape()) << " vs "
                                        << shape_str(grad.shape()));
  T* p = param.data();
  const T* g = grad.data();
  T* v = velocity.data();
  const T lrt = static_cast<T>(lr), mt = static_cast<T>(momentum);
  for (std::int64_t i = 0; i < param.size(); ++i) {
    v[i] = mt * v[i] + g[i];
    p[i] -= lrt * v[i];
  }
}

struct EvalResult {
  double top1 = 0, top5 = 0;
  std::map<int, double> per_class;
  std::int64_t count = 0;
};

namespace detail {

struct EvalAccum {
  std::int64_t hit1 = 0, hit5 = 0, count = 0;
  std::map<int, std::int64_t> class_total, class_hit;

  EvalResult finish() const {
    EvalResult res;
    res.count = count;
    res.top1 = static_cast<double>(hit1) / static_cast<double>(count);
    res.top5 = static_cast<double>(hit5) / static_cast<double>(count);
    for (const auto& [cls, total] : class_total)
      res.per_class[cls] =
          static_cast<double>(class_hit.count(cls) ? class_hit.at(cls) : 0) / static_cast<double>(total);
    return res;
  }
};

// Ranks one [N,C] logits block against labels. Ties resolve to the lower
// class index (stable sort), so constant logits predict class 0.
template <typename T>
void accumulate_eval(EvalAccum& acc, const Tensor<T>& logits, const std::vector<int>& labels) {
  STCNN_CHECK(logits.rank() == 2, "eval expects [N,C] logits");
  const std::int64_t c = logits.dim(1);
  const std::int64_t k5 = std::min<std::int64_t>(5, c);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const T* row = logits.data() + static_cast<std::int64_t>(r) * c;
    const int label = labels[r];
    std::vector<std::int64_t> order(static_cast<std::size_t>(c));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::int64_t a, std::int64_t b) { return row[a] > row[b]; });
    ++acc.count;
    ++acc.class_total[label];
    if (order[0] == label) {
      ++acc.hit1;
      ++acc.class_hit[label];
    }
    for (std::int64_t j = 0; j < k5; ++j)
      if (order[static_cast<std::size_t>(j)] == label) {
        ++acc.hit5;
        break;
      }
  }
}

}  // namespace detail

// Metrics from precomputed logits (the ranking core of evaluate()).
template <typename T>
EvalResult eval_logits(const Tensor<T>& logits, const std::vector<int>& labels) {
  detail::EvalAccum acc;
  detail::accumulate_eval(acc, logits, labels);
  return acc.finish();
}

template <typename T>
EvalResult evaluate(const Network<T>& net, const Dataset<T>& ds, int batch = 16) {
  detail::EvalAccum acc;
  for (std::int64_t start = 0; start < ds.size(); start += batch) {
    std::vector<int> idx;
    std::vector<int> labels;
    for (std::int64_t i = start; i < std::min<std::int64_t>(start + batch, ds.size()); ++i) {
      idx.push_back(static_cast<int>(i));
      labels.push_back(ds.labels[static_cast<std::size_t>(i)]);
    }
    detail::accumulate_eval(acc, net.logits_eval(batch_of(ds, idx)), labels);
  }
  return acc.finish();
}

struct TrainResult {
  double final_loss = 0;
  double train_top1 = 0, train_top5 = 0;
  double eval_top1 = 0, eval_top5 = 0;
  std::int64_t steps = 0;
};

namespace detail {

// Gradients of one worker shard, in parameter-store order.
template <typename T>
struct ShardGrads {
  std::vector<Tensor<T>> grads;   // undefined tensors where no grad flowed
  BnSink<T> bn_updates;
  double loss = 0;
  bool loss_finite = true;
};

template <typename T>
ShardGrads<T> run_shard(const Network<T>& net, const Tensor<T>& batch,
                        const std::vector<int>& labels, Rng dropout_rng, bool bn_frozen) {
  ShardGrads<T> out;
  Tape<T> tape;
  auto bound = net.bind(tape, true);
  Var x = tape.leaf(batch, false);
  ForwardCtx<T> ctx;
  ctx.train = true;
  ctx.rng = &dropout_rng;
  if (bn_frozen) ctx.train = false;  // freeze batch stats; dropout stays off too
  else ctx.bn_sink = &out.bn_updates;
  Var logits = net.forward(bound, x, ctx);
  Var loss = cross_entropy(tape, logits, labels);
  out.loss = static_cast<double>(tape.value(loss)[0]);
  if (!std::isfinite(out.loss)) {
    out.loss_finite = false;
    return out;
  }
  tape.backward(loss);
  const auto names = net.trainable_names();
  out.grads.reserve(names.size());
  for (const auto& n : names) {
    const Tensor<T>* g = tape.grad(bound.var(n));
    out.grads.push_back(g ? *g : Tensor<T>());
  }
  return out;
}

// Walks layer outputs on a batch and names the first non-finite activation.
template <typename T>
std::string first_nonfinite_layer(const Network<T>& net, const Tensor<T>& batch) {
  for (const auto& name : net.layer_names()) {
    const Tensor<T> act = net.logits_eval(batch, name);
    for (std::int64_t i = 0; i < act.size(); ++i)
      if (!std::isfinite(static_cast<double>(act[i]))) return name;
  }
  return "loss";
}

}  // namespace detail

// Deterministic given (seed, worker count): batches come from a seeded
// shuffle, dropout streams are forked per (step, worker), and worker
// gradients merge in worker order before the update.
template <typename T>
TrainResult train(Network<T>& net, const Dataset<T>& train_ds, const Dataset<T>* eval_ds,
                  const TrainConfig& cfg, std::ostream* log = nullptr,
                  const std::string& checkpoint_path = "") {
  cfg.validate();
  STCNN_CHECK(train_ds.size() > 0, "empty training dataset");
  Rng order_rng(cfg.seed);
  Rng dropout_root(cfg.seed ^ 0x5eed5eedULL);

  const auto names = net.trainable_names();
  std::vector<Tensor<T>> velocity;
  for (const auto& n : names) velocity.emplace_back(net.param(n).shape());

  std::vector<int> order(static_cast<std::size_t>(train_ds.size()));
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();  // forces a shuffle on first use

  auto next_batch = [&](std::vector<int>& idx) {
    idx.clear();
    for (int i = 0; i < cfg.batch; ++i) {
      if (cursor == order.size()) {
        for (std::size_t j = order.size(); j > 1; --j)
          std::swap(order[j - 1], order[static_cast<std::size_t>(order_rng.below(static_cast<std::int64_t>(j)))]);
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
    }
  };

  if (log)
    *log << "# stcnn train log v1 arch=" << net.spec().name << " steps=" << cfg.steps
         << " batch=" << cfg.batch << " momentum=" << cfg.momentum << " seed=" << cfg.seed
         << " workers=" << cfg.workers << " eval_policy=full-clip\n";

  TrainResult result;
  std::vector<int> idx;
  for (std::int64_t step = 0; step < cfg.steps; ++step) {
    next_batch(idx);
    const double lr = cfg.lr.at(step);

    // Shard the batch over workers; each worker owns a contiguous slice.
    const int w = std::min<int>(cfg.workers, static_cast<int>(idx.size()));
    std::vector<detail::ShardGrads<T>> shards(static_cast<std::size_t>(w));
    std::vector<std::vector<int>> shard_idx(static_cast<std::size_t>(w));
    for (std::size_t i = 0; i < idx.size(); ++i)
      shard_idx[i * static_cast<std::size_t>(w) / idx.size()].push_back(idx[i]);
    {
      std::vector<std::thread> threads;
      for (int s = 0; s < w; ++s) {
        Rng drng = dropout_root.fork(static_cast<std::uint64_t>(step) * 1000 + static_cast<std::uint64_t>(s));
        threads.emplace_back([&, s, drng]() {
          std::vector<int> labels;
          for (int i : shard_idx[static_cast<std::size_t>(s)])
            labels.push_back(train_ds.labels[static_cast<std::size_t>(i)]);
          shards[static_cast<std::size_t>(s)] = detail::run_shard(
              net, batch_of(train_ds, shard_idx[static_cast<std::size_t>(s)]), labels, drng,
              cfg.bn_frozen);
        });
      }
      for (auto& t : threads) t.join();
    }

    // Merge in worker order: loss and gradients are weighted by shard size.
    double loss = 0;
    bool finite = true;
    for (int s = 0; s < w; ++s) {
      const double frac = static_cast<double>(shard_idx[static_cast<std::size_t>(s)].size()) /
                          static_cast<double>(idx.size());
      loss += shards[static_cast<std::size_t>(s)].loss * frac;
      finite = finite && shards[static_cast<std::size_t>(s)].loss_finite;
    }
    if (!finite || !std::isfinite(loss)) {
      const std::string layer = detail::first_nonfinite_layer(net, batch_of(train_ds, idx));
      throw Error("non-finite loss at step " + std::to_string(step) +
                  "; first non-finite activation in layer '" + layer + "'");
    }

    for (std::size_t p = 0; p < names.size(); ++p) {
      Tensor<T> merged;
      for (int s = 0; s < w; ++s) {
        const Tensor<T>& g = shards[static_cast<std::size_t>(s)].grads[p];
        if (!g.defined()) continue;
        const T frac = static_cast<T>(shard_idx[static_cast<std::size_t>(s)].size()) /
                       static_cast<T>(idx.size());
        if (!merged.defined()) merged = Tensor<T>(g.shape());
        for (std::int64_t i = 0; i < g.size(); ++i) merged[i] += g[i] * frac;
      }
      if (!merged.defined()) continue;
      sgd_momentum_step(net.param(names[p]), merged, velocity[p], lr, cfg.momentum);
    }

    // Running-stat updates, averaged over workers then applied in layer order.
    if (!cfg.bn_frozen && !shards.empty() && !shards[0].bn_updates.empty()) {
      BnSink<T>& merged = shards[0].bn_updates;
      for (int s = 1; s < w; ++s) {
        const BnSink<T>& other = shards[static_cast<std::size_t>(s)].bn_updates;
        STCNN_CHECK(other.size() == merged.size(), "workers saw different BN layers");
        for (std::size_t i = 0; i < merged.size(); ++i)
          for (std::int64_t j = 0; j < merged[i].batch_mean.size(); ++j) {
            merged[i].batch_mean[j] += other[i].batch_mean[j];
            merged[i].batch_var[j] += other[i].batch_var[j];
          }
      }
      if (w > 1)
        for (auto& u : merged)
          for (std::int64_t j = 0; j < u.batch_mean.size(); ++j) {
            u.batch_mean[j] /= static_cast<T>(w);
            u.batch_var[j] /= static_cast<T>(w);
          }
      Network<T>::apply_bn_updates(merged, static_cast<T>(cfg.bn_momentum));
    }

    result.final_loss = loss;
    if (log) {
      *log << "step=" << step << " lr=" << lr << " loss=" << loss;
      if (cfg.eval_every > 0 && eval_ds && (step + 1) % cfg.eval_every == 0) {
        const EvalResult ev = evaluate(net, *eval_ds);
        *log << " eval_top1=" << ev.top1 << " eval_top5=" << ev.top5;
        result.eval_top1 = ev.top1;
        result.eval_top5 = ev.top5;
      }
      *log << "\n";
    }
  }
  result.steps = cfg.steps;

  const EvalResult tr = evaluate(net, train_ds);
  result.train_top1 = tr.top1;
  result.train_top5 = tr.top5;
  if (eval_ds) {
    const EvalResult ev = evaluate(net, *eval_ds);
    result.eval_top1 = ev.top1;
    result.eval_top5 = ev.top5;
    if (log) *log << "final train_top1=" << tr.top1 << " eval_top1=" << ev.top1 << "\n";
  } else if (log) {
    *log << "final train_top1=" << tr.top1 << "\n";
  }
  if (!checkpoint_path.empty()) net.save(checkpoint_path);
  return result;
}

// No-eval-set overload (nullptr does not deduce through the pointer form).
template <typename T>
TrainResult train(Network<T>& net, const Dataset<T>& train_ds, const TrainConfig& cfg,
                  std::ostream* log = nullptr, const std::string& checkpoint_path = "") {
  return train(net, train_ds, static_cast<const Dataset<T>*>(nullptr), cfg, log, checkpoint_path);
}

}  // namespace stcnn

