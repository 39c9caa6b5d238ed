// Copyright 2026 The stcnn Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <sstream>

#include "stcnn/probes.hpp"
#include "stcnn/train.hpp"

using namespace stcnn;

namespace {

// A very small job for harness tests: the mini backbone on the smallest
// legal clip geometry.
ArchSpec tiny_spec(const std::string& base = "i3d") {
  ArchSpec s = preset("mini-" + base);
  return build_variant(s.family, s.conv3d_kind, s.k, s.gated, true, 8, InputGeometry{8, 16, 16, 1}, 2);
}

DatasetSpec tiny_data(int count, std::uint64_t seed = 5) {
  DatasetSpec d;
  d.count = count;
  d.seed = seed;
  d.t = 8;
  d.h = 16;
  d.w = 16;
  d.patch = 5;
  return d;
}

}  // namespace

TEST_SUITE_BEGIN("train-harness");

TEST_CASE("sgd: zero momentum with lr 1 is plain descent") {
  Tensor<double> p(Shape{3}, std::vector<double>{1, 2, 3});
  Tensor<double> g(Shape{3}, std::vector<double>{0.5, -1, 2});
  Tensor<double> v(Shape{3});
  sgd_momentum_step(p, g, v, 1.0, 0.0);
  CHECK(p[0] == 0.5);
  CHECK(p[1] == 3.0);
  CHECK(p[2] == 1.0);
}

TEST_CASE("sgd: with zero gradients the velocity decays geometrically") {
  Tensor<double> p(Shape{1}, std::vector<double>{0.0});
  Tensor<double> g(Shape{1}, std::vector<double>{0.0});
  Tensor<double> v(Shape{1}, std::vector<double>{1.0});
  for (int k = 1; k <= 5; ++k) {
    sgd_momentum_step(p, g, v, 0.0, 0.9);
    CHECK(v[0] == doctest::Approx(std::pow(0.9, k)).epsilon(1e-15));
  }
}

TEST_CASE("sgd on a quadratic bowl follows the closed-form dynamics and converges") {
  // f(p) = (p0^2 + 3 p1^2) / 2, optimum at the origin.
  const double lr = 0.1, mom = 0.9;
  Tensor<double> p(Shape{2}, std::vector<double>{0.05, -0.05});
  Tensor<double> v(Shape{2});
  // Closed-form oracle: per coordinate, [p; v] evolves by a fixed 2x2 matrix.
  const double curv[2] = {1.0, 3.0};
  double op[2] = {0.05, -0.05}, ov[2] = {0.0, 0.0};
  for (int step = 0; step < 100; ++step) {
    Tensor<double> g(Shape{2}, std::vector<double>{curv[0] * p[0], curv[1] * p[1]});
    sgd_momentum_step(p, g, v, lr, mom);
    for (int i = 0; i < 2; ++i) {
      const double nv = mom * ov[i] + curv[i] * op[i];
      const double np = op[i] - lr * nv;
      ov[i] = nv;
      op[i] = np;
      CHECK(p[i] == doctest::Approx(op[i]).epsilon(1e-12));
      CHECK(v[i] == doctest::Approx(ov[i]).epsilon(1e-12));
    }
  }
  const double f = 0.5 * (curv[0] * p[0] * p[0] + curv[1] * p[1] * p[1]);
  CHECK(f < 1e-6);
}

TEST_CASE("lr schedule: initial value, decay boundaries inclusive, analytic sum") {
  LrSchedule s = LrSchedule::step_decay(0.1, 800);
  CHECK(s.at(0) == 0.1);
  CHECK(s.decay_steps == std::vector<std::int64_t>{600, 700});
  CHECK(s.at(599) == 0.1);
  CHECK(s.at(600) == doctest::Approx(0.01).epsilon(1e-12));  // inclusive of the later value
  CHECK(s.at(650) == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(s.at(700) == doctest::Approx(0.001).epsilon(1e-12));
  double total = 0;
  for (std::int64_t k = 0; k < 800; ++k) total += s.at(k);
  CHECK(total == doctest::Approx(600 * 0.1 + 100 * 0.01 + 100 * 0.001).epsilon(1e-9));

  LrSchedule bad;
  bad.decay_steps = {10, 5};
  bad.factors = {0.1, 0.01};
  CHECK_THROWS_AS(bad.at(20), Error);
}

TEST_CASE("eval metrics: oracle logits, constant logits, top5 >= top1") {
  // perfect one-hot logits
  const std::vector<int> labels{0, 1, 2, 1};
  Tensor<double> perfect(Shape{4, 3});
  for (std::size_t i = 0; i < labels.size(); ++i)
    perfect[static_cast<std::int64_t>(i) * 3 + labels[i]] = 10.0;
  EvalResult r = eval_logits(perfect, labels);
  CHECK(r.top1 == 1.0);
  CHECK(r.top5 == 1.0);
  CHECK(r.per_class.at(1) == 1.0);

  // constant logits predict class 0: top1 equals the class-0 frequency,
  // i.e. 1/num_classes on balanced labels
  Tensor<double> flat(Shape{6, 3}, 0.25);
  EvalResult rc = eval_logits(flat, std::vector<int>{0, 1, 2, 0, 1, 2});
  CHECK(rc.top1 == doctest::Approx(1.0 / 3).epsilon(1e-12));
  CHECK(rc.top5 == 1.0);  // 3 classes all fit in top-5

  Rng rng(3);
  Tensor<double> noisy(Shape{12, 8});
  noisy.fill_normal(rng, 0, 1);
  std::vector<int> ls;
  for (int i = 0; i < 12; ++i) ls.push_back(i % 8);
  EvalResult rn = eval_logits(noisy, ls);
  CHECK(rn.top5 >= rn.top1);
}

TEST_CASE("initial loss sits near ln(num_classes)") {
  ArchSpec spec = tiny_spec();
  Network<float> net(spec);
  net.init(3);
  Dataset<float> ds = generate_synthetic<float>(tiny_data(8));
  std::vector<int> idx{0, 1, 2, 3, 4, 5, 6, 7};
  Tape<float> tape;
  auto bound = net.bind(tape, false);
  ForwardCtx<float> ctx;  // eval mode; dropout off
  Var logits = net.forward(bound, tape.leaf(batch_of(ds, idx), false), ctx);
  Var loss = cross_entropy(tape, logits, ds.labels);
  const double l0 = tape.value(loss)[0];
  CHECK(l0 == doctest::Approx(std::log(2.0)).epsilon(0.10));
}

TEST_CASE("training is bit-reproducible across runs with the same seed and workers") {
  auto run = [&](int workers) {
    ArchSpec spec = tiny_spec();
    Network<float> net(spec);
    net.init(17);
    Dataset<float> ds = generate_synthetic<float>(tiny_data(16));
    TrainConfig cfg;
    cfg.steps = 6;
    cfg.batch = 4;
    cfg.seed = 23;
    cfg.workers = workers;
    cfg.eval_every = 0;
    cfg.lr = LrSchedule::step_decay(0.05, 6);
    std::ostringstream log;
    train(net, ds, cfg, &log);
    std::vector<float> flat;
    for (const auto& n : net.param_order())
      for (std::int64_t i = 0; i < net.param(n).size(); ++i) flat.push_back(net.param(n)[i]);
    return std::make_pair(flat, log.str());
  };
  const auto a = run(1);
  const auto b = run(1);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  const auto c = run(2);
  CHECK(c.first == run(2).first);  // multi-worker runs reproduce themselves too
}

TEST_CASE("one batch-4 step equals the averaged two-shard step with BN frozen (64-bit)") {
  ArchSpec spec = tiny_spec();
  Network<double> whole(spec), halves(spec);
  whole.init(29);
  halves.init(29);
  Dataset<double> ds = generate_synthetic<double>(tiny_data(4, 11));
  const std::vector<int> all{0, 1, 2, 3};
  const double lr = 0.1, mom = 0.9;

  auto grads_for = [&](Network<double>& net, const std::vector<int>& idx) {
    Tape<double> tape;
    auto bound = net.bind(tape, true);
    ForwardCtx<double> ctx;  // eval-mode BN, no dropout
    std::vector<int> labels;
    for (int i : idx) labels.push_back(ds.labels[static_cast<std::size_t>(i)]);
    Var loss = cross_entropy(tape, net.forward(bound, tape.leaf(batch_of(ds, idx), false), ctx), labels);
    tape.backward(loss);
    std::vector<Tensor<double>> out;
    for (const auto& n : net.trainable_names()) out.push_back(tape.grad(bound.var(n))->clone());
    return out;
  };

  const auto g_whole = grads_for(whole, all);
  const auto g_a = grads_for(halves, {0, 1});
  const auto g_b = grads_for(halves, {2, 3});

  const auto names = whole.trainable_names();
  for (std::size_t p = 0; p < names.size(); ++p) {
    Tensor<double> va(g_whole[p].shape()), vb(g_whole[p].shape());
    Tensor<double> merged(g_whole[p].shape());
    for (std::int64_t i = 0; i < merged.size(); ++i)
      merged[i] = 0.5 * (g_a[p][i] + g_b[p][i]);
    sgd_momentum_step(whole.param(names[p]), g_whole[p], va, lr, mom);
    sgd_momentum_step(halves.param(names[p]), merged, vb, lr, mom);
  }
  double worst = 0;
  for (const auto& n : names) worst = std::max(worst, max_abs_diff(whole.param(n), halves.param(n)));
  CHECK(worst < 1e-12);
}

TEST_CASE("non-finite loss aborts with the offending layer named") {
  ArchSpec spec = tiny_spec();
  Network<float> net(spec);
  net.init(31);
  // poison the last block: no pooling follows it, so the infinity reaches
  // the loss instead of being absorbed by a max window
  net.param("Mixed5c/b0/bn/beta")[0] = std::numeric_limits<float>::infinity();
  Dataset<float> ds = generate_synthetic<float>(tiny_data(8));
  TrainConfig cfg;
  cfg.steps = 2;
  cfg.batch = 4;
  cfg.eval_every = 0;
  CHECK_THROWS_WITH_AS(train(net, ds, cfg), doctest::Contains("Mixed5c"), Error);
}

TEST_CASE("a trained-or-not 2D network predicts identically on reversed clips") {
  // the mechanism behind the I2D row of the reversal experiment: predictions
  // are a function of the frame multiset, so accuracy matches exactly
  ArchSpec spec = tiny_spec("i2d");
  Network<float> net(spec);
  net.init(37);
  Dataset<float> ds = generate_synthetic<float>(tiny_data(24, 13));
  const ReversalReport rep = reversal_probe(net, ds);
  CHECK(rep.acc_normal == rep.acc_reversed);
  CHECK(rep.max_logit_delta < 1e-5);
}

TEST_CASE("metrics log lines carry step, lr and loss") {
  ArchSpec spec = tiny_spec();
  Network<float> net(spec);
  net.init(41);
  Dataset<float> ds = generate_synthetic<float>(tiny_data(8));
  TrainConfig cfg;
  cfg.steps = 3;
  cfg.batch = 4;
  cfg.eval_every = 2;
  std::ostringstream log;
  train(net, ds, &ds, cfg, &log);
  const std::string s = log.str();
  CHECK(s.find("# stcnn train log v1") == 0);
  CHECK(s.find("step=0 lr=0.1 loss=") != std::string::npos);
  CHECK(s.find("eval_top1=") != std::string::npos);
  CHECK(s.find("final train_top1=") != std::string::npos);
}

TEST_SUITE_END();
