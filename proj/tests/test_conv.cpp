// Copyright 2026 The stcnn Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "stcnn/conv.hpp"
#include "test_helpers.hpp"

using namespace stcnn;
using namespace stcnn_test;

namespace {

Tensor<double> run_conv(const Tensor<double>& x, const Tensor<double>& w, const ConvOpt& opt,
                        const Tensor<double>* bias = nullptr) {
  Tape<double> tape;
  Var b = bias ? tape.leaf(*bias, false) : Var{};
  Var y = conv3d(tape, tape.leaf(x, false), tape.leaf(w, false), b, opt);
  return tape.value(y);
}

}  // namespace

TEST_SUITE_BEGIN("st-ops");

TEST_CASE("SAME output extents are ceil(in/stride) for all tested shapes") {
  for (std::int64_t in : {1, 2, 3, 7, 16, 17, 224})
    for (std::int64_t k : {1, 2, 3, 7})
      for (std::int64_t s : {1, 2, 3}) {
        CHECK(conv_out_extent(in, k, s, Padding::Same) == (in + s - 1) / s);
      }
}

TEST_CASE("conv3d: 1x1x1 identity filter reproduces the input") {
  Rng rng(1);
  Tensor<double> x = random_tensor(Shape{2, 3, 4, 4, 3}, rng);
  Tensor<double> w(Shape{1, 1, 1, 3, 3});
  for (int i = 0; i < 3; ++i) w[i * 3 + i] = 1.0;
  CHECK(same_data(run_conv(x, w, ConvOpt{}), x));
}

TEST_CASE("conv3d: channel mismatch raises a descriptive error") {
  Rng rng(2);
  Tensor<double> x = random_tensor(Shape{1, 2, 4, 4, 3}, rng);
  Tensor<double> w = random_tensor(Shape{1, 3, 3, 5, 4}, rng);
  CHECK_THROWS_WITH_AS(run_conv(x, w, ConvOpt{}), doctest::Contains("channel"), Error);
}

TEST_CASE("conv3d: zero-size VALID output raises") {
  Rng rng(3);
  Tensor<double> x = random_tensor(Shape{1, 2, 2, 2, 1}, rng);
  Tensor<double> w = random_tensor(Shape{1, 3, 3, 1, 1}, rng);
  ConvOpt opt;
  opt.padding = Padding::Valid;
  CHECK_THROWS_AS(run_conv(x, w, opt), Error);
}

TEST_CASE("conv3d with kt=1 applies the 2D convolution to each frame independently") {
  Rng rng(4);
  Tensor<double> x = random_tensor(Shape{1, 5, 6, 6, 2}, rng);
  Tensor<double> w = random_tensor(Shape{1, 3, 3, 2, 4}, rng);
  ConvOpt opt;
  const Tensor<double> full = run_conv(x, w, opt);
  // frame f alone through the same filter
  for (std::int64_t f = 0; f < 5; ++f) {
    Tensor<double> frame(Shape{1, 1, 6, 6, 2});
    std::copy(x.data() + f * 72, x.data() + (f + 1) * 72, frame.data());
    const Tensor<double> single = run_conv(frame, w, opt);
    for (std::int64_t i = 0; i < single.size(); ++i)
      CHECK(single[i] == full[f * single.size() + i]);
  }
}

TEST_CASE("conv3d matches the six-nested-loop oracle exactly (VALID example)") {
  Rng rng(5);
  Tensor<double> x = random_tensor(Shape{1, 5, 7, 7, 3}, rng);
  Tensor<double> w = random_tensor(Shape{3, 3, 3, 3, 4}, rng);
  Tensor<double> b = random_tensor(Shape{4}, rng);
  ConvOpt opt;
  opt.padding = Padding::Valid;
  CHECK(same_data(run_conv(x, w, opt, &b), naive_conv3d(x, w, &b, opt)));
}

TEST_CASE("conv3d matches the oracle exactly on 100+ random instances") {
  Rng rng(6);
  int instances = 0;
  for (int it = 0; it < 110; ++it) {
    const Shape xs{1 + rng.below(2), 3 + rng.below(4), 3 + rng.below(5), 3 + rng.below(5),
                   1 + rng.below(3)};
    const std::int64_t kt = 1 + rng.below(3), k = 1 + rng.below(3);
    const Shape ws{kt, k, k, xs[4], 1 + rng.below(4)};
    ConvOpt opt;
    opt.stride = {1 + rng.below(2), 1 + rng.below(2), 1 + rng.below(2)};
    opt.padding = rng.below(2) ? Padding::Same : Padding::Valid;
    opt.tpad = rng.below(2) ? TemporalPad::Zero : TemporalPad::Replicate;
    if (opt.padding == Padding::Valid &&
        (xs[1] < ws[0] || xs[2] < ws[1] || xs[3] < ws[2]))
      continue;  // no valid output
    const Tensor<double> x = random_tensor(xs, rng);
    const Tensor<double> w = random_tensor(ws, rng);
    CHECK(same_data(run_conv(x, w, opt), naive_conv3d(x, w, nullptr, opt)));
    ++instances;
  }
  CHECK(instances >= 100);
}

TEST_CASE("sepconv3d: center-delta temporal kernel reduces to the spatial conv alone") {
  Rng rng(7);
  Tensor<double> x = random_tensor(Shape{1, 4, 5, 5, 3}, rng);
  Tensor<double> ws = random_tensor(Shape{1, 3, 3, 3, 4}, rng);
  Tensor<double> wt(Shape{3, 1, 1, 4, 4});
  for (int c = 0; c < 4; ++c) wt[(1 * 4 + c) * 4 + c] = 1.0;  // delta at t=0, identity mixing
  Tape<double> tape;
  ConvOpt opt;
  Var y = sepconv3d(tape, tape.leaf(x, false), tape.leaf(ws, false), Var{}, tape.leaf(wt, false),
                    Var{}, opt);
  CHECK(same_data(tape.value(y), run_conv(x, ws, opt)));
}

TEST_CASE("sepconv3d equals composing the two conv3d calls, including strides") {
  Rng rng(8);
  Tensor<double> x = random_tensor(Shape{2, 6, 8, 8, 3}, rng);
  Tensor<double> ws = random_tensor(Shape{1, 3, 3, 3, 5}, rng);
  Tensor<double> wt = random_tensor(Shape{3, 1, 1, 5, 4}, rng);
  ConvOpt opt;
  opt.stride = {2, 2, 2};
  opt.tpad = TemporalPad::Replicate;
  Tape<double> tape;
  Var y = sepconv3d(tape, tape.leaf(x, false), tape.leaf(ws, false), Var{}, tape.leaf(wt, false),
                    Var{}, opt);
  // composition: spatial conv carries the stride, temporal conv is dense
  const Tensor<double> mid = run_conv(x, ws, opt);
  ConvOpt topt = opt;
  topt.stride = {1, 1, 1};
  CHECK(same_data(tape.value(y), run_conv(mid, wt, topt)));
  CHECK_THROWS_AS(sepconv3d(tape, tape.leaf(x, false), tape.leaf(wt, false), Var{},
                            tape.leaf(ws, false), Var{}, opt),
                  Error);  // swapped halves violate the shape contract
}

TEST_CASE("maxpool3d examples") {
  // constant input -> constant output
  Tensor<double> c(Shape{1, 4, 4, 4, 2}, 3.25);
  Tape<double> tape;
  PoolOpt p;
  p.window = {2, 2, 2};
  p.stride = {2, 2, 2};
  const Tensor<double>& y = tape.value(maxpool3d(tape, tape.leaf(c, false), p));
  for (std::int64_t i = 0; i < y.size(); ++i) CHECK(y[i] == 3.25);

  // 1D case embedded: [1,2,4,3], window 2 stride 2 -> [2,4]
  Tensor<double> x(Shape{1, 4, 1, 1, 1}, std::vector<double>{1, 2, 4, 3});
  PoolOpt p1;
  p1.window = {2, 1, 1};
  p1.stride = {2, 1, 1};
  const Tensor<double>& y1 = tape.value(maxpool3d(tape, tape.leaf(x, false), p1));
  CHECK(y1.size() == 2);
  CHECK(y1[0] == 2);
  CHECK(y1[1] == 4);

  // oversized window errors
  PoolOpt pbad;
  pbad.window = {9, 1, 1};
  pbad.stride = {1, 1, 1};
  pbad.padding = Padding::Valid;
  CHECK_THROWS_AS(maxpool3d(tape, tape.leaf(x, false), pbad), Error);
}

TEST_CASE("maxpool3d matches the naive oracle on random tensors") {
  Rng rng(9);
  for (int it = 0; it < 25; ++it) {
    const Tensor<double> x =
        random_tensor(Shape{1 + rng.below(2), 2 + rng.below(5), 2 + rng.below(5),
                            2 + rng.below(5), 1 + rng.below(3)},
                      rng);
    PoolOpt p;
    p.window = {1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(3)};
    p.stride = {1 + rng.below(2), 1 + rng.below(2), 1 + rng.below(2)};
    Tape<double> tape;
    CHECK(same_data(tape.value(maxpool3d(tape, tape.leaf(x, false), p)), naive_maxpool3d(x, p)));
  }
}

TEST_CASE("maxpool3d gradient routes to the argmax; mass preserved on non-overlapping windows") {
  Rng rng(10);
  Tensor<double> x = random_tensor(Shape{1, 4, 4, 4, 2}, rng);
  Tape<double> tape;
  Var xv = tape.leaf(x, true);
  PoolOpt p;
  p.window = {2, 2, 2};
  p.stride = {2, 2, 2};
  Var y = maxpool3d(tape, xv, p);
  Var l = sum(tape, y);
  tape.backward(l);
  const Tensor<double>& g = *tape.grad(xv);
  double mass = 0;
  for (std::int64_t i = 0; i < g.size(); ++i) {
    CHECK((g[i] == 0.0 || g[i] == 1.0));  // 0/1 routing for a sum loss
    mass += g[i];
  }
  CHECK(mass == static_cast<double>(tape.value(y).size()));  // one unit per window
}

TEST_CASE("maxpool3d tie-break picks the first element in scan order") {
  Tensor<double> x(Shape{1, 2, 1, 1, 1}, std::vector<double>{5.0, 5.0});
  Tape<double> tape;
  Var xv = tape.leaf(x, true);
  PoolOpt p;
  p.window = {2, 1, 1};
  p.stride = {2, 1, 1};
  tape.backward(sum(tape, maxpool3d(tape, xv, p)));
  CHECK((*tape.grad(xv))[0] == 1.0);
  CHECK((*tape.grad(xv))[1] == 0.0);
}

TEST_CASE("avgpool_spacetime examples and oracle") {
  Tape<double> tape;
  Tensor<double> c(Shape{2, 3, 2, 2, 4}, 1.25);
  const Tensor<double>& y = tape.value(avgpool_spacetime(tape, tape.leaf(c, false)));
  CHECK(y.shape() == Shape{2, 4});
  for (std::int64_t i = 0; i < y.size(); ++i) CHECK(y[i] == 1.25);

  Tensor<double> onehot(Shape{1, 2, 2, 2, 1});
  onehot[3] = 1.0;
  const Tensor<double>& y2 = tape.value(avgpool_spacetime(tape, tape.leaf(onehot, false)));
  CHECK(y2[0] == 0.125);

  Rng rng(11);
  Tensor<double> x = random_tensor(Shape{2, 3, 4, 5, 3}, rng);
  const Tensor<double>& y3 = tape.value(avgpool_spacetime(tape, tape.leaf(x, false)));
  const Tensor<double> want = naive_avgpool_spacetime(x);
  for (std::int64_t i = 0; i < y3.size(); ++i)
    CHECK(std::abs(y3[i] - want[i]) < 1e-12 * std::max(1.0, std::abs(want[i])));
}

TEST_CASE("batchnorm: eval identity, train statistics, epsilon on zero variance") {
  Rng rng(12);
  Tensor<double> x = random_tensor(Shape{2, 3, 4, 4, 3}, rng);
  Tensor<double> rm(Shape{3}, 0.0), rv(Shape{3}, 1.0);
  Tape<double> tape;
  Var beta = tape.leaf(Tensor<double>(Shape{3}, 0.0), false);
  Var y = batchnorm(tape, tape.leaf(x, false), Var{}, beta, rm, rv, false, 1e-3);
  for (std::int64_t i = 0; i < x.size(); ++i)
    CHECK(tape.value(y)[i] == doctest::Approx(x[i] / std::sqrt(1.001)).epsilon(1e-12));

  // train mode: output is standardized per channel
  Tensor<double> bm, bv;
  Var yt = batchnorm(tape, tape.leaf(x, false), Var{}, beta, rm, rv, true, 1e-3, &bm, &bv);
  const Tensor<double>& out = tape.value(yt);
  const std::int64_t rows = x.size() / 3;
  for (int c = 0; c < 3; ++c) {
    double mean = 0, var = 0;
    for (std::int64_t r = 0; r < rows; ++r) mean += out[r * 3 + c];
    mean /= static_cast<double>(rows);
    for (std::int64_t r = 0; r < rows; ++r) var += (out[r * 3 + c] - mean) * (out[r * 3 + c] - mean);
    var /= static_cast<double>(rows);
    CHECK(std::abs(mean) < 1e-5);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-2));  // eps shrinks it slightly
  }

  // zero variance is tamed by epsilon
  Tensor<double> flat(Shape{1, 2, 2, 2, 1}, 4.0);
  Var yz = batchnorm(tape, tape.leaf(flat, false), Var{}, tape.leaf(Tensor<double>(Shape{1}, 0.0), false),
                     rm, rv, true, 1e-3);
  for (std::int64_t i = 0; i < 8; ++i) CHECK(tape.value(yz)[i] == 0.0);
}

TEST_CASE("batchnorm gradient check (train and eval modes)") {
  Rng rng(13);
  Tensor<double> x = random_tensor(Shape{2, 2, 3, 3, 2}, rng);
  Tensor<double> beta = random_tensor(Shape{2}, rng);
  Tensor<double> gamma = random_tensor(Shape{2}, rng, 0.5, 1.5);
  Tensor<double> rm = random_tensor(Shape{2}, rng);
  Tensor<double> rv = random_tensor(Shape{2}, rng, 0.5, 2.0);
  for (bool train : {true, false}) {
    auto loss = [&]() {
      Tape<double> t;
      Var y = batchnorm(t, t.leaf(x, true), t.leaf(gamma, true), t.leaf(beta, true), rm, rv, train,
                        1e-3);
      return t.value(sum(t, mul(t, y, y)))[0];
    };
    auto grads = [&]() {
      Tape<double> t;
      Var xv = t.leaf(x, true), gv = t.leaf(gamma, true), bv = t.leaf(beta, true);
      Var y = batchnorm(t, xv, gv, bv, rm, rv, train, 1e-3);
      t.backward(sum(t, mul(t, y, y)));
      return std::vector<Tensor<double>>{*t.grad(xv), *t.grad(gv), *t.grad(bv)};
    };
    auto res = check_gradients({&x, &gamma, &beta}, loss, grads);
    CAPTURE(train);
    CHECK(res.max_rel_err < 1e-4);
  }
}

TEST_CASE("conv3d gradient check vs central differences") {
  Rng rng(14);
  Tensor<double> x = random_tensor(Shape{1, 3, 4, 4, 2}, rng);
  Tensor<double> w = random_tensor(Shape{3, 3, 3, 2, 3}, rng);
  Tensor<double> b = random_tensor(Shape{3}, rng);
  for (auto tpad : {TemporalPad::Zero, TemporalPad::Replicate}) {
    ConvOpt opt;
    opt.stride = {1, 2, 2};
    opt.tpad = tpad;
    auto loss = [&]() {
      Tape<double> t;
      Var y = conv3d(t, t.leaf(x, true), t.leaf(w, true), t.leaf(b, true), opt);
      return t.value(sum(t, mul(t, y, y)))[0];
    };
    auto grads = [&]() {
      Tape<double> t;
      Var xv = t.leaf(x, true), wv = t.leaf(w, true), bv = t.leaf(b, true);
      Var y = conv3d(t, xv, wv, bv, opt);
      t.backward(sum(t, mul(t, y, y)));
      return std::vector<Tensor<double>>{*t.grad(xv), *t.grad(wv), *t.grad(bv)};
    };
    auto res = check_gradients({&x, &w, &b}, loss, grads);
    CHECK(res.max_rel_err < 1e-4);
    CHECK(res.checked > 100);
  }
}

TEST_CASE("kt=1 convolution commutes with temporal reversal exactly") {
  Rng rng(15);
  Tensor<double> x = random_tensor(Shape{1, 6, 5, 5, 2}, rng);
  Tensor<double> w = random_tensor(Shape{1, 3, 3, 2, 3}, rng);
  ConvOpt opt;
  const Tensor<double> a = run_conv(reverse_time_tensor(x), w, opt);
  const Tensor<double> b = reverse_time_tensor(run_conv(x, w, opt));
  CHECK(same_data(a, b));
}

TEST_CASE("temporally symmetric kt=3 weights commute with reversal; asymmetric do not") {
  Rng rng(16);
  Tensor<double> x = random_tensor(Shape{1, 6, 4, 4, 2}, rng);
  Tensor<double> w = random_tensor(Shape{3, 3, 3, 2, 2}, rng);
  const std::int64_t slice = w.size() / 3;
  ConvOpt opt;
  opt.tpad = TemporalPad::Replicate;

  // symmetrize: W[0] == W[2]. Equality is exact up to summation order (the
  // reversed pass accumulates the temporal taps in the opposite order).
  Tensor<double> wsym = w.clone();
  for (std::int64_t i = 0; i < slice; ++i) wsym[2 * slice + i] = wsym[i];
  CHECK(max_abs_diff(run_conv(reverse_time_tensor(x), wsym, opt),
                     reverse_time_tensor(run_conv(x, wsym, opt))) < 1e-14);

  // asymmetric counterexample: W[0] != W[2]
  Tensor<double> wasym = w.clone();
  wasym[0] += 1.0;
  CHECK(max_abs_diff(run_conv(reverse_time_tensor(x), wasym, opt),
                     reverse_time_tensor(run_conv(x, wasym, opt))) > 1e-6);
}

TEST_CASE("replicate temporal padding keeps a constant clip constant") {
  Rng rng(17);
  Tensor<double> frame = random_tensor(Shape{1, 1, 5, 5, 2}, rng);
  Tensor<double> clip(Shape{1, 4, 5, 5, 2});
  for (int f = 0; f < 4; ++f)
    std::copy(frame.data(), frame.data() + frame.size(), clip.data() + f * frame.size());
  Tensor<double> w = random_tensor(Shape{3, 3, 3, 2, 3}, rng);
  ConvOpt opt;
  opt.tpad = TemporalPad::Replicate;
  const Tensor<double> y = run_conv(clip, w, opt);
  const std::int64_t fs = y.size() / 4;
  for (int f = 1; f < 4; ++f)
    for (std::int64_t i = 0; i < fs; ++i)
      CHECK(y[f * fs + i] == doctest::Approx(y[i]).epsilon(1e-12));
}

TEST_SUITE_END();
