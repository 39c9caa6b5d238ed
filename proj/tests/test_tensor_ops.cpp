// Copyright 2026 The stcnn Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "stcnn/ops.hpp"
#include "test_helpers.hpp"

using namespace stcnn;
using stcnn_test::check_gradients;
using stcnn_test::random_tensor;

TEST_SUITE_BEGIN("tensor-core");

TEST_CASE("tensor invariants") {
  Tensor<double> t(Shape{2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(numel(t.shape()) == t.size());
  CHECK_THROWS_AS(Tensor<double>(Shape{2, 0}), Error);
  CHECK_THROWS_AS(t.reshaped(Shape{4}), Error);
}

TEST_CASE("elementwise mul: scalar broadcast and identity") {
  Tape<double> tape;
  Var a = tape.leaf(Tensor<double>(Shape{2, 2}, 3.0), false);
  Var out = mul_scalar(tape, a, 2.0);
  for (std::int64_t i = 0; i < 4; ++i) CHECK(tape.value(out)[i] == 6.0);

  Rng rng(7);
  Tensor<double> xv = random_tensor(Shape{3, 4}, rng);
  Var x = tape.leaf(xv, false);
  Var ones = tape.leaf(Tensor<double>(Shape{3, 4}, 1.0), false);
  Var y = mul(tape, x, ones);
  CHECK(same_data(tape.value(y), xv));
}

TEST_CASE("elementwise shape errors name both shapes") {
  Tape<double> tape;
  Var a = tape.leaf(Tensor<double>(Shape{2, 3}), false);
  Var b = tape.leaf(Tensor<double>(Shape{4}), false);
  CHECK_THROWS_WITH_AS(mul(tape, a, b), doctest::Contains("[2,3]"), Error);
}

TEST_CASE("grad of sum(a*b) wrt a equals b (finite differences)") {
  Rng rng(11);
  Tensor<double> av = random_tensor(Shape{3, 2}, rng);
  Tensor<double> bv = random_tensor(Shape{3, 2}, rng);
  auto loss = [&]() {
    Tape<double> tape;
    Var a = tape.leaf(av, true);
    Var b = tape.leaf(bv, false);
    return tape.value(sum(tape, mul(tape, a, b)))[0];
  };
  auto grads = [&]() {
    Tape<double> tape;
    Var a = tape.leaf(av, true);
    Var b = tape.leaf(bv, false);
    Var l = sum(tape, mul(tape, a, b));
    tape.backward(l);
    return std::vector<Tensor<double>>{*tape.grad(a)};
  };
  auto res = check_gradients({&av}, loss, grads);
  CHECK(res.max_rel_err < 1e-6);
  // and analytically: grad(a) == b exactly
  const Tensor<double> g = grads()[0];
  CHECK(same_data(g, bv));
}

TEST_CASE("broadcast gradients reduce-sum back and preserve gradient mass") {
  Rng rng(3);
  Tensor<double> av = random_tensor(Shape{2, 3, 4}, rng);
  Tensor<double> bv = random_tensor(Shape{1, 3, 1}, rng);  // broadcast over dims 0 and 2
  Tape<double> tape;
  Var a = tape.leaf(av, true);
  Var b = tape.leaf(bv, true);
  Var l = sum(tape, add(tape, a, b));
  tape.backward(l);
  const Tensor<double>& gb = *tape.grad(b);
  CHECK(gb.shape() == bv.shape());
  // d(sum)/d(b_j) counts every broadcast use: total mass equals out elements.
  CHECK(gb.sum() == 24.0);
  CHECK(tape.grad(a)->sum() == 24.0);
}

TEST_CASE("matmul_vec examples") {
  Tape<double> tape;
  Tensor<double> I(Shape{3, 3});
  for (int i = 0; i < 3; ++i) I[i * 3 + i] = 1.0;
  Var w = tape.leaf(I, false);
  Var x = tape.leaf(Tensor<double>(Shape{3}, std::vector<double>{1, 2, 3}), false);
  Var b0 = tape.leaf(Tensor<double>(Shape{3}, 0.0), false);
  Var y = matmul_vec(tape, w, x, b0);
  CHECK(same_data(tape.value(y), tape.value(x)));

  Var wz = tape.leaf(Tensor<double>(Shape{2, 2}, 0.0), false);
  Var x2 = tape.leaf(Tensor<double>(Shape{2}, std::vector<double>{9, -4}), false);
  Var b5 = tape.leaf(Tensor<double>(Shape{2}, 5.0), false);
  Var y2 = matmul_vec(tape, wz, x2, b5);
  CHECK(tape.value(y2)[0] == 5.0);
  CHECK(tape.value(y2)[1] == 5.0);

  Var bad = tape.leaf(Tensor<double>(Shape{3}), false);
  CHECK_THROWS_AS(matmul_vec(tape, wz, bad, b5), Error);
}

TEST_CASE("matmul_vec random 8x8 vs naive triple loop, exact") {
  Rng rng(5);
  Tensor<double> W = random_tensor(Shape{8, 8}, rng);
  Tensor<double> x = random_tensor(Shape{8}, rng);
  Tensor<double> b = random_tensor(Shape{8}, rng);
  Tape<double> tape;
  Var y = matmul_vec(tape, tape.leaf(W, false), tape.leaf(x, false), tape.leaf(b, false));
  for (int i = 0; i < 8; ++i) {
    double acc = b[i];
    for (int j = 0; j < 8; ++j) acc += W[i * 8 + j] * x[j];
    CHECK(tape.value(y)[i] == acc);
  }
}

TEST_CASE("backward basics: sum and quadratic") {
  Rng rng(13);
  Tensor<double> xv = random_tensor(Shape{4, 3}, rng);
  {
    Tape<double> tape;
    Var x = tape.leaf(xv, true);
    Var l = sum(tape, x);
    tape.backward(l);
    for (std::int64_t i = 0; i < xv.size(); ++i) CHECK((*tape.grad(x))[i] == 1.0);
  }
  {
    Tape<double> tape;
    Var x = tape.leaf(xv, true);
    Var l = sum(tape, mul(tape, x, x));
    tape.backward(l);
    for (std::int64_t i = 0; i < xv.size(); ++i)
      CHECK((*tape.grad(x))[i] == doctest::Approx(2 * xv[i]).epsilon(1e-15));
  }
}

TEST_CASE("backward requires a scalar loss and skips detached tensors") {
  Tape<double> tape;
  Var x = tape.leaf(Tensor<double>(Shape{2, 2}, 1.0), true);
  Var detached = tape.leaf(Tensor<double>(Shape{2, 2}, 2.0), false);
  Var y = mul(tape, x, detached);
  CHECK_THROWS_AS(tape.backward(y), Error);  // non-scalar
  Var l = sum(tape, y);
  tape.backward(l);
  CHECK(tape.grad(x) != nullptr);
  CHECK(tape.grad(detached) == nullptr);
}

TEST_CASE("fan-out accumulates additively") {
  Tape<double> tape;
  Var x = tape.leaf(Tensor<double>(Shape{3}, 2.0), true);
  Var l = sum(tape, add(tape, x, x));  // loss = 2*sum(x)
  tape.backward(l);
  for (int i = 0; i < 3; ++i) CHECK((*tape.grad(x))[i] == 2.0);
}

TEST_CASE("activations: sigmoid, softmax, cross-entropy") {
  Tape<double> tape;
  Var z = tape.leaf(Tensor<double>::scalar(0.0), false);
  CHECK(tape.value(sigmoid(tape, z))[0] == 0.5);

  Var logits = tape.leaf(Tensor<double>(Shape{1, 4}, 1.7), false);
  const Tensor<double>& sm = tape.value(softmax(tape, logits));
  for (int i = 0; i < 4; ++i) CHECK(sm[i] == doctest::Approx(0.25).epsilon(1e-12));

  // cross-entropy gradient is softmax - onehot (per-row, averaged over batch)
  Rng rng(17);
  Tensor<double> lv = random_tensor(Shape{3, 5}, rng);
  std::vector<int> labels{1, 4, 0};
  Tape<double> t2;
  Var l2 = t2.leaf(lv, true);
  Var loss = cross_entropy(t2, l2, labels);
  t2.backward(loss);
  Var probsv = softmax(t2, t2.leaf(lv, false));
  const Tensor<double>& probs = t2.value(probsv);
  for (std::int64_t r = 0; r < 3; ++r)
    for (std::int64_t j = 0; j < 5; ++j) {
      const double want = (probs[r * 5 + j] - (labels[static_cast<std::size_t>(r)] == j ? 1 : 0)) / 3.0;
      CHECK((*t2.grad(l2))[r * 5 + j] == doctest::Approx(want).epsilon(1e-10));
    }

  // and by finite differences
  auto loss_fn = [&]() {
    Tape<double> t3;
    return t3.value(cross_entropy(t3, t3.leaf(lv, true), labels))[0];
  };
  auto grads_fn = [&]() {
    Tape<double> t3;
    Var v = t3.leaf(lv, true);
    t3.backward(cross_entropy(t3, v, labels));
    return std::vector<Tensor<double>>{*t3.grad(v)};
  };
  CHECK(check_gradients({&lv}, loss_fn, grads_fn).max_rel_err < 1e-6);
}

TEST_CASE("cross-entropy is max-subtraction stable") {
  Tape<double> tape;
  Tensor<double> big(Shape{1, 3}, std::vector<double>{1e4, 1e4 - 5, 0});
  Var loss = cross_entropy(tape, tape.leaf(big, false), {0});
  CHECK(std::isfinite(tape.value(loss)[0]));
  CHECK(tape.value(loss)[0] == doctest::Approx(std::log(1 + std::exp(-5.0))).epsilon(1e-9));
}

TEST_CASE("seeded forward+backward is bit-identical across runs") {
  auto run = [&]() {
    Rng rng(99);
    Tensor<double> xv = random_tensor(Shape{2, 5}, rng);
    Tensor<double> wv = random_tensor(Shape{5, 5}, rng);
    Tape<double> tape;
    Var x = tape.leaf(xv, true);
    Var w = tape.leaf(wv, true);
    Var l = sum(tape, sigmoid(tape, mul(tape, x, reshape(tape, sum(tape, w), Shape{1}))));
    tape.backward(l);
    std::vector<double> out;
    out.push_back(tape.value(l)[0]);
    for (std::int64_t i = 0; i < xv.size(); ++i) out.push_back((*tape.grad(x))[i]);
    for (std::int64_t i = 0; i < wv.size(); ++i) out.push_back((*tape.grad(w))[i]);
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("reverse_time flips and round-trips") {
  Rng rng(23);
  Tensor<double> xv = random_tensor(Shape{1, 4, 2, 2, 3}, rng);
  Tensor<double> r = reverse_time_tensor(xv);
  CHECK(r[0] == xv[(0 * 4 + 3) * 12]);
  CHECK(same_data(reverse_time_tensor(r), xv));
  Tape<double> tape;
  Var x = tape.leaf(xv, true);
  Var l = sum(tape, mul(tape, reverse_time(tape, x), reverse_time(tape, x)));
  tape.backward(l);
  for (std::int64_t i = 0; i < xv.size(); ++i)
    CHECK((*tape.grad(x))[i] == doctest::Approx(2 * xv[i]).epsilon(1e-15));
}

TEST_SUITE_END();
