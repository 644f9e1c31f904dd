// Copyright 2025-2026 The zssl Authors
//
// Licensed under the Apache License, Version 2.0

#include <cmath>

#include "doctest.h"
#include "grad_check.hpp"
#include "zssl/tensor.hpp"

using zssl::Shape;
using zssl::Tape;
using zssl::Tensor;
using zssl::testing::max_rel_grad_error;

namespace {
constexpr double kGradTol = 1e-4;
}

TEST_CASE("factories and shape accessors") {
  Tensor z = Tensor::zeros({2, 3});
  CHECK(z.rank() == 2);
  CHECK(z.rows() == 2);
  CHECK(z.cols() == 3);
  CHECK(z.numel() == 6);
  for (double v : z.value()) CHECK(v == 0.0);

  Tensor f = Tensor::full({4}, 2.5);
  for (double v : f.value()) CHECK(v == 2.5);

  Tensor s = Tensor::scalar(-1.25);
  CHECK(s.rank() == 0);
  CHECK(s.item() == -1.25);

  CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0, 2.0, 3.0}), zssl::ShapeError);
  CHECK_THROWS_AS(z.item(), zssl::ShapeError);
}

TEST_CASE("copying a tensor aliases storage, clone does not") {
  Tensor a = Tensor::full({3}, 1.0);
  Tensor alias = a;
  alias.data()[0] = 9.0;
  CHECK(a.value()[0] == 9.0);
  Tensor deep = a.clone();
  deep.data()[1] = 7.0;
  CHECK(a.value()[1] == 1.0);
  CHECK(a.same_data(alias));
  CHECK(!a.same_data(deep));
}

TEST_CASE("matmul forward matches hand computation") {
  Tape tape;
  Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b = Tensor::from({3, 2}, {7, 8, 9, 10, 11, 12});
  Tensor c = tape.matmul(a, b);
  CHECK(c.rows() == 2);
  CHECK(c.cols() == 2);
  CHECK(c.value()[0] == doctest::Approx(58.0));
  CHECK(c.value()[1] == doctest::Approx(64.0));
  CHECK(c.value()[2] == doctest::Approx(139.0));
  CHECK(c.value()[3] == doctest::Approx(154.0));
  CHECK_THROWS_WITH_AS(tape.matmul(a, a), doctest::Contains("[2,3]"),
                       zssl::ShapeError);
}

TEST_CASE("matmul FLOP counter is 2*M*N*K") {
  Tape tape;
  Tensor a = Tensor::zeros({3, 5});
  Tensor b = Tensor::zeros({5, 7});
  tape.matmul(a, b);
  CHECK(tape.op_count("matmul") == 1);
  CHECK(tape.flops() == 2ULL * 3 * 7 * 5);
}

TEST_CASE("category scope attributes flops to the active category") {
  Tape tape;
  Tensor a = Tensor::zeros({2, 2});
  {
    Tape::CategoryScope scope(tape, "attention");
    tape.matmul(a, a);
  }
  tape.matmul(a, a);
  CHECK(tape.flops_in("attention") == 2ULL * 2 * 2 * 2);
  CHECK(tape.flops() == 2ULL * 2ULL * 2 * 2 * 2);
  CHECK(tape.flops_in("absent") == 0);
}

TEST_CASE("backward accumulates and only visits ancestors of the loss") {
  Tape tape;
  Tensor x = Tensor::from({2}, {3.0, -1.0}, true);
  Tensor y = Tensor::from({2}, {0.5, 2.0}, true);
  Tensor unrelated = Tensor::from({2}, {1.0, 1.0}, true);
  Tensor branch = tape.mul(unrelated, unrelated);  // on tape, not an ancestor
  Tensor loss = tape.sum(tape.mul(x, y));
  tape.backward(loss);
  REQUIRE(x.has_grad());
  CHECK(x.grad()[0] == doctest::Approx(0.5));
  CHECK(x.grad()[1] == doctest::Approx(2.0));
  CHECK(y.grad()[0] == doctest::Approx(3.0));
  CHECK(y.grad()[1] == doctest::Approx(-1.0));
  CHECK(!unrelated.has_grad());
  CHECK(!branch.has_grad());
}

TEST_CASE("backward requires a scalar recorded on this tape") {
  Tape tape;
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  CHECK_THROWS_AS(tape.backward(x), zssl::ContractError);
  Tensor foreign = Tensor::scalar(1.0, true);
  CHECK_THROWS_AS(tape.backward(foreign), zssl::ContractError);
}

TEST_CASE("grad disabled tape records nothing") {
  Tape tape;
  tape.set_grad_enabled(false);
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  Tensor y = tape.sum(tape.tanh(x));
  CHECK(!y.requires_grad());
  CHECK(tape.node_count() == 0);
}

TEST_CASE("gradients of arithmetic primitives") {
  std::mt19937_64 rng(7);
  Tensor a = Tensor::randn({3, 4}, rng);
  Tensor b = Tensor::randn({3, 4}, rng);
  Tensor m = Tensor::randn({4, 2}, rng);
  Tensor bias = Tensor::randn({4}, rng);

  auto weigh = [](Tape &t, const Tensor &x) {
    // Mix coordinates unevenly so symmetric errors cannot cancel.
    Tensor w = Tensor::zeros(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) {
      w.data()[i] = 0.25 + 0.5 * static_cast<double>(i % 5);
    }
    return t.sum(t.mul(x, w));
  };

  CHECK(max_rel_grad_error([&](Tape &t, const std::vector<Tensor> &in) {
          return weigh(t, t.add(in[0], in[1]));
        }, {a, b}) < kGradTol);
  CHECK(max_rel_grad_error([&](Tape &t, const std::vector<Tensor> &in) {
          return weigh(t, t.sub(in[0], in[1]));
        }, {a, b}) < kGradTol);
  CHECK(max_rel_grad_error([&](Tape &t, const std::vector<Tensor> &in) {
          return weigh(t, t.mul(in[0], in[1]));
        }, {a, b}) < kGradTol);
  CHECK(max_rel_grad_error([&](Tape &t, const std::vector<Tensor> &in) {
          return weigh(t, t.scale(in[0], -1.7));
        }, {a}) < kGradTol);
  CHECK(max_rel_grad_error([&](Tape &t, const std::vector<Tensor> &in) {
          return weigh(t, t.add_bias(in[0], in[1]));
        }, {a, bias}) < kGradTol);
  CHECK(max_rel_grad_error([&](Tape &t, const std::vector<Tensor> &in) {
          return weigh(t, t.matmul(in[0], in[1]));
        }, {a, m}) < kGradTol);
  CHECK(max_rel_grad_error([&](Tape &t, const std::vector<Tensor> &in) {
          return weigh(t, t.transpose(in[0]));
        }, {a}) < kGradTol);
  CHECK(max_rel_grad_error([&](Tape &t, const std::vector<Tensor> &in) {
          return weigh(t, t.tanh(in[0]));
        }, {a}) < kGradTol);
  CHECK(max_rel_grad_error([&](Tape &t, const std::vector<Tensor> &in) {
          return t.sum(in[0]);
        }, {a}) < kGradTol);
  CHECK(max_rel_grad_error([&](Tape &t, const std::vector<Tensor> &in) {
          return t.mean(in[0]);
        }, {a}) < kGradTol);
}

TEST_CASE("gradients of slicing and concatenation") {
  std::mt19937_64 rng(11);
  Tensor a = Tensor::randn({4, 3}, rng);
  Tensor b = Tensor::randn({2, 3}, rng);
  Tensor c = Tensor::randn({4, 2}, rng);

  auto weigh = [](Tape &t, const Tensor &x) {
    Tensor w = Tensor::zeros(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) {
      w.data()[i] = 1.0 + 0.3 * static_cast<double>(i % 4);
    }
    return t.sum(t.mul(x, w));
  };

  CHECK(max_rel_grad_error([&](Tape &t, const std::vector<Tensor> &in) {
          return weigh(t, t.take_rows(in[0], 1, 2));
        }, {a}) < kGradTol);
  CHECK(max_rel_grad_error([&](Tape &t, const std::vector<Tensor> &in) {
          return weigh(t, t.take_cols(in[0], 0, 2));
        }, {a}) < kGradTol);
  CHECK(max_rel_grad_error([&](Tape &t, const std::vector<Tensor> &in) {
          return weigh(t, t.concat_rows({in[0], in[1]}));
        }, {a, b}) < kGradTol);
  CHECK(max_rel_grad_error([&](Tape &t, const std::vector<Tensor> &in) {
          return weigh(t, t.concat_cols({in[0], in[1]}));
        }, {a, c}) < kGradTol);
}

TEST_CASE("take_rows rejects out-of-range slices") {
  Tape tape;
  Tensor a = Tensor::zeros({4, 3});
  CHECK_THROWS_AS(tape.take_rows(a, 3, 2), zssl::ShapeError);
  CHECK_THROWS_AS(tape.take_cols(a, -1, 2), zssl::ShapeError);
}

TEST_CASE("seed mixing is deterministic and order-sensitive") {
  CHECK(zssl::mix_seed(1, 2) == zssl::mix_seed(1, 2));
  CHECK(zssl::mix_seed(1, 2) != zssl::mix_seed(2, 1));
  CHECK(zssl::hash_string("abc") == zssl::hash_string("abc"));
  CHECK(zssl::hash_string("abc") != zssl::hash_string("abd"));
}
