// Copyright 2025-2026 The zssl Authors
//
// Licensed under the Apache License, Version 2.0

#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "grad_check.hpp"
#include "zssl/asr.hpp"

using namespace zssl;

namespace {

// Independent oracle: enumerate every length-T frame path, collapse it
// (merge repeats, then drop blanks), and sum the probabilities of paths
// that collapse to the target.
double enumerate_ctc_log_prob(const Tensor &log_probs,
                              const LabelSequence &target) {
  const int64_t t_len = log_probs.rows();
  const int64_t vocab = log_probs.cols();
  const std::span<const double> lp = log_probs.value();
  double total = 0.0;
  std::vector<int64_t> path(static_cast<size_t>(t_len), 0);
  while (true) {
    LabelSequence collapsed;
    int64_t prev = -1;
    double log_path = 0.0;
    for (int64_t t = 0; t < t_len; ++t) {
      const int64_t k = path[static_cast<size_t>(t)];
      log_path += lp[static_cast<size_t>(t * vocab + k)];
      if (k != prev && k != kBlankIndex) collapsed.push_back(k);
      prev = k;
    }
    if (collapsed == target) total += std::exp(log_path);
    // Next path in odometer order.
    int64_t pos = t_len - 1;
    while (pos >= 0 && path[static_cast<size_t>(pos)] == vocab - 1) {
      path[static_cast<size_t>(pos)] = 0;
      --pos;
    }
    if (pos < 0) break;
    ++path[static_cast<size_t>(pos)];
  }
  return std::log(total);
}

Tensor random_log_probs(int64_t t, int64_t v, uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tape quiet;
  quiet.set_grad_enabled(false);
  return quiet.log_softmax(Tensor::randn({t, v}, rng));
}

}  // namespace

TEST_CASE("vocabulary maps letters, space, and apostrophe") {
  CHECK(kVocabSize == 29);
  CHECK(kBlankIndex == 0);
  CHECK(vocab_index('a') == 1);
  CHECK(vocab_index('z') == 26);
  CHECK(vocab_index(' ') == 27);
  CHECK(vocab_index('\'') == 28);
  CHECK(vocab_index('Q') == vocab_index('q'));  // case folds
  CHECK_THROWS_AS(vocab_index('3'), ParseError);
  CHECK_THROWS_AS(vocab_index('.'), ParseError);
  CHECK_THROWS_AS(vocab_char(kBlankIndex), ContractError);
  CHECK_THROWS_AS(vocab_char(29), ContractError);
  for (int64_t i = 1; i < kVocabSize; ++i) {
    CHECK(vocab_index(vocab_char(i)) == i);
  }
  const std::string text = "don't stop";
  CHECK(labels_to_text(text_to_labels(text)) == text);
}

TEST_CASE("single-frame single-symbol loss is the symbol's log-prob") {
  // One frame, target one symbol: the only alignment emits that symbol.
  const Tensor lp = Tensor::full({1, 3}, std::log(1.0 / 3.0));
  Tape tape;
  const CtcResult r = ctc_loss(tape, lp, {1});
  CHECK(r.feasible);
  CHECK(r.loss.item() == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("two frames over blank and one symbol count three of four paths") {
  const Tensor lp = Tensor::full({2, 2}, std::log(0.5));
  Tape tape;
  const CtcResult r = ctc_loss(tape, lp, {1});
  CHECK(r.feasible);
  CHECK(r.loss.item() == doctest::Approx(-std::log(0.75)).epsilon(1e-12));
}

TEST_CASE("empty target sums only the all-blank path") {
  const Tensor lp = random_log_probs(4, 3, 5);
  Tape tape;
  const CtcResult r = ctc_loss(tape, lp, {});
  double blank_sum = 0.0;
  for (int64_t t = 0; t < 4; ++t) {
    blank_sum += lp.value()[static_cast<size_t>(t * 3)];
  }
  CHECK(r.loss.item() == doctest::Approx(-blank_sum).epsilon(1e-12));
}

TEST_CASE("recursion matches exhaustive path enumeration") {
  uint64_t seed = 100;
  for (int64_t t_len = 1; t_len <= 4; ++t_len) {
    for (int64_t vocab = 2; vocab <= 3; ++vocab) {
      const Tensor lp = random_log_probs(t_len, vocab, seed++);
      std::vector<LabelSequence> targets = {{}, {1}, {1, 1}};
      if (vocab > 2) {
        targets.push_back({2});
        targets.push_back({1, 2});
        targets.push_back({2, 1});
      }
      for (const LabelSequence &target : targets) {
        Tape tape;
        const CtcResult r = ctc_loss(tape, lp, target);
        const double oracle = enumerate_ctc_log_prob(lp, target);
        if (std::isinf(oracle)) {
          CHECK_FALSE(r.feasible);
        } else {
          REQUIRE(r.feasible);
          CHECK(r.loss.item() == doctest::Approx(-oracle).epsilon(1e-10));
        }
      }
    }
  }
}

TEST_CASE("targets needing more frames than available are infeasible") {
  const Tensor lp = random_log_probs(2, 3, 9);
  Tape tape;
  SUBCASE("too many symbols") {
    const CtcResult r = ctc_loss(tape, lp, {1, 2, 1});
    CHECK_FALSE(r.feasible);
    CHECK(std::isinf(r.loss.item()));
    CHECK(r.loss.item() > 0);
  }
  SUBCASE("adjacent repeat needs a separating blank") {
    const CtcResult r = ctc_loss(tape, lp, {1, 1});
    CHECK_FALSE(r.feasible);
  }
  SUBCASE("infeasible results record nothing on the tape") {
    const size_t before = tape.node_count();
    Tensor tracked = lp.clone();
    tracked.set_requires_grad(true);
    ctc_loss(tape, tracked, {1, 2, 1});
    CHECK(tape.node_count() == before);
  }
}

TEST_CASE("loss validates shapes and target symbols") {
  Tape tape;
  const Tensor lp = random_log_probs(3, 3, 2);
  CHECK_THROWS_AS(ctc_loss(tape, Tensor::zeros({4}), {1}), ShapeError);
  CHECK_THROWS_AS(ctc_loss(tape, lp, {0}), ContractError);
  CHECK_THROWS_AS(ctc_loss(tape, lp, {3}), ContractError);
  CHECK_THROWS_AS(ctc_loss(tape, Tensor::zeros({3, 1}), {}), ShapeError);
}

TEST_CASE("loss gradient matches finite differences") {
  std::mt19937_64 rng(31);
  const Tensor lp = Tensor::randn({5, 4}, rng);  // raw scores work too
  const LabelSequence target = {1, 2, 1};
  const double err = zssl::testing::max_rel_grad_error(
      [&](Tape &tape, const std::vector<Tensor> &inputs) {
        return ctc_loss(tape, inputs[0], target).loss;
      },
      {lp});
  CHECK(err < 1e-4);
}

TEST_CASE("gradient rows are occupancy posteriors summing to minus one") {
  const Tensor lp = random_log_probs(6, 4, 77);
  Tensor tracked = lp.clone();
  tracked.set_requires_grad(true);
  Tape tape;
  const CtcResult r = ctc_loss(tape, tracked, {2, 3});
  tape.backward(r.loss);
  REQUIRE(tracked.has_grad());
  for (int64_t t = 0; t < 6; ++t) {
    double row = 0.0;
    for (int64_t k = 0; k < 4; ++k) {
      row += tracked.grad()[static_cast<size_t>(t * 4 + k)];
    }
    CHECK(row == doctest::Approx(-1.0).epsilon(1e-10));
  }
}

TEST_CASE("loss composes with downstream tape operations") {
  const Tensor lp = random_log_probs(4, 3, 13);
  Tensor a = lp.clone(), b = lp.clone();
  a.set_requires_grad(true);
  b.set_requires_grad(true);

  Tape t1;
  t1.backward(ctc_loss(t1, a, {1, 2}).loss);
  Tape t2;
  t2.backward(t2.scale(ctc_loss(t2, b, {1, 2}).loss, 2.0));

  for (int64_t i = 0; i < lp.numel(); ++i) {
    CHECK(b.grad()[static_cast<size_t>(i)] ==
          doctest::Approx(2.0 * a.grad()[static_cast<size_t>(i)])
              .epsilon(1e-12));
  }
}

TEST_CASE("greedy decode collapses repeats and drops blanks") {
  // Rows peak at the listed symbols: blank, blank.
  const auto peaked = [](const std::vector<int64_t> &argmaxes, int64_t vocab) {
    Tensor lp = Tensor::full({static_cast<int64_t>(argmaxes.size()), vocab},
                             std::log(0.05));
    for (size_t t = 0; t < argmaxes.size(); ++t) {
      lp.value()[t * static_cast<size_t>(vocab) +
                 static_cast<size_t>(argmaxes[t])] = std::log(0.9);
    }
    return lp;
  };
  CHECK(ctc_greedy(peaked({0, 0}, 3)).empty());
  CHECK(ctc_greedy(peaked({1, 1, 0, 1}, 3)) == LabelSequence{1, 1});
  CHECK(ctc_greedy(peaked({1, 2}, 3)) == LabelSequence{1, 2});
  CHECK(ctc_greedy(peaked({0, 1, 1, 0, 2, 2, 0}, 3)) == LabelSequence{1, 2});
  CHECK_THROWS_AS(ctc_greedy(Tensor::zeros({4})), ShapeError);
}

TEST_CASE("greedy argmax ties resolve to the lowest index") {
  const Tensor lp = Tensor::full({1, 4}, std::log(0.25));
  CHECK(ctc_greedy(lp).empty());  // blank is index 0 and wins the tie
}
