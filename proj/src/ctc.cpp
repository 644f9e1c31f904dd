// Copyright 2025-2026 The zssl Authors
//
// Licensed under the Apache License, Version 2.0

#include <algorithm>
#include <cmath>
#include <limits>

#include "zssl/asr.hpp"

namespace zssl {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double logaddexp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

}  // namespace

int64_t vocab_index(char c) {
  if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  if (c >= 'a' && c <= 'z') return 1 + (c - 'a');
  if (c == ' ') return 27;
  if (c == '\'') return 28;
  throw ParseError(std::string("character '") + c + "' is outside the vocabulary");
}

char vocab_char(int64_t index) {
  if (index >= 1 && index <= 26) return static_cast<char>('a' + (index - 1));
  if (index == 27) return ' ';
  if (index == 28) return '\'';
  throw ContractError("no character for vocabulary index " +
                      std::to_string(index));
}

LabelSequence text_to_labels(const std::string &text) {
  LabelSequence labels;
  labels.reserve(text.size());
  for (char c : text) labels.push_back(vocab_index(c));
  return labels;
}

std::string labels_to_text(const LabelSequence &labels) {
  std::string text;
  text.reserve(labels.size());
  for (int64_t id : labels) text.push_back(vocab_char(id));
  return text;
}

CtcResult ctc_loss(Tape &tape, const Tensor &log_probs,
                   const LabelSequence &target) {
  if (log_probs.rank() != 2) {
    throw ShapeError("ctc_loss: log_probs must be [T, V], got " +
                     shape_str(log_probs.shape()));
  }
  const int64_t t_len = log_probs.rows();
  const int64_t vocab = log_probs.cols();
  if (vocab < 2) throw ShapeError("ctc_loss: vocabulary must include blank");
  int64_t repeats = 0;
  for (size_t i = 0; i < target.size(); ++i) {
    if (target[i] < 1 || target[i] >= vocab) {
      throw ContractError("ctc_loss: target symbol " +
                          std::to_string(target[i]) + " outside [1, " +
                          std::to_string(vocab - 1) + "]");
    }
    if (i > 0 && target[i] == target[i - 1]) ++repeats;
  }
  const int64_t min_frames = static_cast<int64_t>(target.size()) + repeats;
  if (t_len < min_frames) {
    return CtcResult{
        Tensor::scalar(std::numeric_limits<double>::infinity()), false};
  }

  // States walk the blank-interleaved target: even states are blanks, odd
  // states target symbols.
  const int64_t s_len = 2 * static_cast<int64_t>(target.size()) + 1;
  const auto state_label = [&](int64_t s) {
    return (s % 2 == 0) ? kBlankIndex : target[static_cast<size_t>(s / 2)];
  };
  const auto can_skip = [&](int64_t s) {
    // A state may inherit from s-2 unless it is a blank or repeats the
    // symbol two states back.
    return s % 2 == 1 && s >= 2 &&
           (s < 3 || target[static_cast<size_t>(s / 2)] !=
                         target[static_cast<size_t>(s / 2 - 1)]);
  };

  const std::span<const double> lp = log_probs.value();
  const auto lp_at = [&](int64_t t, int64_t k) {
    return lp[static_cast<size_t>(t * vocab + k)];
  };

  // Forward pass in the log semiring.
  std::vector<double> alpha(static_cast<size_t>(t_len * s_len), kNegInf);
  const auto a_at = [&](int64_t t, int64_t s) -> double & {
    return alpha[static_cast<size_t>(t * s_len + s)];
  };
  a_at(0, 0) = lp_at(0, kBlankIndex);
  if (s_len > 1) a_at(0, 1) = lp_at(0, state_label(1));
  for (int64_t t = 1; t < t_len; ++t) {
    for (int64_t s = 0; s < s_len; ++s) {
      double acc = a_at(t - 1, s);
      if (s >= 1) acc = logaddexp(acc, a_at(t - 1, s - 1));
      if (can_skip(s)) acc = logaddexp(acc, a_at(t - 1, s - 2));
      if (acc != kNegInf) a_at(t, s) = acc + lp_at(t, state_label(s));
    }
  }
  double log_p = a_at(t_len - 1, s_len - 1);
  if (s_len > 1) log_p = logaddexp(log_p, a_at(t_len - 1, s_len - 2));
  if (log_p == kNegInf) {
    // Unreachable given the feasibility check unless log_probs held -inf.
    return CtcResult{
        Tensor::scalar(std::numeric_limits<double>::infinity()), false};
  }

  Tensor loss = Tensor::scalar(-log_p);
  tape.count_op("ctc_loss");
  if (tape.tracking({log_probs})) {
    loss.set_requires_grad(true);
    Tensor out = loss;
    LabelSequence tgt = target;
    std::vector<double> saved_alpha = alpha;
    tape.record_node(
        "ctc_loss", {log_probs}, out,
        [out, log_probs, tgt, saved_alpha, t_len, s_len, vocab, log_p]() {
          if (!out.has_grad()) return;
          const double g = out.grad()[0];
          if (g == 0.0) return;
          const auto lab = [&](int64_t s) {
            return (s % 2 == 0) ? kBlankIndex : tgt[static_cast<size_t>(s / 2)];
          };
          const auto skip_ok = [&](int64_t s) {
            return s % 2 == 1 && s >= 2 &&
                   (s < 3 || tgt[static_cast<size_t>(s / 2)] !=
                                 tgt[static_cast<size_t>(s / 2 - 1)]);
          };
          const std::span<const double> lpv = log_probs.value();
          const auto lp2 = [&](int64_t t, int64_t k) {
            return lpv[static_cast<size_t>(t * vocab + k)];
          };
          const auto a2 = [&](int64_t t, int64_t s) {
            return saved_alpha[static_cast<size_t>(t * s_len + s)];
          };
          // Backward pass: beta excludes the emission at its own frame.
          std::vector<double> beta(static_cast<size_t>(t_len * s_len), kNegInf);
          const auto b_at = [&](int64_t t, int64_t s) -> double & {
            return beta[static_cast<size_t>(t * s_len + s)];
          };
          b_at(t_len - 1, s_len - 1) = 0.0;
          if (s_len > 1) b_at(t_len - 1, s_len - 2) = 0.0;
          for (int64_t t = t_len - 2; t >= 0; --t) {
            for (int64_t s = 0; s < s_len; ++s) {
              double acc = b_at(t + 1, s) + lp2(t + 1, lab(s));
              if (s + 1 < s_len) {
                acc = logaddexp(acc,
                                b_at(t + 1, s + 1) + lp2(t + 1, lab(s + 1)));
              }
              if (s + 2 < s_len && skip_ok(s + 2)) {
                acc = logaddexp(acc,
                                b_at(t + 1, s + 2) + lp2(t + 1, lab(s + 2)));
              }
              b_at(t, s) = acc;
            }
          }
          // d(-log p)/d lp[t,k] = -sum over states with label k of the
          // occupancy posterior exp(alpha + beta - log p).
          const std::span<double> grad = log_probs.grad_buffer();
          for (int64_t t = 0; t < t_len; ++t) {
            for (int64_t s = 0; s < s_len; ++s) {
              const double joint = a2(t, s) + b_at(t, s);
              if (joint == kNegInf) continue;
              grad[static_cast<size_t>(t * vocab + lab(s))] -=
                  g * std::exp(joint - log_p);
            }
          }
        });
  }
  return CtcResult{loss, true};
}

LabelSequence ctc_greedy(const Tensor &log_probs) {
  if (log_probs.rank() != 2) {
    throw ShapeError("ctc_greedy: log_probs must be [T, V], got " +
                     shape_str(log_probs.shape()));
  }
  const int64_t t_len = log_probs.rows();
  const int64_t vocab = log_probs.cols();
  const std::span<const double> lp = log_probs.value();
  LabelSequence out;
  int64_t prev = kBlankIndex;
  for (int64_t t = 0; t < t_len; ++t) {
    int64_t best = 0;
    double best_v = lp[static_cast<size_t>(t * vocab)];
    for (int64_t k = 1; k < vocab; ++k) {
      const double v = lp[static_cast<size_t>(t * vocab + k)];
      if (v > best_v) {
        best_v = v;
        best = k;
      }
    }
    if (best != kBlankIndex && best != prev) out.push_back(best);
    prev = best;
  }
  return out;
}

}  // namespace zssl
