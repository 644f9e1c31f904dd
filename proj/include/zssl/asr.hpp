// Copyright 2025-2026 The zssl Authors
//
// Letter-level recognition head: CTC loss over a fixed character
// vocabulary, greedy and prefix beam-search decoding with character n-gram
// language-model fusion, and word-error-rate scoring.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "zssl/tensor.hpp"

namespace zssl {

// ---------------------------------------------------------------------------
// Vocabulary: index 0 is the CTC blank, 1..26 the letters a..z, 27 the word
// space, 28 the apostrophe. 29 symbols total.

inline constexpr int64_t kBlankIndex = 0;
inline constexpr int64_t kVocabSize = 29;
inline constexpr int64_t kTextSymbols = kVocabSize - 1;  // blank never in text

// Uppercase letters fold to lowercase; anything else throws ParseError.
int64_t vocab_index(char c);
// Valid for indices 1..28 (the blank has no character form).
char vocab_char(int64_t index);
LabelSequence text_to_labels(const std::string &text);
std::string labels_to_text(const LabelSequence &labels);

// ---------------------------------------------------------------------------
// CTC loss

struct CtcResult {
  Tensor loss;           // scalar; +infinity when infeasible
  bool feasible = true;  // false when T cannot realize the target
};

// Negative log of the summed probability of every frame alignment of
// `target` (non-blank indices) under per-frame log-probabilities
// log_probs [T, V]. Alignments collapse repeats and then drop blanks. A
// target needing more frames than T (its length plus one per adjacent
// repeat) yields an infinite, non-differentiable loss with feasible=false
// rather than an error. Gradient flows to log_probs via alignment
// occupancy posteriors.
CtcResult ctc_loss(Tape &tape, const Tensor &log_probs,
                   const LabelSequence &target);

// Best-path decode: per-frame argmax (ties to the lowest index), collapse
// repeats, drop blanks.
LabelSequence ctc_greedy(const Tensor &log_probs);

// ---------------------------------------------------------------------------
// Character n-gram language model with add-one smoothing. An unseen
// context falls back to the next shorter context's distribution, so every
// conditional distribution sums to one exactly.

class NGramLM {
 public:
  NGramLM() = default;

  // Counts all 1..order grams of the corpus. Whitespace runs normalize to
  // single spaces; letters fold to lowercase.
  static NGramLM train(const std::string &corpus, int64_t order);

  int64_t order() const { return order_; }

  // log p(next | context); only the trailing order-1 characters of the
  // context are consulted.
  double log_prob(std::string_view context, char next) const;
  double sequence_log_prob(std::string_view text) const;

  void save(const std::string &path) const;
  static NGramLM load(const std::string &path);

 private:
  int64_t order_ = 1;
  std::unordered_map<std::string, uint64_t> gram_counts_;
  std::unordered_map<std::string, uint64_t> context_totals_;

  void rebuild_context_totals();
};

// ---------------------------------------------------------------------------
// Prefix beam search with shallow fusion. Each hypothesis carries the
// blank/non-blank probability split and scores as
//   acoustic log-prob + lm_weight * LM log-prob + length_weight * |y|.

struct Hypothesis {
  LabelSequence prefix;
  double log_p_blank = 0.0;     // paths ending in blank
  double log_p_nonblank = 0.0;  // paths ending in the final symbol
  double lm_log_prob = 0.0;     // cumulative LM score of the prefix
  double combined_score = 0.0;

  double log_p_ctc() const;  // log-sum of the two splits
};

struct BeamConfig {
  int64_t beam = 16;
  double lm_weight = 0.5;      // w1
  double length_weight = 0.1;  // w2
  // Length term counts characters by default, whole words when set.
  bool length_in_words = false;
};

// All surviving hypotheses, best first; ties broken toward the
// lexicographically smaller prefix.
std::vector<Hypothesis> ctc_beam_lm_full(const Tensor &log_probs,
                                         const NGramLM &lm,
                                         const BeamConfig &config);
// The best hypothesis's prefix.
LabelSequence ctc_beam_lm(const Tensor &log_probs, const NGramLM &lm,
                          const BeamConfig &config);

// ---------------------------------------------------------------------------
// Word error rate

struct WerResult {
  int64_t substitutions = 0;
  int64_t insertions = 0;
  int64_t deletions = 0;
  double rate = 0.0;

  int64_t errors() const { return substitutions + insertions + deletions; }
};

std::vector<std::string> split_words(const std::string &text);

// Word-level edit distance with uniform costs. Among minimum-error
// alignments the one with the fewest insertions+deletions (most
// substitutions) determines the split, which makes the decomposition
// symmetric: swapping the arguments swaps insertions and deletions.
WerResult wer(const std::vector<std::string> &hyp,
              const std::vector<std::string> &ref);

}  // namespace zssl
