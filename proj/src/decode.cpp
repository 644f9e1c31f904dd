// Copyright 2025-2026 The zssl Authors
//
// Licensed under the Apache License, Version 2.0

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

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

struct PrefixState {
  double pb = kNegInf;   // log mass of paths ending in blank
  double pnb = kNegInf;  // log mass of paths ending in the last symbol
  double lm = 0.0;       // cumulative LM log-prob of the prefix
};

int64_t word_count(const std::string &text) {
  int64_t words = 0;
  bool in_word = false;
  for (char c : text) {
    const bool is_space = (c == ' ');
    if (!is_space && !in_word) ++words;
    in_word = !is_space;
  }
  return words;
}

double length_term(const std::string &text, const BeamConfig &config) {
  const int64_t len = config.length_in_words
                          ? word_count(text)
                          : static_cast<int64_t>(text.size());
  return config.length_weight * static_cast<double>(len);
}

double combined(const std::string &text, const PrefixState &st,
                const BeamConfig &config) {
  return logaddexp(st.pb, st.pnb) + config.lm_weight * st.lm +
         length_term(text, config);
}

}  // namespace

double Hypothesis::log_p_ctc() const {
  return logaddexp(log_p_blank, log_p_nonblank);
}

std::vector<Hypothesis> ctc_beam_lm_full(const Tensor &log_probs,
                                         const NGramLM &lm,
                                         const BeamConfig &config) {
  if (log_probs.rank() != 2) {
    throw ShapeError("ctc_beam_lm: log_probs must be [T, V], got " +
                     shape_str(log_probs.shape()));
  }
  if (config.beam < 1) throw ContractError("ctc_beam_lm: beam must be >= 1");
  if (!std::isfinite(config.lm_weight) ||
      !std::isfinite(config.length_weight)) {
    throw ContractError("ctc_beam_lm: non-finite fusion weights");
  }
  const int64_t t_len = log_probs.rows();
  const int64_t vocab = log_probs.cols();
  if (vocab < 2 || vocab > kVocabSize) {
    throw ShapeError("ctc_beam_lm: vocabulary size " + std::to_string(vocab) +
                     " outside [2, " + std::to_string(kVocabSize) + "]");
  }
  const std::span<const double> lp = log_probs.value();
  const auto lp_at = [&](int64_t t, int64_t k) {
    return lp[static_cast<size_t>(t * vocab + k)];
  };

  // std::map keys give deterministic lexicographic iteration, which makes
  // equal-score pruning reproducible.
  std::map<std::string, PrefixState> beam;
  beam[""] = PrefixState{0.0, kNegInf, 0.0};

  for (int64_t t = 0; t < t_len; ++t) {
    std::map<std::string, PrefixState> next;
    for (const auto &[text, st] : beam) {
      const double total = logaddexp(st.pb, st.pnb);
      // Zero-probability contributions must not materialize prefixes.
      const auto merge_same = [&](double contrib) {
        if (contrib == kNegInf) return;
        PrefixState &dst = next[text];
        dst.lm = st.lm;
        dst.pnb = logaddexp(dst.pnb, contrib);
      };
      const auto extend = [&](char c, double contrib) {
        if (contrib == kNegInf) return;
        PrefixState &ext = next[text + c];
        if (ext.pb == kNegInf && ext.pnb == kNegInf) {
          ext.lm = st.lm + lm.log_prob(text, c);
        }
        ext.pnb = logaddexp(ext.pnb, contrib);
      };
      // Emit blank: the prefix is unchanged and now ends in blank.
      if (const double contrib = total + lp_at(t, kBlankIndex);
          contrib != kNegInf) {
        PrefixState &dst = next[text];
        dst.lm = st.lm;
        dst.pb = logaddexp(dst.pb, contrib);
      }
      // Emit symbols.
      for (int64_t k = 1; k < vocab; ++k) {
        const char c = vocab_char(k);
        const double lpk = lp_at(t, k);
        if (!text.empty() && text.back() == c) {
          // Same symbol again: without an intervening blank it merges into
          // the existing prefix; after a blank it starts a new copy.
          merge_same(st.pnb + lpk);
          extend(c, st.pb + lpk);
        } else {
          extend(c, total + lpk);
        }
      }
    }
    // Prune to the beam width by fused score; ties keep the
    // lexicographically smaller prefix.
    std::vector<std::pair<std::string, PrefixState>> ranked(next.begin(),
                                                            next.end());
    std::sort(ranked.begin(), ranked.end(),
              [&](const auto &a, const auto &b) {
                const double sa = combined(a.first, a.second, config);
                const double sb = combined(b.first, b.second, config);
                if (sa != sb) return sa > sb;
                return a.first < b.first;
              });
    if (static_cast<int64_t>(ranked.size()) > config.beam) {
      ranked.resize(static_cast<size_t>(config.beam));
    }
    beam.clear();
    for (auto &[text, st] : ranked) beam.emplace(std::move(text), st);
  }

  std::vector<Hypothesis> out;
  out.reserve(beam.size());
  for (const auto &[text, st] : beam) {
    Hypothesis h;
    h.prefix = text_to_labels(text);
    h.log_p_blank = st.pb;
    h.log_p_nonblank = st.pnb;
    h.lm_log_prob = st.lm;
    h.combined_score = combined(text, st, config);
    out.push_back(std::move(h));
  }
  std::sort(out.begin(), out.end(), [](const Hypothesis &a, const Hypothesis &b) {
    if (a.combined_score != b.combined_score) {
      return a.combined_score > b.combined_score;
    }
    return a.prefix < b.prefix;
  });
  return out;
}

LabelSequence ctc_beam_lm(const Tensor &log_probs, const NGramLM &lm,
                          const BeamConfig &config) {
  std::vector<Hypothesis> hyps = ctc_beam_lm_full(log_probs, lm, config);
  return hyps.empty() ? LabelSequence{} : hyps.front().prefix;
}

}  // namespace zssl
