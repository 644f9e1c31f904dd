// Copyright 2025-2026 The zssl Authors
//
// Licensed under the Apache License, Version 2.0

#include <algorithm>

#include "zssl/asr.hpp"

namespace zssl {

std::vector<std::string> split_words(const std::string &text) {
  std::vector<std::string> words;
  std::string current;
  for (char c : text) {
    if (c == ' ') {
      if (!current.empty()) words.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

namespace {

struct Cell {
  int64_t errors = 0;
  int64_t insdel = 0;  // tie-break: fewer insertions+deletions
  int64_t subs = 0;
  int64_t ins = 0;
  int64_t del = 0;

  bool better_than(const Cell &other) const {
    if (errors != other.errors) return errors < other.errors;
    return insdel < other.insdel;
  }
};

}  // namespace

WerResult wer(const std::vector<std::string> &hyp,
              const std::vector<std::string> &ref) {
  const size_t n = hyp.size(), m = ref.size();
  // dp[j] covers hyp[0..i) vs ref[0..j); rows advance over hyp.
  std::vector<Cell> dp(m + 1);
  for (size_t j = 1; j <= m; ++j) {
    dp[j] = dp[j - 1];
    ++dp[j].errors;
    ++dp[j].insdel;
    ++dp[j].del;
  }
  for (size_t i = 1; i <= n; ++i) {
    Cell diag = dp[0];  // dp[i-1][j-1]
    ++dp[0].errors;     // hyp word with no reference: insertion
    ++dp[0].insdel;
    ++dp[0].ins;
    for (size_t j = 1; j <= m; ++j) {
      const Cell above = dp[j];  // dp[i-1][j]
      Cell best;
      if (hyp[i - 1] == ref[j - 1]) {
        best = diag;  // match costs nothing, so it dominates a substitution
      } else {
        best = diag;
        ++best.errors;
        ++best.subs;
      }
      Cell via_ins = above;
      ++via_ins.errors;
      ++via_ins.insdel;
      ++via_ins.ins;
      if (via_ins.better_than(best)) best = via_ins;
      Cell via_del = dp[j - 1];  // dp[i][j-1]
      ++via_del.errors;
      ++via_del.insdel;
      ++via_del.del;
      if (via_del.better_than(best)) best = via_del;
      diag = above;
      dp[j] = best;
    }
  }
  const Cell &final_cell = dp[m];
  WerResult result;
  result.substitutions = final_cell.subs;
  result.insertions = final_cell.ins;
  result.deletions = final_cell.del;
  if (m == 0 && n == 0) {
    result.rate = 0.0;
  } else {
    result.rate = static_cast<double>(final_cell.errors) /
                  static_cast<double>(std::max<size_t>(1, m));
  }
  return result;
}

}  // namespace zssl
