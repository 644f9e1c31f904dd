// Copyright 2025-2026 The zssl Authors
//
// Licensed under the Apache License, Version 2.0

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "zssl/asr.hpp"

namespace zssl {

namespace {

// Count-table file layout, all integers little-endian uint64:
//   bytes 0-7   magic "ZSSLLM01"
//   bytes 8-15  model order n
//   bytes 16-23 number of gram entries
//   then per entry: length, that many text bytes, count
// Context totals are derivable (sum of counts over one-longer grams), so
// only the gram counts are stored.
constexpr char kLmMagic[8] = {'Z', 'S', 'S', 'L', 'L', 'M', '0', '1'};

template <typename T>
void write_pod(std::ofstream &out, const T &v) {
  out.write(reinterpret_cast<const char *>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream &in, T &v, const std::string &path) {
  in.read(reinterpret_cast<char *>(&v), sizeof(T));
  if (!in) throw IoError("truncated language model file: " + path);
}

// Lowercase letters, collapse whitespace runs to single spaces, keep
// apostrophes; reject anything else.
std::string normalize_corpus(const std::string &corpus) {
  std::string text;
  text.reserve(corpus.size());
  for (char raw : corpus) {
    char c = raw;
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    if (c == '\n' || c == '\t' || c == '\r') c = ' ';
    if (c == ' ') {
      if (!text.empty() && text.back() != ' ') text.push_back(' ');
      continue;
    }
    if ((c >= 'a' && c <= 'z') || c == '\'') {
      text.push_back(c);
      continue;
    }
    throw ParseError(std::string("corpus character '") + raw +
                     "' is outside the vocabulary");
  }
  while (!text.empty() && text.back() == ' ') text.pop_back();
  return text;
}

}  // namespace

void NGramLM::rebuild_context_totals() {
  context_totals_.clear();
  for (const auto &[gram, count] : gram_counts_) {
    context_totals_[gram.substr(0, gram.size() - 1)] += count;
  }
}

NGramLM NGramLM::train(const std::string &corpus, int64_t order) {
  if (order < 1) throw ContractError("NGramLM: order must be >= 1");
  const std::string text = normalize_corpus(corpus);
  if (text.empty()) {
    throw ContractError("NGramLM: corpus has no usable characters");
  }
  NGramLM lm;
  lm.order_ = order;
  for (size_t i = 0; i < text.size(); ++i) {
    for (int64_t k = 1; k <= order; ++k) {
      if (i + static_cast<size_t>(k) > text.size()) break;
      ++lm.gram_counts_[text.substr(i, static_cast<size_t>(k))];
    }
  }
  lm.rebuild_context_totals();
  return lm;
}

double NGramLM::log_prob(std::string_view context, char next) const {
  if (next >= 'A' && next <= 'Z') next = static_cast<char>(next - 'A' + 'a');
  const bool known =
      (next >= 'a' && next <= 'z') || next == ' ' || next == '\'';
  if (!known) {
    throw ParseError(std::string("character '") + next +
                     "' is outside the vocabulary");
  }
  const size_t usable =
      std::min(context.size(), static_cast<size_t>(order_ - 1));
  std::string_view ctx = context.substr(context.size() - usable);
  // Unseen contexts defer whole distributions to the next shorter context,
  // so each consulted level is already normalized by add-one smoothing.
  while (!ctx.empty()) {
    const auto total = context_totals_.find(std::string(ctx));
    if (total != context_totals_.end() && total->second > 0) break;
    ctx.remove_prefix(1);
  }
  uint64_t ctx_total = 0;
  if (!ctx.empty()) ctx_total = context_totals_.at(std::string(ctx));
  if (ctx.empty()) {
    const auto it = context_totals_.find("");
    ctx_total = it == context_totals_.end() ? 0 : it->second;
  }
  uint64_t gram = 0;
  const auto it = gram_counts_.find(std::string(ctx) + next);
  if (it != gram_counts_.end()) gram = it->second;
  return std::log(static_cast<double>(gram + 1)) -
         std::log(static_cast<double>(ctx_total) +
                  static_cast<double>(kTextSymbols));
}

double NGramLM::sequence_log_prob(std::string_view text) const {
  double total = 0.0;
  for (size_t i = 0; i < text.size(); ++i) {
    total += log_prob(text.substr(0, i), text[i]);
  }
  return total;
}

void NGramLM::save(const std::string &path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write language model: " + path);
  out.write(kLmMagic, sizeof(kLmMagic));
  write_pod(out, static_cast<uint64_t>(order_));
  write_pod(out, static_cast<uint64_t>(gram_counts_.size()));
  // Sorted for a canonical byte layout independent of hash-map order.
  std::vector<const std::pair<const std::string, uint64_t> *> entries;
  entries.reserve(gram_counts_.size());
  for (const auto &kv : gram_counts_) entries.push_back(&kv);
  std::sort(entries.begin(), entries.end(),
            [](const auto *a, const auto *b) { return a->first < b->first; });
  for (const auto *kv : entries) {
    write_pod(out, static_cast<uint64_t>(kv->first.size()));
    out.write(kv->first.data(), static_cast<int64_t>(kv->first.size()));
    write_pod(out, kv->second);
  }
  if (!out) throw IoError("short write to language model: " + path);
}

NGramLM NGramLM::load(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open language model: " + path);
  char magic[8] = {};
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kLmMagic, sizeof(magic)) != 0) {
    throw IoError("not a language model file: " + path);
  }
  uint64_t order = 0, entries = 0;
  read_pod(in, order, path);
  read_pod(in, entries, path);
  if (order < 1 || order > 16) {
    throw IoError("implausible language model order in " + path);
  }
  NGramLM lm;
  lm.order_ = static_cast<int64_t>(order);
  for (uint64_t e = 0; e < entries; ++e) {
    uint64_t len = 0;
    read_pod(in, len, path);
    if (len < 1 || len > order) {
      throw IoError("corrupt gram length in " + path);
    }
    std::string gram(static_cast<size_t>(len), '\0');
    in.read(gram.data(), static_cast<int64_t>(len));
    uint64_t count = 0;
    read_pod(in, count, path);
    if (!in) throw IoError("truncated language model file: " + path);
    lm.gram_counts_[gram] = count;
  }
  lm.rebuild_context_totals();
  return lm;
}

}  // namespace zssl
