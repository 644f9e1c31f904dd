// Copyright 2025-2026 The zssl Authors
//
// Licensed under the Apache License, Version 2.0

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "zssl/asr.hpp"

using namespace zssl;

namespace {

std::string temp_path(const char *name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

const char kAlphabet[] = "abcdefghijklmnopqrstuvwxyz '";

double context_sum(const NGramLM &lm, const std::string &ctx) {
  double sum = 0.0;
  for (int i = 0; i < 28; ++i) sum += std::exp(lm.log_prob(ctx, kAlphabet[i]));
  return sum;
}

}  // namespace

TEST_CASE("repeated bigram dominates its context's distribution") {
  const NGramLM lm = NGramLM::train("aaaa", 2);
  const double p_a = lm.log_prob("a", 'a');
  for (int i = 1; i < 28; ++i) {
    CHECK(p_a > lm.log_prob("a", kAlphabet[i]));
  }
  // Add-one over 28 symbols with context count 3 and gram count 3.
  CHECK(p_a == doctest::Approx(std::log(4.0 / 31.0)).epsilon(1e-12));
}

TEST_CASE("unseen contexts fall back to shorter ones") {
  const NGramLM lm = NGramLM::train("the cat sat on the mat", 3);
  // "zz" and "z" never occur, so both resolve at the unigram level.
  for (int i = 0; i < 28; ++i) {
    const char c = kAlphabet[i];
    CHECK(lm.log_prob("zz", c) == lm.log_prob("z", c));
    CHECK(lm.log_prob("zz", c) == lm.log_prob("", c));
  }
  // "t" occurs, so a one-character context resolves at the bigram level
  // and differs from the unigram distribution somewhere.
  bool differs = false;
  for (int i = 0; i < 28; ++i) {
    if (lm.log_prob("t", kAlphabet[i]) != lm.log_prob("", kAlphabet[i])) {
      differs = true;
    }
  }
  CHECK(differs);
  // Only the trailing order-1 characters matter.
  CHECK(lm.log_prob("zzzzat", 'h') == lm.log_prob("at", 'h'));
}

TEST_CASE("conditional distributions sum to one at every context") {
  std::mt19937_64 rng(21);
  std::string corpus;
  for (int i = 0; i < 400; ++i) {
    corpus.push_back(kAlphabet[rng() % 27]);  // letters and spaces
  }
  const NGramLM lm = NGramLM::train(corpus, 3);
  const std::vector<std::string> contexts = {"",   "a",  "th", "qx",
                                             "zz", "  ", "e",  "t'"};
  for (const std::string &ctx : contexts) {
    CHECK(context_sum(lm, ctx) == doctest::Approx(1.0).epsilon(1e-8));
  }
}

TEST_CASE("sequence score is the sum of stepwise conditionals") {
  const NGramLM lm = NGramLM::train("hello world", 2);
  const std::string text = "hold";
  double manual = 0.0;
  for (size_t i = 0; i < text.size(); ++i) {
    manual += lm.log_prob(text.substr(0, i), text[i]);
  }
  CHECK(lm.sequence_log_prob(text) == doctest::Approx(manual).epsilon(1e-12));
  CHECK(lm.sequence_log_prob("") == 0.0);
}

TEST_CASE("training normalizes case and whitespace") {
  const NGramLM messy = NGramLM::train("The  Cat\nSAT", 2);
  const NGramLM clean = NGramLM::train("the cat sat", 2);
  for (int i = 0; i < 28; ++i) {
    const char c = kAlphabet[i];
    CHECK(messy.log_prob("t", c) == clean.log_prob("t", c));
    CHECK(messy.log_prob(" ", c) == clean.log_prob(" ", c));
  }
  CHECK(messy.log_prob("a", 'T') == messy.log_prob("a", 't'));
}

TEST_CASE("training rejects unusable corpora") {
  CHECK_THROWS_AS(NGramLM::train("digits 123", 2), ParseError);
  CHECK_THROWS_AS(NGramLM::train("", 2), ContractError);
  CHECK_THROWS_AS(NGramLM::train("   \n  ", 2), ContractError);
  CHECK_THROWS_AS(NGramLM::train("fine", 0), ContractError);
  const NGramLM lm = NGramLM::train("fine", 1);
  CHECK_THROWS_AS(lm.log_prob("", '!'), ParseError);
}

TEST_CASE("an untrained model is uniform over the text symbols") {
  const NGramLM lm;
  for (int i = 0; i < 28; ++i) {
    CHECK(lm.log_prob("any", kAlphabet[i]) ==
          doctest::Approx(std::log(1.0 / 28.0)).epsilon(1e-12));
  }
}

TEST_CASE("models round trip through their file format") {
  std::mt19937_64 rng(5);
  std::string corpus;
  for (int i = 0; i < 300; ++i) corpus.push_back(kAlphabet[rng() % 28]);
  const NGramLM lm = NGramLM::train(corpus, 4);
  const std::string path = temp_path("zssl_lm_roundtrip.bin");
  lm.save(path);
  const NGramLM loaded = NGramLM::load(path);
  CHECK(loaded.order() == 4);
  const std::vector<std::string> contexts = {"", "a", "ab", "abc", "zzz"};
  for (const std::string &ctx : contexts) {
    for (int i = 0; i < 28; ++i) {
      // Bit-exact: the same counts produce the same arithmetic.
      CHECK(loaded.log_prob(ctx, kAlphabet[i]) ==
            lm.log_prob(ctx, kAlphabet[i]));
    }
  }
}

TEST_CASE("damaged model files are rejected") {
  const std::string path = temp_path("zssl_lm_damaged.bin");
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOTANLMF";
  }
  CHECK_THROWS_AS(NGramLM::load(path), IoError);

  const NGramLM lm = NGramLM::train("some text", 2);
  lm.save(path);
  std::filesystem::resize_file(path, 20);
  CHECK_THROWS_AS(NGramLM::load(path), IoError);
  CHECK_THROWS_AS(NGramLM::load(temp_path("zssl_lm_missing.bin")), IoError);
}
