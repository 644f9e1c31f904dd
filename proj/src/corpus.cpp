// Copyright 2025-2026 The zssl Authors
//
// Synthetic corpus generation and PCM payload access.
//
// Licensed under the Apache License, Version 2.0

#include "zssl/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "zssl/error.hpp"

namespace zssl {
namespace {

constexpr const char kConsonants[] = "bdfgklmnprstvz";  // 14
constexpr const char kVowels[] = "aeiou";               // 5
constexpr int64_t kSyllables = 14 * 5;

std::string syllable(int64_t k) {
  std::string s;
  s += kConsonants[k % 14];
  s += kVowels[(k / 14) % 5];
  return s;
}

double unit_uniform(std::mt19937_64 &rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double gauss(std::mt19937_64 &rng) {
  const double u1 = std::max(unit_uniform(rng), 0x1.0p-60);
  const double u2 = unit_uniform(rng);
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

void validate_spec(const CorpusSpec &spec) {
  if (spec.dir.empty()) throw ContractError("corpus dir must be non-empty");
  if (spec.num_utts < 0) throw ContractError("num_utts must be >= 0");
  if (spec.lexicon_size < 1 || spec.lexicon_size > kMaxLexiconWords) {
    throw ContractError("lexicon_size must be in [1, " +
                        std::to_string(kMaxLexiconWords) + "]");
  }
  if (!(spec.min_seconds > 0.0) || !(spec.max_seconds >= spec.min_seconds)) {
    throw ContractError("need 0 < min_seconds <= max_seconds");
  }
  if (!(spec.noise_level >= 0.0) || !std::isfinite(spec.noise_level)) {
    throw ContractError("noise_level must be finite and >= 0");
  }
}

// One jittered word instance appended to `out`: random per-sinusoid phases,
// a mild amplitude draw, and additive noise, under the clean template's
// envelope.
void append_word(std::vector<double> &out, int64_t word_index,
                 double noise_level, std::mt19937_64 &rng) {
  const std::array<double, 3> freqs = word_frequencies(word_index);
  double phase[3];
  for (double &p : phase) p = 2.0 * std::numbers::pi * unit_uniform(rng);
  // Keep the loudness draw narrow: wide per-instance gains give frame
  // clustering a spurious axis to split steady word interiors on.
  const double amp = 0.97 + 0.03 * unit_uniform(rng);
  const double w = 2.0 * std::numbers::pi / kCorpusSampleRate;
  for (int64_t n = 0; n < kWordSamples; ++n) {
    const double ramp_in = static_cast<double>(n) / 160.0;
    const double ramp_out = static_cast<double>(kWordSamples - 1 - n) / 160.0;
    const double taper = std::min({1.0, ramp_in, ramp_out});
    double s = 0.0;
    for (int j = 0; j < 3; ++j) {
      s += std::sin(w * freqs[j] * static_cast<double>(n) + phase[j]) / 3.0;
    }
    out.push_back(amp * taper * s + noise_level * gauss(rng));
  }
}

}  // namespace

std::vector<std::string> make_lexicon(int64_t size) {
  if (size < 1 || size > kMaxLexiconWords) {
    throw ContractError("lexicon size must be in [1, " +
                        std::to_string(kMaxLexiconWords) + "]");
  }
  std::vector<std::string> words;
  words.reserve(static_cast<size_t>(size));
  for (int64_t i = 0; i < size; ++i) {
    words.push_back(syllable(i % kSyllables) +
                    syllable((i / kSyllables) % kSyllables));
  }
  return words;
}

std::array<double, 3> word_frequencies(int64_t word_index) {
  if (word_index < 0 || word_index >= kMaxLexiconWords) {
    throw ContractError("word index out of range");
  }
  const double d0 = static_cast<double>(word_index % 6);
  const double d1 = static_cast<double>((word_index / 6) % 6);
  const double d2 = static_cast<double>((word_index / 36) % 6);
  return {350.0 + 175.0 * d0, 1600.0 + 175.0 * d1, 2850.0 + 175.0 * d2};
}

std::vector<double> word_template(int64_t word_index) {
  const std::array<double, 3> freqs = word_frequencies(word_index);
  std::vector<double> out;
  out.reserve(static_cast<size_t>(kWordSamples));
  const double w = 2.0 * std::numbers::pi / kCorpusSampleRate;
  for (int64_t n = 0; n < kWordSamples; ++n) {
    const double ramp_in = static_cast<double>(n) / 160.0;
    const double ramp_out = static_cast<double>(kWordSamples - 1 - n) / 160.0;
    const double taper = std::min({1.0, ramp_in, ramp_out});
    double s = 0.0;
    for (int j = 0; j < 3; ++j) {
      s += std::sin(w * freqs[j] * static_cast<double>(n)) / 3.0;
    }
    out.push_back(taper * s);
  }
  return out;
}

CorpusInfo make_corpus(const CorpusSpec &spec) {
  validate_spec(spec);
  std::filesystem::create_directories(spec.dir);
  CorpusInfo info;
  info.lexicon = make_lexicon(spec.lexicon_size);
  info.audio_path = spec.dir + "/corpus.pcm";
  info.manifest_path = spec.dir + "/manifest.tsv";

  std::ofstream pcm(info.audio_path, std::ios::binary | std::ios::trunc);
  std::ofstream manifest(info.manifest_path, std::ios::trunc);
  std::ofstream lexicon(spec.dir + "/lexicon.txt", std::ios::trunc);
  if (!pcm.is_open() || !manifest.is_open() || !lexicon.is_open()) {
    throw IoError("cannot create corpus files under " + spec.dir);
  }
  for (const std::string &wd : info.lexicon) lexicon << wd << "\n";

  int64_t offset = 0;
  std::vector<double> samples;
  std::vector<int16_t> pcm16;
  for (int64_t u = 0; u < spec.num_utts; ++u) {
    std::mt19937_64 rng(mix_seed(spec.seed, static_cast<uint64_t>(u)));
    const double target =
        spec.min_seconds +
        unit_uniform(rng) * (spec.max_seconds - spec.min_seconds);
    samples.clear();
    std::string transcript;
    do {
      const int64_t word =
          static_cast<int64_t>(rng() % static_cast<uint64_t>(spec.lexicon_size));
      if (!transcript.empty()) transcript += ' ';
      transcript += info.lexicon[static_cast<size_t>(word)];
      append_word(samples, word, spec.noise_level, rng);
    } while (static_cast<double>(samples.size()) / kCorpusSampleRate < target);

    pcm16.clear();
    for (double s : samples) {
      const double clamped = std::clamp(s, -1.0, 1.0);
      pcm16.push_back(static_cast<int16_t>(std::lround(clamped * 32767.0)));
    }
    pcm.write(reinterpret_cast<const char *>(pcm16.data()),
              static_cast<std::streamsize>(pcm16.size() * sizeof(int16_t)));

    SegmentRecord record;
    char id[32];
    std::snprintf(id, sizeof(id), "utt%06lld", static_cast<long long>(u));
    record.id = id;
    record.audio_path = info.audio_path;
    record.sample_offset = offset;
    record.sample_count = static_cast<int64_t>(samples.size());
    record.duration =
        static_cast<double>(record.sample_count) / kCorpusSampleRate;
    record.transcript = transcript;
    manifest << format_manifest_line(record) << "\n";
    offset += record.sample_count;
  }
  info.total_samples = offset;
  if (!pcm.good() || !manifest.good()) {
    throw IoError("short write while generating corpus under " + spec.dir);
  }
  return info;
}

std::vector<double> read_pcm16(const std::string &path, int64_t offset,
                               int64_t count) {
  if (offset < 0 || count < 0) throw ContractError("bad PCM sample range");
  std::ifstream in(path, std::ios::binary);
  if (!in.is_open()) throw IoError("cannot open audio file: " + path);
  in.seekg(static_cast<std::streamoff>(offset) * 2);
  std::vector<int16_t> raw(static_cast<size_t>(count));
  in.read(reinterpret_cast<char *>(raw.data()),
          static_cast<std::streamsize>(raw.size() * sizeof(int16_t)));
  if (in.gcount() != static_cast<std::streamsize>(raw.size() * 2)) {
    throw IoError("short read from " + path + " (samples " +
                  std::to_string(offset) + "+" + std::to_string(count) + ")");
  }
  std::vector<double> out(raw.size());
  for (size_t i = 0; i < raw.size(); ++i) {
    out[i] = static_cast<double>(raw[i]) / 32767.0;
  }
  return out;
}

Tensor load_wave(const SegmentRecord &record) {
  std::vector<double> samples =
      read_pcm16(record.audio_path, record.sample_offset, record.sample_count);
  return Tensor::from({1, record.sample_count}, std::move(samples));
}

double tone_power(std::span<const double> frame, double hz,
                  int64_t sample_rate) {
  // Goertzel recurrence: one resonator pass, power from the final state.
  const double w =
      2.0 * std::numbers::pi * hz / static_cast<double>(sample_rate);
  const double coeff = 2.0 * std::cos(w);
  double s1 = 0.0, s2 = 0.0;
  for (double x : frame) {
    const double s0 = x + coeff * s1 - s2;
    s2 = s1;
    s1 = s0;
  }
  return s1 * s1 + s2 * s2 - coeff * s1 * s2;
}

int64_t classify_frame(std::span<const double> frame, int64_t lexicon_size) {
  if (lexicon_size < 1 || lexicon_size > kMaxLexiconWords) {
    throw ContractError("lexicon size out of range");
  }
  int64_t best = 0;
  double best_power = -1.0;
  for (int64_t wd = 0; wd < lexicon_size; ++wd) {
    const std::array<double, 3> freqs = word_frequencies(wd);
    double p = 0.0;
    for (double f : freqs) p += tone_power(frame, f);
    if (p > best_power) {
      best_power = p;
      best = wd;
    }
  }
  return best;
}

}  // namespace zssl
