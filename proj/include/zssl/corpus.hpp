// Copyright 2025-2026 The zssl Authors
//
// Synthetic speech-like corpus: a small lexicon of pseudo-words, each mapped
// to a fixed band-limited waveform template, concatenated with per-instance
// jitter into utterances stored as headerless 16-bit PCM plus a manifest.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "zssl/datapipe.hpp"
#include "zssl/tensor.hpp"

namespace zssl {

inline constexpr int64_t kCorpusSampleRate = 16000;
// Every pseudo-word instance occupies exactly this many samples (0.6 s).
// Long steady words give the cluster targets multi-frame persistence, so
// masked spans stay shorter than the words that contain them.
inline constexpr int64_t kWordSamples = 9600;
// The frequency-slot construction below distinguishes at most this many words.
inline constexpr int64_t kMaxLexiconWords = 216;

struct CorpusSpec {
  std::string dir;
  int64_t num_utts = 100;
  double min_seconds = 1.8;
  double max_seconds = 3.0;
  int64_t lexicon_size = 12;
  double noise_level = 0.005;
  uint64_t seed = 17;
};

struct CorpusInfo {
  std::string manifest_path;  // <dir>/manifest.tsv
  std::string audio_path;     // <dir>/corpus.pcm
  std::vector<std::string> lexicon;
  int64_t total_samples = 0;
};

// Pronounceable two-syllable names, pairwise distinct, lowercase a-z only.
std::vector<std::string> make_lexicon(int64_t size);

// The three sinusoid frequencies (Hz) that identify a word. Distinct words
// differ by at least 175 Hz in some slot, all below 4 kHz.
std::array<double, 3> word_frequencies(int64_t word_index);

// Clean template: equal-amplitude sum of the word's sinusoids with 10 ms
// linear edge tapers, peak amplitude well inside [-1, 1].
std::vector<double> word_template(int64_t word_index);

// Writes <dir>/corpus.pcm (16-bit little-endian mono), <dir>/manifest.tsv
// (one line per utterance with transcript), and <dir>/lexicon.txt. Runs with
// the same spec produce byte-identical files. num_utts == 0 yields a valid
// empty manifest.
CorpusInfo make_corpus(const CorpusSpec &spec);

// Reads `count` samples starting at sample `offset` from a 16-bit PCM file,
// scaled to [-1, 1]. Throws IoError on a missing file or short read.
std::vector<double> read_pcm16(const std::string &path, int64_t offset,
                               int64_t count);

// Manifest record -> [1, sample_count] waveform tensor.
Tensor load_wave(const SegmentRecord &record);

// Signal power at one frequency over the frame (Goertzel recurrence).
double tone_power(std::span<const double> frame, double hz,
                  int64_t sample_rate = kCorpusSampleRate);

// Index of the lexicon word whose frequency trio carries the most energy in
// the frame; ties resolve to the lowest index.
int64_t classify_frame(std::span<const double> frame, int64_t lexicon_size);

}  // namespace zssl
