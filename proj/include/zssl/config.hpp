// Copyright 2025-2026 The zssl Authors
//
// Run configuration shared by every pipeline stage. Each field has a usable
// default; files and command-line overrides only state what differs.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace zssl {

// One flat bag of knobs for all stages. A stage reads the fields it cares
// about and ignores the rest, so a single config file can drive a whole
// pipeline (make-data -> kmeans -> pretrain -> finetune -> decode -> bench).
struct RunConfig {
  // Reproducibility and bookkeeping.
  uint64_t seed = 17;
  std::string metrics_path;  // line-delimited JSON per-step log; empty = off

  // make-data: synthetic corpus layout.
  std::string data_dir = "data";
  int64_t num_utts = 100;
  double min_utt_seconds = 1.8;
  double max_utt_seconds = 3.0;
  int64_t lexicon_size = 12;
  double noise_level = 0.005;

  // Feature extraction.
  int64_t frontend_channels = 16;  // conv extractor width (512 = full size)
  int64_t mfcc_mels = 23;
  int64_t mfcc_ceps = 13;  // 13 ceps -> 39 dims with deltas appended

  // Encoder profile: "tiny", "small" (width encoder_dim), or "base".
  std::string encoder_profile = "small";
  int64_t encoder_dim = 16;

  // Masked-prediction objective.
  std::string loss = "ce";  // "ce" (plain logits) or "cosine" (codebook)
  int64_t codebook_width = 16;
  double mask_start_prob = 0.08;
  int64_t mask_span = 10;
  int64_t mask_min = 2;
  double tau = 0.1;

  // kmeans: discrete-target generation.
  int64_t num_units = 16;
  int64_t kmeans_iters = 20;
  int64_t kmeans_max_frames = 20000;  // fit subsample cap
  int64_t feature_stack = -1;  // -1 = cepstral features; >=0 = encoder stack
  std::string codebook_path = "codebook.zssl";
  std::string labels_dir = "labels";
  std::string manifest_out = "manifest_labeled.tsv";

  // Streaming datapipe.
  std::string manifest;  // input manifest for every stage after make-data
  int64_t estimate_records = 500;
  int64_t num_buckets = 8;
  int64_t buffer_cap = 2000;
  double max_batch_seconds = 15.0;

  // Optimization (pretrain and finetune).
  int64_t steps = 200;
  int64_t grad_accum = 1;
  double base_lr = 0.045;
  double finetune_lr = 0.001;
  double step_warmup = 7500.0;
  double epoch_warmup = 3.5;
  int64_t checkpoint_every = 50;
  std::string checkpoint_in;
  std::string checkpoint_out = "checkpoint.zssl";

  // finetune.
  int64_t freeze_frontend_steps = 0;

  // decode.
  int64_t beam = 16;
  double lm_weight = 0.5;
  double length_weight = 0.1;
  bool length_in_words = false;
  int64_t lm_order = 3;
  std::string lm_path;  // empty = train an n-gram model on the manifest
  std::string decode_out = "decoded.tsv";

  // bench.
  int64_t bench_t = 512;
  int64_t bench_reps = 3;
  std::string bench_out;  // empty = stdout

  bool operator==(const RunConfig &) const = default;
};

// Parses a JSON object with a subset of the field names above. Unknown keys
// and wrongly-typed values raise ParseError. `saw_seed`, when given, reports
// whether the text set the seed explicitly (used for the env fallback).
RunConfig parse_run_config(const std::string &json_text,
                           bool *saw_seed = nullptr);

// Reads and parses a config file. Throws IoError if unreadable.
RunConfig load_run_config(const std::string &path, bool *saw_seed = nullptr);

// Canonical JSON (sorted keys, every field present). Guaranteed to satisfy
// parse_run_config(serialize_run_config(c)) == c.
std::string serialize_run_config(const RunConfig &config);

// Applies one "key=value" override. Values parse as JSON scalars where
// possible ("seed=42", "length_in_words=true") and fall back to plain
// strings ("manifest=data/manifest.tsv"). Unknown keys raise ParseError.
void apply_override(RunConfig &config, std::string_view key_eq_value,
                    bool *saw_seed = nullptr);

// Reads the ZSSL_SEED environment variable into config.seed unless the seed
// was already set explicitly. Returns true when the env value was applied.
// A non-numeric ZSSL_SEED raises ParseError.
bool apply_env_seed(RunConfig &config, bool seed_explicit);

}  // namespace zssl
