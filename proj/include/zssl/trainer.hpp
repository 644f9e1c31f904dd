// Copyright 2025-2026 The zssl Authors
//
// Pipeline stages: model assembly, masked-prediction pre-training, letter
// fine-tuning, discrete-target generation, beam decoding, and the encoder
// geometry benchmark. Every stage is a plain function of one RunConfig.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "zssl/config.hpp"
#include "zssl/encoder.hpp"
#include "zssl/frontend.hpp"
#include "zssl/objective.hpp"
#include "zssl/tensor.hpp"

namespace zssl {

// Append-only line-delimited JSON log, one record per optimizer step.
// Step numbers must strictly increase within one writer.
class MetricsLog {
 public:
  explicit MetricsLog(const std::string &path);  // empty path disables
  ~MetricsLog();
  MetricsLog(MetricsLog &&) noexcept;
  MetricsLog &operator=(MetricsLog &&) noexcept;

  bool enabled() const;
  void log_step(int64_t step, int64_t epoch, double lr, double loss,
                double accuracy, double wall_seconds, double batches_per_sec,
                const std::vector<std::pair<std::string, uint64_t>> &op_counts);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Frontend + input projection + encoder (+ stage head) with their configs.
struct ModelBundle {
  FrontendConfig frontend;
  EncoderConfig encoder;
  ParamMap params;
};

FrontendConfig frontend_from_config(const RunConfig &config);
// encoder_profile "tiny" | "small" (width encoder_dim) | "base".
EncoderConfig encoder_from_config(const RunConfig &config);

// Backbone plus masked-prediction head (objective.*). The mask embedding
// matches the frontend feature width; the prediction head sits on the
// encoder output.
ModelBundle init_pretrain_model(const RunConfig &config);
// Backbone plus letter head ctc.{w,b} producing 29 symbol logits.
ModelBundle init_finetune_model(const RunConfig &config);

// Copies checkpoint tensors into matching model parameters. Bookkeeping
// entries (opt.*, meta.*) and names the model does not own are skipped;
// a name held by both with different shapes raises ShapeError quoting both
// shapes. Returns the number of parameters restored.
int64_t load_matching_params(ParamMap &model, const ParamMap &checkpoint);

// wave [1,S] -> frontend features (optionally mask-substituted using
// objective.mask_embed) -> input projection -> encoder output [T, D].
// `stack_taps`, when given, receives per-stack encoder outputs at 50 Hz.
Tensor backbone_forward(Tape &tape, const ModelBundle &model,
                        const Tensor &wave, const MaskSet *mask = nullptr,
                        std::vector<Tensor> *stack_taps = nullptr);

struct TrainResult {
  int64_t steps_done = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double final_accuracy = 0.0;  // masked accuracy / exact-match rate
  bool nan_abort = false;       // stopped on non-finite values; no save
  std::string checkpoint_path;
};

// Masked-prediction pre-training over the labeled manifest. Resumes from
// config.checkpoint_in when it holds a pre-training checkpoint; replaying
// the stream deterministically makes interrupted and uninterrupted runs
// bit-identical. On non-finite loss/gradients stops without overwriting the
// last saved checkpoint and reports nan_abort.
TrainResult run_pretrain(const RunConfig &config);

// Connectionist-temporal-classification fine-tuning on transcripts. Loads
// the backbone from config.checkpoint_in (pre-training head tensors are
// dropped); a checkpoint that already carries the letter head and optimizer
// state resumes instead. The first freeze_frontend_steps optimizer steps
// leave frontend parameters untouched.
TrainResult run_finetune(const RunConfig &config);

struct LabelingResult {
  std::string codebook_path;
  std::string manifest_out;
  int64_t utterances = 0;
  int64_t frames = 0;
  double inertia = 0.0;  // final within-cluster sum of squares on the fit set
};

// Clusters per-frame features into num_units centroids, writes one label
// file per utterance, and emits a manifest pointing at them. Features come
// from the cepstral path (feature_stack < 0, decimated to the 50 Hz grid) or
// from encoder stack `feature_stack` of the checkpoint_in model.
LabelingResult run_make_labels(const RunConfig &config);

struct DecodeSummary {
  int64_t utterances = 0;
  int64_t word_errors = 0;
  int64_t ref_words = 0;
  std::string out_path;

  double wer() const {
    return static_cast<double>(word_errors) /
           static_cast<double>(ref_words > 0 ? ref_words : 1);
  }
};

// Beam decoding with shallow fusion over the manifest; writes one
// "id<TAB>text" line per utterance to decode_out. When the manifest carries
// transcripts the summary aggregates corpus-level word errors.
DecodeSummary run_decode(const RunConfig &config);

struct BenchPoint {
  int64_t t = 0;
  uint64_t multi_rate_attention_flops = 0;
  uint64_t single_rate_attention_flops = 0;
  double flop_ratio = 0.0;
  double multi_rate_seconds = 0.0;
  double single_rate_seconds = 0.0;
  double wall_ratio = 0.0;
};

// Forward-pass comparison at equal depth and width: the configured
// multi-rate encoder against a single-rate encoder that keeps every block at
// the full frame rate and the widest dimension.
BenchPoint run_bench_point(const RunConfig &config, int64_t t);

// Runs run_bench_point at config.bench_t and writes one JSON line to
// bench_out (stdout when empty).
BenchPoint run_bench(const RunConfig &config);

}  // namespace zssl
