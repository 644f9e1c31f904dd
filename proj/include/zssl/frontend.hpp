// Copyright 2025-2026 The zssl Authors
//
// Raw-waveform convolutional feature extractor (16 kHz in, 50 Hz out), an
// analytic activation-memory estimator for its normalization layouts, and
// the MFCC-style feature path used to bootstrap clustering targets.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <random>
#include <string>
#include <vector>

#include "zssl/tensor.hpp"

namespace zssl {

enum class NormKind {
  kNone,
  kGroupNormFullPrecision,
  kLayerNormFullPrecision,
};

struct ConvLayerSpec {
  int64_t in_channels = 0;
  int64_t out_channels = 0;
  int64_t kernel = 0;
  int64_t stride = 1;
  NormKind normalization = NormKind::kNone;
};

struct FrontendConfig {
  std::vector<ConvLayerSpec> layers;  // exactly 7
  int64_t sample_rate = 16000;

  // Standard 7-layer geometry (kernels 10,3,3,3,3,2,2; strides 5,2,2,2,2,2,2)
  // with one full-precision GroupNorm after the first layer. `channels`
  // scales the width; 512 is the published size, smaller values suit tests.
  static FrontendConfig make_default(int64_t channels = 512,
                                     int64_t sample_rate = 16000);
  // Same geometry with LayerNorm after every layer. Costs more activation
  // memory than make_default but keeps feature magnitudes near unit scale
  // at any depth, so fresh stacks train reliably; the training pipeline
  // builds this layout.
  static FrontendConfig make_layer_norm_everywhere(int64_t channels = 512,
                                                   int64_t sample_rate = 16000);

  void validate() const;           // throws ConfigError
  int64_t total_stride() const;    // product of strides (320 at 16 kHz)
  int64_t receptive_field() const; // minimum sample count for one frame
  // Valid-convolution length recurrence applied layer by layer; negative
  // intermediate lengths collapse to 0.
  int64_t output_length(int64_t samples) const;
  int64_t output_channels() const;
};

// Learnable parameters: frontend.conv{i}.{w,b} plus frontend.conv{i}.norm.{gamma,beta}
// for layers with normalization.
ParamMap frontend_init_params(const FrontendConfig &config,
                              std::mt19937_64 &rng,
                              const std::string &prefix = "frontend.");

// wave: [1,S] -> features [T,C_out] at 50 Hz, SwooshR after every layer.
Tensor frontend_extract(Tape &tape, const FrontendConfig &config,
                        const ParamMap &params, const Tensor &wave,
                        const std::string &prefix = "frontend.");

// Analytic activation footprint of one forward pass: per layer,
// batch * C_out * (seconds * sample_rate / cumulative_stride) elements at
// `act_bytes` each, plus the same count again at `norm_bytes` when the layer
// re-materializes a full-precision normalization. Real-valued on purpose —
// it is an estimator (exactly linear in batch and seconds), not an
// allocator model.
double estimate_activation_bytes(const FrontendConfig &config, int64_t batch,
                                 double seconds, double norm_bytes = 4.0,
                                 double act_bytes = 2.0);

// wave: [1,S] -> [T, n_ceps] cepstra (25 ms window, 10 ms hop), or
// [T, 3*n_ceps] with deltas and delta-deltas appended when 3*n_ceps == 39.
// Log energies are floored at ln(1e-10). Pure function, never on a tape.
Tensor mfcc_like(const Tensor &wave, int64_t n_mels, int64_t n_ceps,
                 int64_t sample_rate = 16000);

// Center frequency helper exposed for the tone-location test.
double mel_of_hz(double hz);

}  // namespace zssl
