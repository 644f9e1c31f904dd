// Copyright 2025-2026 The zssl Authors
//
// Masked-prediction objective: span mask sampling, learnable-embedding
// substitution, and the two pre-training losses — cosine-similarity
// classification over codebook embeddings, and the simplified plain-logit
// cross-entropy. Both reduce through one shared masked softmax-CE kernel.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <random>
#include <string>
#include <vector>

#include "zssl/tensor.hpp"

namespace zssl {

struct MaskSpec {
  double start_prob = 0.08;  // per-frame span-start probability
  int64_t span_len = 10;
  int64_t min_masks = 2;     // minimum masked frames when t >= span_len
  uint64_t seed = 0;
};

// Sorted unique masked frame indices.
using MaskSet = std::vector<int64_t>;

// Each frame starts a span of span_len frames (clipped at t) independently
// with probability start_prob; extra uniformly-placed spans top the count up
// to min_masks. Deterministic under seed.
MaskSet sample_masks(const MaskSpec &spec, int64_t t);

// Expected asymptotic masked fraction 1 - (1-p)^l, ignoring edge effects.
double expected_mask_fraction(const MaskSpec &spec);

// Masked rows replaced by the learnable embedding; unmasked rows bit-equal
// to the input. Gradient reaches mask_embed from masked rows only.
Tensor apply_mask(Tape &tape, const Tensor &x, const MaskSet &m,
                  const Tensor &mask_embed);

struct PredictionHead {
  Tensor a;     // projection [D, W]
  Tensor e;     // codebook embeddings [C, W]
  double tau = 0.1;  // logit scaler (> 0)
};

// Mean over masked frames of -log softmax(sim(A o_t, e)/tau)[c_t], with
// cosine similarity and epsilon-floored norms.
Tensor hubert_loss(Tape &tape, const PredictionHead &head, const Tensor &o,
                   const LabelSequence &labels, const MaskSet &m);

// Mean over masked frames of -log softmax(A o_t)[c_t]; no codebook, no
// normalization — the memory-motivated simplification.
Tensor ce_loss(Tape &tape, const Tensor &a, const Tensor &o,
               const LabelSequence &labels, const MaskSet &m);

// objective.mask_embed [d_model]; objective.proj [d_model, C] (plain-logit
// path) or [d_model, embed_width] plus objective.codebook [C, embed_width]
// (cosine path).
ParamMap objective_init_params(int64_t d_model, int64_t num_classes,
                               std::mt19937_64 &rng,
                               int64_t codebook_width = 0,
                               const std::string &prefix = "objective.");

// Truncates features, labels, and mask to a shared length when off-by-one
// rounding makes them disagree; large gaps are contract errors.
struct AlignedBatch {
  Tensor features;
  LabelSequence labels;
  MaskSet mask;
};
AlignedBatch align_to_labels(Tape &tape, const Tensor &o,
                             const LabelSequence &labels, const MaskSet &m,
                             int64_t max_slack = 2);

}  // namespace zssl
