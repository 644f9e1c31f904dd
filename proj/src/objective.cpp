// Copyright 2025-2026 The zssl Authors
//
// Licensed under the Apache License, Version 2.0

#include "zssl/objective.hpp"

#include <algorithm>
#include <cmath>

namespace zssl {

namespace {

double unit_uniform(std::mt19937_64 &rng) {
  // 53-bit mantissa draw; avoids distribution-object portability concerns.
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

void add_span(std::vector<char> &masked, int64_t start, int64_t span_len) {
  const int64_t t = static_cast<int64_t>(masked.size());
  for (int64_t i = start; i < std::min(start + span_len, t); ++i) {
    masked[static_cast<size_t>(i)] = 1;
  }
}

}  // namespace

MaskSet sample_masks(const MaskSpec &spec, int64_t t) {
  if (t < 1) throw ContractError("sample_masks: want t >= 1");
  if (spec.start_prob < 0.0 || spec.start_prob > 1.0 || spec.span_len < 1) {
    throw ContractError("sample_masks: want 0 <= p <= 1 and span_len >= 1");
  }
  std::mt19937_64 rng(spec.seed);
  std::vector<char> masked(static_cast<size_t>(t), 0);
  for (int64_t i = 0; i < t; ++i) {
    if (unit_uniform(rng) < spec.start_prob) add_span(masked, i, spec.span_len);
  }
  auto count = [&masked]() {
    return std::count(masked.begin(), masked.end(), char(1));
  };
  if (t >= spec.span_len) {
    while (count() < spec.min_masks) {
      const int64_t start = static_cast<int64_t>(
          unit_uniform(rng) * static_cast<double>(t));
      add_span(masked, std::min(start, t - 1), spec.span_len);
    }
  }
  MaskSet out;
  for (int64_t i = 0; i < t; ++i) {
    if (masked[static_cast<size_t>(i)]) out.push_back(i);
  }
  return out;
}

double expected_mask_fraction(const MaskSpec &spec) {
  return 1.0 - std::pow(1.0 - spec.start_prob,
                        static_cast<double>(spec.span_len));
}

Tensor apply_mask(Tape &tape, const Tensor &x, const MaskSet &m,
                  const Tensor &mask_embed) {
  if (m.empty()) return x;
  return tape.substitute_rows(x, m, mask_embed);
}

Tensor hubert_loss(Tape &tape, const PredictionHead &head, const Tensor &o,
                   const LabelSequence &labels, const MaskSet &m) {
  if (head.e.rows() < 2) {
    throw ContractError("hubert_loss: codebook wants at least 2 classes");
  }
  if (head.tau <= 0.0) {
    throw ContractError("hubert_loss: logit scaler must be positive");
  }
  Tensor proj = tape.matmul(o, head.a);                 // [T,W]
  Tensor sims = tape.cosine_scores(proj, head.e);       // [T,C]
  Tensor scaled = tape.scale(sims, 1.0 / head.tau);
  return tape.masked_softmax_xent(scaled, labels, m);
}

Tensor ce_loss(Tape &tape, const Tensor &a, const Tensor &o,
               const LabelSequence &labels, const MaskSet &m) {
  Tensor logits = tape.matmul(o, a);                    // [T,C]
  return tape.masked_softmax_xent(logits, labels, m);
}

ParamMap objective_init_params(int64_t d_model, int64_t num_classes,
                               std::mt19937_64 &rng, int64_t codebook_width,
                               const std::string &prefix) {
  if (d_model < 1 || num_classes < 2) {
    throw ContractError("objective_init_params: want d_model >= 1, C >= 2");
  }
  ParamMap p;
  p[prefix + "mask_embed"] =
      Tensor::randn({d_model}, rng, 0.1, true);
  const int64_t w = codebook_width > 0 ? codebook_width : num_classes;
  // A small head keeps the initial logits near zero, so the first loss sits
  // at ln C (uniform predictions). The optimizer's trust-region updates are
  // relative to parameter scale, so the head still grows quickly once the
  // gradient direction stabilizes.
  p[prefix + "proj"] = Tensor::randn(
      {d_model, w}, rng, 0.1 / std::sqrt(static_cast<double>(d_model)), true);
  if (codebook_width > 0) {
    p[prefix + "codebook"] = Tensor::randn({num_classes, codebook_width}, rng,
                                           1.0, true);
  }
  return p;
}

AlignedBatch align_to_labels(Tape &tape, const Tensor &o,
                             const LabelSequence &labels, const MaskSet &m,
                             int64_t max_slack) {
  const int64_t t_o = o.rows();
  const int64_t t_l = static_cast<int64_t>(labels.size());
  if (std::llabs(t_o - t_l) > max_slack) {
    throw ContractError("align_to_labels: feature length " +
                        std::to_string(t_o) + " vs label length " +
                        std::to_string(t_l) + " differ beyond rounding slack");
  }
  const int64_t t = std::min(t_o, t_l);
  AlignedBatch out;
  out.features = t == t_o ? o : tape.take_rows(o, 0, t);
  out.labels.assign(labels.begin(), labels.begin() + t);
  for (int64_t idx : m) {
    if (idx < t) out.mask.push_back(idx);
  }
  return out;
}

}  // namespace zssl
