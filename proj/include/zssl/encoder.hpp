// Copyright 2025-2026 The zssl Authors
//
// Six-stack encoder with U-Net-style temporal down/upsampling, channel
// truncate-or-pad between stacks, one attention-weight computation per block
// shared by three consumers, and most-recent-wins output assembly.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <random>
#include <string>
#include <vector>

#include "zssl/tensor.hpp"

namespace zssl {

struct StackConfig {
  int64_t downsample_factor = 1;  // one of {1,2,4,8}, relative to 50 Hz
  int64_t embed_dim = 0;
  int64_t num_blocks = 1;
  int64_t attention_heads = 1;
  int64_t feedforward_dim = 0;
};

struct EncoderConfig {
  std::vector<StackConfig> stacks;
  int64_t pos_range = 64;   // relative-position clamp R; table spans 2R+1
  int64_t conv_kernel = 5;  // depthwise kernel, odd

  // Published-scale profile: factors (1,2,4,8,4,2), dims
  // (192,256,384,512,384,256), blocks (2,2,3,4,3,2).
  static EncoderConfig make_base();
  // Same six-stack shape scaled down for tests and desk-scale training.
  static EncoderConfig make_small(int64_t base_dim = 16);
  // Two-stack profile for exhaustive gradient checks.
  static EncoderConfig make_tiny();

  void validate() const;  // throws ConfigError
  int64_t output_dim() const;
  int64_t input_dim() const { return stacks.front().embed_dim; }
  // Internal sequence length per stack for a 50 Hz input of length t.
  std::vector<int64_t> stack_lengths(int64_t t) const;
};

ParamMap encoder_init_params(const EncoderConfig &config, std::mt19937_64 &rng,
                             const std::string &prefix = "encoder.");

// x: [T, stacks[0].embed_dim] at 50 Hz -> [T, output_dim]. Throws
// NumericError naming the stack and block if activations go non-finite.
// When `stack_taps` is given it receives each stack's output restored to the
// 50 Hz grid ([T, stack_dim]) — the per-depth feature views that downstream
// clustering can draw targets from.
Tensor encoder_forward(Tape &tape, const EncoderConfig &config,
                       const ParamMap &params, const Tensor &x,
                       const std::string &prefix = "encoder.",
                       std::vector<Tensor> *stack_taps = nullptr);

// For each output channel take the value from the LAST stack (in encoder
// order) whose width exceeds that channel index.
Tensor assemble_output(Tape &tape, const std::vector<Tensor> &stack_outputs);

// Analytic count of the attention matmul FLOPs the tape attributes to the
// "attention" category for one forward pass: 8 * T'^2 * D per block (one
// logit product plus three weight applications).
uint64_t attention_flops_oracle(const EncoderConfig &config, int64_t t);
// The same block count and width D_max held at 50 Hz throughout — the
// single-rate baseline the speedup surrogate compares against.
uint64_t transformer_attention_flops_oracle(const EncoderConfig &config,
                                            int64_t t);

}  // namespace zssl
