// Copyright 2025-2026 The zssl Authors
//
// Licensed under the Apache License, Version 2.0

#include "zssl/encoder.hpp"

#include <algorithm>
#include <cmath>

namespace zssl {

namespace {

StackConfig make_stack(int64_t factor, int64_t dim, int64_t blocks,
                       int64_t heads, int64_t ff) {
  StackConfig s;
  s.downsample_factor = factor;
  s.embed_dim = dim;
  s.num_blocks = blocks;
  s.attention_heads = heads;
  s.feedforward_dim = ff;
  return s;
}

constexpr int64_t kFactors[6] = {1, 2, 4, 8, 4, 2};

}  // namespace

EncoderConfig EncoderConfig::make_base() {
  EncoderConfig cfg;
  const int64_t dims[6] = {192, 256, 384, 512, 384, 256};
  const int64_t blocks[6] = {2, 2, 3, 4, 3, 2};
  const int64_t heads[6] = {4, 4, 4, 8, 4, 4};
  for (int i = 0; i < 6; ++i) {
    cfg.stacks.push_back(
        make_stack(kFactors[i], dims[i], blocks[i], heads[i], 3 * dims[i]));
  }
  return cfg;
}

EncoderConfig EncoderConfig::make_small(int64_t base_dim) {
  EncoderConfig cfg;
  for (int i = 0; i < 6; ++i) {
    // Widen the middle stacks the way the full profile does.
    const int64_t dim = base_dim * (i == 3 ? 4 : (i == 2 || i == 4) ? 3
                                   : (i == 1 || i == 5)             ? 2
                                                                    : 1);
    cfg.stacks.push_back(make_stack(kFactors[i], dim, 1, 2, 2 * dim));
  }
  cfg.pos_range = 16;
  return cfg;
}

EncoderConfig EncoderConfig::make_tiny() {
  EncoderConfig cfg;
  cfg.stacks.push_back(make_stack(1, 8, 1, 2, 16));
  cfg.stacks.push_back(make_stack(2, 16, 1, 2, 32));
  cfg.pos_range = 4;
  cfg.conv_kernel = 3;
  return cfg;
}

void EncoderConfig::validate() const {
  if (stacks.empty()) throw ConfigError("encoder wants at least one stack");
  for (size_t i = 0; i < stacks.size(); ++i) {
    const StackConfig &s = stacks[i];
    const bool factor_ok = s.downsample_factor == 1 ||
                           s.downsample_factor == 2 ||
                           s.downsample_factor == 4 || s.downsample_factor == 8;
    if (!factor_ok) {
      throw ConfigError("encoder stack " + std::to_string(i) +
                        ": downsample factor must be one of {1,2,4,8}");
    }
    if (s.embed_dim < 1 || s.num_blocks < 1 || s.feedforward_dim < 1) {
      throw ConfigError("encoder stack " + std::to_string(i) +
                        ": non-positive dimension");
    }
    if (s.attention_heads < 1 || s.embed_dim % s.attention_heads != 0) {
      throw ConfigError("encoder stack " + std::to_string(i) + ": embed_dim " +
                        std::to_string(s.embed_dim) + " not divisible by " +
                        std::to_string(s.attention_heads) + " heads");
    }
  }
  if (stacks.size() == 6) {
    for (int i = 0; i < 6; ++i) {
      if (stacks[static_cast<size_t>(i)].downsample_factor != kFactors[i]) {
        throw ConfigError(
            "six-stack encoder wants downsample factors (1,2,4,8,4,2)");
      }
    }
  }
  if (pos_range < 1) throw ConfigError("encoder pos_range must be >= 1");
  if (conv_kernel < 1 || conv_kernel % 2 == 0) {
    throw ConfigError("encoder conv_kernel must be odd");
  }
}

int64_t EncoderConfig::output_dim() const {
  int64_t d = 0;
  for (const StackConfig &s : stacks) d = std::max(d, s.embed_dim);
  return d;
}

std::vector<int64_t> EncoderConfig::stack_lengths(int64_t t) const {
  std::vector<int64_t> out;
  for (const StackConfig &s : stacks) {
    out.push_back((t + s.downsample_factor - 1) / s.downsample_factor);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

Tensor linear_init(int64_t in, int64_t out, std::mt19937_64 &rng) {
  return Tensor::randn({in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in)),
                       true);
}

std::string block_prefix(const std::string &prefix, size_t stack,
                         int64_t block) {
  return prefix + "stack" + std::to_string(stack) + ".block" +
         std::to_string(block) + ".";
}

}  // namespace

ParamMap encoder_init_params(const EncoderConfig &config, std::mt19937_64 &rng,
                             const std::string &prefix) {
  config.validate();
  ParamMap p;
  for (size_t i = 0; i < config.stacks.size(); ++i) {
    const StackConfig &s = config.stacks[i];
    const int64_t d = s.embed_dim, f = s.feedforward_dim;
    if (s.downsample_factor > 1) {
      p[prefix + "stack" + std::to_string(i) + ".down_w"] =
          Tensor::zeros({s.downsample_factor}, true);
    }
    for (int64_t j = 0; j < s.num_blocks; ++j) {
      const std::string b = block_prefix(prefix, i, j);
      for (const char *ff : {"ff1.", "ff2."}) {
        p[b + ff + "w1"] = linear_init(d, f, rng);
        p[b + ff + "b1"] = Tensor::zeros({f}, true);
        p[b + ff + "w2"] = linear_init(f, d, rng);
        p[b + ff + "b2"] = Tensor::zeros({d}, true);
      }
      p[b + "attn.wq"] = linear_init(d, d, rng);
      p[b + "attn.wk"] = linear_init(d, d, rng);
      p[b + "attn.pos_table"] =
          Tensor::zeros({s.attention_heads, 2 * config.pos_range + 1}, true);
      p[b + "nla.wa"] = linear_init(d, d, rng);
      p[b + "nla.wb"] = linear_init(d, d, rng);
      p[b + "nla.wc"] = linear_init(d, d, rng);
      p[b + "nla.wo"] = linear_init(d, d, rng);
      p[b + "sa1.wv"] = linear_init(d, d, rng);
      p[b + "sa1.wo"] = linear_init(d, d, rng);
      p[b + "sa2.wv"] = linear_init(d, d, rng);
      p[b + "sa2.wo"] = linear_init(d, d, rng);
      p[b + "conv.win"] = linear_init(d, d, rng);
      p[b + "conv.bin"] = Tensor::zeros({d}, true);
      p[b + "conv.wd"] = Tensor::randn(
          {d, config.conv_kernel}, rng,
          1.0 / std::sqrt(static_cast<double>(config.conv_kernel)), true);
      p[b + "conv.bd"] = Tensor::zeros({d}, true);
      p[b + "conv.wout"] = linear_init(d, d, rng);
      p[b + "conv.bout"] = Tensor::zeros({d}, true);
      p[b + "norm.bias"] = Tensor::zeros({d}, true);
      p[b + "norm.log_scale"] = Tensor::scalar(0.0, true);
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forward

namespace {

struct BlockParams {
  const ParamMap &p;
  std::string b;
  const Tensor &at(const char *name) const { return p.at(b + name); }
};

// Split [T,H*dh] into per-head column blocks, multiply each against the
// matching rows of the stacked attention weights, and re-join.
Tensor apply_heads(Tape &tape, const Tensor &weights, const Tensor &v,
                   int64_t heads, int64_t t) {
  const int64_t dh = v.cols() / heads;
  std::vector<Tensor> outs;
  outs.reserve(static_cast<size_t>(heads));
  for (int64_t h = 0; h < heads; ++h) {
    Tensor wh = tape.take_rows(weights, h * t, t);
    Tensor vh = tape.take_cols(v, h * dh, dh);
    Tape::CategoryScope scope(tape, "attention");
    outs.push_back(tape.matmul(wh, vh));
  }
  return tape.concat_cols(outs);
}

// One row-stochastic weight matrix per block: stacked per-head logits from
// scaled dot products plus a clamped relative-position bias, then a single
// softmax shared by every consumer.
Tensor attention_weights(Tape &tape, const BlockParams &bp, const Tensor &x,
                         int64_t heads) {
  const int64_t t = x.rows();
  const int64_t dh = x.cols() / heads;
  Tensor q = tape.matmul(x, bp.at("attn.wq"));
  Tensor k = tape.matmul(x, bp.at("attn.wk"));
  Tensor q_scaled = tape.scale(q, 1.0 / std::sqrt(static_cast<double>(dh)));
  std::vector<Tensor> logit_blocks;
  logit_blocks.reserve(static_cast<size_t>(heads));
  for (int64_t h = 0; h < heads; ++h) {
    Tensor qh = tape.take_cols(q_scaled, h * dh, dh);
    Tensor kh = tape.take_cols(k, h * dh, dh);
    Tensor kt = tape.transpose(kh);
    Tape::CategoryScope scope(tape, "attention");
    logit_blocks.push_back(tape.matmul(qh, kt));
  }
  Tensor logits = tape.concat_rows(logit_blocks);
  logits = tape.add_rel_pos_bias(logits, bp.at("attn.pos_table"), t);
  tape.count_op("attention_weights");
  return tape.softmax(logits);
}

Tensor feed_forward(Tape &tape, const BlockParams &bp, const char *which,
                    const Tensor &x) {
  const std::string w1 = std::string(which) + ".w1";
  const std::string b1 = std::string(which) + ".b1";
  const std::string w2 = std::string(which) + ".w2";
  const std::string b2 = std::string(which) + ".b2";
  Tensor h = tape.add_bias(tape.matmul(x, bp.p.at(bp.b + w1)),
                           bp.p.at(bp.b + b1));
  h = tape.swoosh_l(h);
  return tape.add_bias(tape.matmul(h, bp.p.at(bp.b + w2)),
                       bp.p.at(bp.b + b2));
}

Tensor self_attention(Tape &tape, const BlockParams &bp, const char *which,
                      const Tensor &x, const Tensor &weights, int64_t heads) {
  const std::string wv = std::string(which) + ".wv";
  const std::string wo = std::string(which) + ".wo";
  Tensor v = tape.matmul(x, bp.p.at(bp.b + wv));
  Tensor ctx = apply_heads(tape, weights, v, heads, x.rows());
  return tape.matmul(ctx, bp.p.at(bp.b + wo));
}

// Gated variant sharing the block's attention weights: the tanh-gated
// product stream is attended, then modulated by a third projection.
Tensor non_linear_attention(Tape &tape, const BlockParams &bp, const Tensor &x,
                            const Tensor &weights, int64_t heads) {
  Tensor a = tape.matmul(x, bp.at("nla.wa"));
  Tensor b = tape.tanh(tape.matmul(x, bp.at("nla.wb")));
  Tensor c = tape.matmul(x, bp.at("nla.wc"));
  Tensor gated = tape.mul(b, c);
  Tensor ctx = apply_heads(tape, weights, gated, heads, x.rows());
  return tape.matmul(tape.mul(a, ctx), bp.at("nla.wo"));
}

Tensor conv_module(Tape &tape, const BlockParams &bp, const Tensor &x) {
  Tensor h = tape.add_bias(tape.matmul(x, bp.at("conv.win")),
                           bp.at("conv.bin"));
  h = tape.depthwise_conv1d(h, bp.at("conv.wd"), bp.at("conv.bd"));
  h = tape.swoosh_r(h);
  return tape.add_bias(tape.matmul(h, bp.at("conv.wout")),
                       bp.at("conv.bout"));
}

Tensor encoder_block(Tape &tape, const BlockParams &bp, const Tensor &x,
                     int64_t heads) {
  Tensor h = tape.add(x, feed_forward(tape, bp, "ff1", x));
  Tensor weights = attention_weights(tape, bp, h, heads);
  h = tape.add(h, non_linear_attention(tape, bp, h, weights, heads));
  h = tape.add(h, self_attention(tape, bp, "sa1", h, weights, heads));
  h = tape.add(h, conv_module(tape, bp, h));
  h = tape.add(h, feed_forward(tape, bp, "ff2", h));
  h = tape.add(h, self_attention(tape, bp, "sa2", h, weights, heads));
  return tape.bias_norm(h, bp.at("norm.bias"), bp.at("norm.log_scale"));
}

}  // namespace

Tensor encoder_forward(Tape &tape, const EncoderConfig &config,
                       const ParamMap &params, const Tensor &x,
                       const std::string &prefix,
                       std::vector<Tensor> *stack_taps) {
  config.validate();
  if (x.rank() != 2 || x.cols() != config.input_dim()) {
    throw ShapeError("encoder_forward: want [T," +
                     std::to_string(config.input_dim()) + "], got " +
                     shape_str(x.shape()));
  }
  const int64_t t = x.rows();
  Tensor stream = x;
  std::vector<Tensor> stack_outputs;
  for (size_t i = 0; i < config.stacks.size(); ++i) {
    const StackConfig &s = config.stacks[i];
    Tensor h = tape.match_channels(stream, s.embed_dim);
    if (s.downsample_factor > 1) {
      h = tape.downsample_weighted(
          h, s.downsample_factor,
          params.at(prefix + "stack" + std::to_string(i) + ".down_w"));
    }
    for (int64_t j = 0; j < s.num_blocks; ++j) {
      BlockParams bp{params, block_prefix(prefix, i, j)};
      h = encoder_block(tape, bp, h, s.attention_heads);
      if (!h.all_finite()) {
        throw NumericError("encoder stack " + std::to_string(i) + " block " +
                           std::to_string(j) + " produced non-finite values");
      }
    }
    if (s.downsample_factor > 1) {
      h = tape.take_rows(tape.upsample_repeat(h, s.downsample_factor), 0, t);
    }
    stack_outputs.push_back(h);
    stream = h;
  }
  if (stack_taps != nullptr) *stack_taps = stack_outputs;
  return assemble_output(tape, stack_outputs);
}

Tensor assemble_output(Tape &tape, const std::vector<Tensor> &stack_outputs) {
  if (stack_outputs.empty()) {
    throw ContractError("assemble_output: no stack outputs");
  }
  int64_t d_max = 0;
  for (const Tensor &s : stack_outputs) d_max = std::max(d_max, s.cols());
  std::vector<Tensor> segments;
  int64_t d = 0;
  while (d < d_max) {
    // Last stack in encoder order whose width covers channel d.
    size_t pick = stack_outputs.size();
    for (size_t i = stack_outputs.size(); i-- > 0;) {
      if (stack_outputs[i].cols() > d) {
        pick = i;
        break;
      }
    }
    const int64_t end = stack_outputs[pick].cols();
    segments.push_back(tape.take_cols(stack_outputs[pick], d, end - d));
    d = end;
  }
  return segments.size() == 1 ? segments[0] : tape.concat_cols(segments);
}

// ---------------------------------------------------------------------------
// Attention FLOP oracles

namespace {

uint64_t block_attention_flops(int64_t t_prime, int64_t d) {
  // One logit product (2*T'^2*D) and three applications (3 * 2*T'^2*D).
  return 8ULL * static_cast<uint64_t>(t_prime) * static_cast<uint64_t>(t_prime) *
         static_cast<uint64_t>(d);
}

}  // namespace

uint64_t attention_flops_oracle(const EncoderConfig &config, int64_t t) {
  uint64_t total = 0;
  const std::vector<int64_t> lengths = config.stack_lengths(t);
  for (size_t i = 0; i < config.stacks.size(); ++i) {
    total += static_cast<uint64_t>(config.stacks[i].num_blocks) *
             block_attention_flops(lengths[i], config.stacks[i].embed_dim);
  }
  return total;
}

uint64_t transformer_attention_flops_oracle(const EncoderConfig &config,
                                            int64_t t) {
  uint64_t blocks = 0;
  for (const StackConfig &s : config.stacks) {
    blocks += static_cast<uint64_t>(s.num_blocks);
  }
  return blocks * block_attention_flops(t, config.output_dim());
}

}  // namespace zssl
