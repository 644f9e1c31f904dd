// Copyright 2025-2026 The zssl Authors
//
// Dense float64 tensors with reverse-mode automatic differentiation on an
// explicit tape. A tape and the tensors recorded on it belong to one worker;
// independent tapes may run concurrently.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "zssl/error.hpp"

namespace zssl {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape &shape);
std::string shape_str(const Shape &shape);

struct TensorData {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
};

// Value-semantic handle to a shared buffer. Copying a Tensor aliases the
// underlying storage; ops always allocate fresh outputs.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double fill, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> value,
                     bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  // Gaussian init, deterministic under the caller's generator.
  static Tensor randn(Shape shape, std::mt19937_64 &rng, double stddev = 1.0,
                      bool requires_grad = false);
  // Deep copy of the values; grad state is not copied.
  Tensor clone() const;

  bool defined() const { return d_ != nullptr; }
  const Shape &shape() const { return d_->shape; }
  int64_t rank() const { return static_cast<int64_t>(d_->shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(d_->value.size()); }
  int64_t dim(int64_t i) const { return d_->shape[static_cast<size_t>(i)]; }
  // Rank-2 helpers.
  int64_t rows() const;
  int64_t cols() const;

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool b) { d_->requires_grad = b; }

  double item() const;

  std::span<double> value() { return {d_->value.data(), d_->value.size()}; }
  std::span<const double> value() const {
    return {d_->value.data(), d_->value.size()};
  }
  double *data() { return d_->value.data(); }
  const double *data() const { return d_->value.data(); }

  bool has_grad() const { return !d_->grad.empty(); }
  std::span<const double> grad() const { return {d_->grad.data(), d_->grad.size()}; }
  // Allocates (zero-filled) on first use. Accumulation is always additive;
  // callers zero grads explicitly between steps. Const because a Tensor is a
  // handle: the buffer lives in the shared storage, not the handle.
  std::span<double> grad_buffer() const;
  void zero_grad() const;
  void clear_grad() const { d_->grad.clear(); }

  bool all_finite() const;

  TensorData *raw() const { return d_.get(); }
  bool same_data(const Tensor &other) const { return d_ == other.d_; }

 private:
  explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}
  std::shared_ptr<TensorData> d_;
  friend class Tape;
};

using ParamMap = std::map<std::string, Tensor, std::less<>>;
using LabelSequence = std::vector<int64_t>;

// Records primitive applications in execution order and replays their
// backward rules exactly once each, in reverse. Also keeps per-op call and
// FLOP counters used by the benchmark surrogates.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape &) = delete;
  Tape &operator=(const Tape &) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  void set_grad_enabled(bool b) { grad_enabled_ = b; }

  // ---- core primitives ----
  Tensor add(const Tensor &a, const Tensor &b);
  Tensor sub(const Tensor &a, const Tensor &b);
  Tensor mul(const Tensor &a, const Tensor &b);
  Tensor scale(const Tensor &a, double c);
  Tensor add_bias(const Tensor &x, const Tensor &bias);  // [T,D] + [D]
  Tensor matmul(const Tensor &a, const Tensor &b);
  Tensor transpose(const Tensor &a);
  Tensor tanh(const Tensor &a);
  Tensor sum(const Tensor &a);
  Tensor mean(const Tensor &a);
  Tensor take_rows(const Tensor &a, int64_t start, int64_t count);
  Tensor take_cols(const Tensor &a, int64_t start, int64_t count);
  Tensor concat_rows(const std::vector<Tensor> &parts);
  Tensor concat_cols(const std::vector<Tensor> &parts);

  // ---- nonlinearities and normalization ----
  Tensor log_softmax(const Tensor &x);  // per row, max-subtracted
  Tensor softmax(const Tensor &x);      // per row
  Tensor swoosh_r(const Tensor &x);
  Tensor swoosh_l(const Tensor &x);
  // out[t] = x[t] / max(rms(x[t] - bias), 1e-8) * exp(log_scale)
  Tensor bias_norm(const Tensor &x, const Tensor &bias, const Tensor &log_scale);
  // [C,L]: each row normalized over its columns, per-row affine. This is
  // GroupNorm with one channel per group when rows are channels.
  Tensor group_norm(const Tensor &x, const Tensor &gamma, const Tensor &beta);
  // [T,C]: each row normalized over its columns, per-column affine.
  Tensor layer_norm(const Tensor &x, const Tensor &gamma, const Tensor &beta);

  // ---- convolution ----
  // x: [C_in, L], w: [C_out, C_in, K], bias: [C_out]; valid conv, stride >= 1.
  Tensor conv1d(const Tensor &x, const Tensor &w, const Tensor &bias,
                int64_t stride);
  // x: [T, D], w: [D, K], bias: [D]; per-channel conv over time, zero-padded
  // so the output length equals T (K odd).
  Tensor depthwise_conv1d(const Tensor &x, const Tensor &w, const Tensor &bias);

  // ---- sequence plumbing ----
  // Non-overlapping groups of `factor` frames combined with softmax(w)
  // weights; the tail group repeats the last frame.
  Tensor downsample_weighted(const Tensor &x, int64_t factor, const Tensor &w);
  Tensor upsample_repeat(const Tensor &x, int64_t factor);
  // Keep the first d_out channels or append zero channels.
  Tensor match_channels(const Tensor &x, int64_t d_out);
  // Rows listed in `rows` are replaced by `row`; `row` receives gradient from
  // those rows only.
  Tensor substitute_rows(const Tensor &x, const std::vector<int64_t> &rows,
                         const Tensor &row);
  // logits: [H*T, T]; table: [H, 2R+1]; adds table[h, clamp(j-i,-R,R)+R].
  Tensor add_rel_pos_bias(const Tensor &logits, const Tensor &table, int64_t t);

  // ---- losses ----
  // a: [T,E], b: [C,E] -> [T,C] of cosine similarities, norms floored at 1e-8.
  Tensor cosine_scores(const Tensor &a, const Tensor &b);
  // Mean over `mask` rows of -log softmax(scores[t])[labels[t]]. Empty mask
  // yields 0. Shared kernel for both pre-training losses.
  Tensor masked_softmax_xent(const Tensor &scores, const LabelSequence &labels,
                             const std::vector<int64_t> &mask);

  // ---- autodiff ----
  void backward(const Tensor &loss);

  // ---- extension hooks for module-specific primitives ----
  bool tracking(std::initializer_list<Tensor> inputs) const;
  bool tracking(const std::vector<Tensor> &inputs) const;
  void count_op(std::string_view op, uint64_t flops = 0);
  void record_node(std::string_view op, std::initializer_list<Tensor> inputs,
                   const Tensor &output, std::function<void()> backward_fn);
  void record_node(std::string_view op, const std::vector<Tensor> &inputs,
                   const Tensor &output, std::function<void()> backward_fn);

  // ---- counters ----
  uint64_t op_count(std::string_view op) const;
  uint64_t flops() const { return flops_total_; }
  uint64_t flops_in(std::string_view category) const;
  const std::map<std::string, uint64_t> &op_counts() const { return op_calls_; }
  void reset_counters();
  size_t node_count() const { return nodes_.size(); }

  // Attributes FLOPs of enclosed ops to a named counter.
  class CategoryScope {
   public:
    CategoryScope(Tape &tape, std::string name);
    ~CategoryScope();
    CategoryScope(const CategoryScope &) = delete;
    CategoryScope &operator=(const CategoryScope &) = delete;

   private:
    Tape &tape_;
  };

 private:
  struct Node {
    std::string op;
    std::vector<std::shared_ptr<TensorData>> inputs;
    std::shared_ptr<TensorData> output;
    std::function<void()> fn;
  };

  void mark_output(Tensor &out, bool tracked) {
    out.raw()->requires_grad = tracked;
  }

  bool grad_enabled_ = true;
  std::vector<Node> nodes_;
  std::unordered_set<const TensorData *> produced_;
  std::map<std::string, uint64_t> op_calls_;
  uint64_t flops_total_ = 0;
  std::map<std::string, uint64_t> flops_by_category_;
  std::vector<std::string> category_stack_;
};

// splitmix64; used to derive independent deterministic seed streams.
uint64_t mix_seed(uint64_t a, uint64_t b);
uint64_t hash_string(std::string_view s);

}  // namespace zssl
