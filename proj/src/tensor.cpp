// Copyright 2025-2026 The zssl Authors
//
// Licensed under the Apache License, Version 2.0

#include "zssl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace zssl {

int64_t shape_numel(const Shape &shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape &shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

uint64_t hash_string(std::string_view s) {
  // FNV-1a, stable across platforms.
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto d = std::make_shared<TensorData>();
  d->value.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
  d->shape = std::move(shape);
  d->requires_grad = requires_grad;
  return Tensor(std::move(d));
}

Tensor Tensor::full(Shape shape, double fill, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.d_->value.begin(), t.d_->value.end(), fill);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> value, bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(value.size())) {
    throw ShapeError("from: shape " + shape_str(shape) + " wants " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(value.size()));
  }
  auto d = std::make_shared<TensorData>();
  d->shape = std::move(shape);
  d->value = std::move(value);
  d->requires_grad = requires_grad;
  return Tensor(std::move(d));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from({}, {v}, requires_grad);
}

Tensor Tensor::randn(Shape shape, std::mt19937_64 &rng, double stddev,
                     bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::normal_distribution<double> dist(0.0, stddev);
  for (double &v : t.d_->value) v = dist(rng);
  return t;
}

Tensor Tensor::clone() const {
  Tensor t = from(d_->shape, d_->value, d_->requires_grad);
  return t;
}

int64_t Tensor::rows() const {
  if (rank() != 2) {
    throw ShapeError("rows: want rank-2 tensor, got " + shape_str(shape()));
  }
  return d_->shape[0];
}

int64_t Tensor::cols() const {
  if (rank() != 2) {
    throw ShapeError("cols: want rank-2 tensor, got " + shape_str(shape()));
  }
  return d_->shape[1];
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item: tensor " + shape_str(shape()) +
                     " has more than one element");
  }
  return d_->value[0];
}

std::span<double> Tensor::grad_buffer() const {
  if (d_->grad.empty()) d_->grad.assign(d_->value.size(), 0.0);
  return {d_->grad.data(), d_->grad.size()};
}

void Tensor::zero_grad() const {
  std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
}

bool Tensor::all_finite() const {
  for (double v : d_->value) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Tape bookkeeping

bool Tape::tracking(std::initializer_list<Tensor> inputs) const {
  if (!grad_enabled_) return false;
  for (const Tensor &t : inputs) {
    if (t.defined() && t.requires_grad()) return true;
  }
  return false;
}

bool Tape::tracking(const std::vector<Tensor> &inputs) const {
  if (!grad_enabled_) return false;
  for (const Tensor &t : inputs) {
    if (t.defined() && t.requires_grad()) return true;
  }
  return false;
}

void Tape::count_op(std::string_view op, uint64_t flops) {
  ++op_calls_[std::string(op)];
  flops_total_ += flops;
  if (flops > 0 && !category_stack_.empty()) {
    flops_by_category_[category_stack_.back()] += flops;
  }
}

void Tape::record_node(std::string_view op, std::initializer_list<Tensor> inputs,
                       const Tensor &output, std::function<void()> backward_fn) {
  record_node(op, std::vector<Tensor>(inputs), output, std::move(backward_fn));
}

void Tape::record_node(std::string_view op, const std::vector<Tensor> &inputs,
                       const Tensor &output, std::function<void()> backward_fn) {
  Node node;
  node.op.assign(op.data(), op.size());
  for (const Tensor &t : inputs) {
    if (t.defined()) node.inputs.push_back(t.d_);
  }
  node.output = output.d_;
  node.fn = std::move(backward_fn);
  produced_.insert(node.output.get());
  nodes_.push_back(std::move(node));
}

uint64_t Tape::op_count(std::string_view op) const {
  auto it = op_calls_.find(std::string(op));
  return it == op_calls_.end() ? 0 : it->second;
}

uint64_t Tape::flops_in(std::string_view category) const {
  auto it = flops_by_category_.find(std::string(category));
  return it == flops_by_category_.end() ? 0 : it->second;
}

void Tape::reset_counters() {
  op_calls_.clear();
  flops_total_ = 0;
  flops_by_category_.clear();
}

Tape::CategoryScope::CategoryScope(Tape &tape, std::string name) : tape_(tape) {
  tape_.category_stack_.push_back(std::move(name));
}

Tape::CategoryScope::~CategoryScope() { tape_.category_stack_.pop_back(); }

void Tape::backward(const Tensor &loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a defined scalar");
  }
  if (!produced_.count(loss.raw())) {
    throw ContractError("backward: loss was not produced on this tape");
  }
  // Restrict the sweep to ancestors of the loss so unrelated nodes recorded
  // on the same tape (e.g. a second utterance in a batch) are untouched.
  std::unordered_map<const TensorData *, std::vector<size_t>> producers;
  for (size_t i = 0; i < nodes_.size(); ++i) {
    producers[nodes_[i].output.get()].push_back(i);
  }
  std::vector<char> needed(nodes_.size(), 0);
  std::vector<const TensorData *> frontier{loss.raw()};
  std::unordered_set<const TensorData *> seen{loss.raw()};
  while (!frontier.empty()) {
    const TensorData *t = frontier.back();
    frontier.pop_back();
    auto it = producers.find(t);
    if (it == producers.end()) continue;
    for (size_t idx : it->second) {
      if (needed[idx]) continue;
      needed[idx] = 1;
      for (const auto &in : nodes_[idx].inputs) {
        if (seen.insert(in.get()).second) frontier.push_back(in.get());
      }
    }
  }
  loss.grad_buffer()[0] = 1.0;
  for (size_t i = nodes_.size(); i-- > 0;) {
    if (!needed[i]) continue;
    // Nodes whose output never received gradient contribute nothing; their
    // backward fns check for an empty grad buffer themselves.
    nodes_[i].fn();
  }
}

// ---------------------------------------------------------------------------
// Elementwise and linear primitives

namespace {

void check_same_shape(const char *op, const Tensor &a, const Tensor &b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": mismatched shapes " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

// Common backward guard: a node whose output got no gradient is a no-op.
inline bool no_out_grad(const Tensor &out) { return !out.has_grad(); }

}  // namespace

Tensor Tape::add(const Tensor &a, const Tensor &b) {
  check_same_shape("add", a, b);
  Tensor out = Tensor::zeros(a.shape());
  const double *pa = a.data(), *pb = b.data();
  double *po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  count_op("add", static_cast<uint64_t>(n));
  if (tracking({a, b})) {
    mark_output(out, true);
    record_node("add", {a, b}, out, [a, b, out]() mutable {
      if (no_out_grad(out)) return;
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_buffer();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_buffer();
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor Tape::sub(const Tensor &a, const Tensor &b) {
  check_same_shape("sub", a, b);
  Tensor out = Tensor::zeros(a.shape());
  const double *pa = a.data(), *pb = b.data();
  double *po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  count_op("sub", static_cast<uint64_t>(n));
  if (tracking({a, b})) {
    mark_output(out, true);
    record_node("sub", {a, b}, out, [a, b, out]() mutable {
      if (no_out_grad(out)) return;
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_buffer();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_buffer();
        for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor Tape::mul(const Tensor &a, const Tensor &b) {
  check_same_shape("mul", a, b);
  Tensor out = Tensor::zeros(a.shape());
  const double *pa = a.data(), *pb = b.data();
  double *po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  count_op("mul", static_cast<uint64_t>(n));
  if (tracking({a, b})) {
    mark_output(out, true);
    record_node("mul", {a, b}, out, [a, b, out]() mutable {
      if (no_out_grad(out)) return;
      auto g = out.grad();
      const double *pa = a.data(), *pb = b.data();
      if (a.requires_grad()) {
        auto ga = a.grad_buffer();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pb[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_buffer();
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * pa[i];
      }
    });
  }
  return out;
}

Tensor Tape::scale(const Tensor &a, double c) {
  Tensor out = Tensor::zeros(a.shape());
  const double *pa = a.data();
  double *po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * c;
  count_op("scale", static_cast<uint64_t>(n));
  if (tracking({a})) {
    mark_output(out, true);
    record_node("scale", {a}, out, [a, out, c]() mutable {
      if (no_out_grad(out)) return;
      auto g = out.grad();
      auto ga = a.grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    });
  }
  return out;
}

Tensor Tape::add_bias(const Tensor &x, const Tensor &bias) {
  if (x.rank() != 2 || bias.rank() != 1 || x.cols() != bias.dim(0)) {
    throw ShapeError("add_bias: want [T,D] + [D], got " + shape_str(x.shape()) +
                     " + " + shape_str(bias.shape()));
  }
  const int64_t t = x.rows(), d = x.cols();
  Tensor out = Tensor::zeros(x.shape());
  const double *px = x.data(), *pb = bias.data();
  double *po = out.data();
  for (int64_t i = 0; i < t; ++i) {
    for (int64_t j = 0; j < d; ++j) po[i * d + j] = px[i * d + j] + pb[j];
  }
  count_op("add_bias", static_cast<uint64_t>(t * d));
  if (tracking({x, bias})) {
    mark_output(out, true);
    record_node("add_bias", {x, bias}, out, [x, bias, out, t, d]() mutable {
      if (no_out_grad(out)) return;
      auto g = out.grad();
      if (x.requires_grad()) {
        auto gx = x.grad_buffer();
        for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (bias.requires_grad()) {
        auto gb = bias.grad_buffer();
        for (int64_t i = 0; i < t; ++i) {
          for (int64_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
        }
      }
    });
  }
  return out;
}

namespace {

// C[m,n] += A[m,k] * B[k,n] over raw buffers, with optional transposes.
void gemm_acc(int64_t m, int64_t n, int64_t k, const double *a, bool ta,
              const double *b, bool tb, double *c) {
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t p = 0; p < k; ++p) {
      const double av = ta ? a[p * m + i] : a[i * k + p];
      if (av == 0.0) continue;
      const double *brow = tb ? nullptr : b + p * n;
      double *crow = c + i * n;
      if (tb) {
        for (int64_t j = 0; j < n; ++j) crow[j] += av * b[j * k + p];
      } else {
        for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

}  // namespace

Tensor Tape::matmul(const Tensor &a, const Tensor &b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  }
  const int64_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = Tensor::zeros({m, n});
  gemm_acc(m, n, k, a.data(), false, b.data(), false, out.data());
  count_op("matmul", static_cast<uint64_t>(2 * m * n * k));
  if (tracking({a, b})) {
    mark_output(out, true);
    record_node("matmul", {a, b}, out, [a, b, out, m, n, k]() mutable {
      if (no_out_grad(out)) return;
      const double *g = out.grad().data();
      if (a.requires_grad()) {
        // dA = dC * B^T
        gemm_acc(m, k, n, g, false, b.data(), true, a.grad_buffer().data());
      }
      if (b.requires_grad()) {
        // dB = A^T * dC
        gemm_acc(k, n, m, a.data(), true, g, false, b.grad_buffer().data());
      }
    });
  }
  return out;
}

Tensor Tape::transpose(const Tensor &a) {
  const int64_t m = a.rows(), n = a.cols();
  Tensor out = Tensor::zeros({n, m});
  const double *pa = a.data();
  double *po = out.data();
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) po[j * m + i] = pa[i * n + j];
  }
  count_op("transpose");
  if (tracking({a})) {
    mark_output(out, true);
    record_node("transpose", {a}, out, [a, out, m, n]() mutable {
      if (no_out_grad(out)) return;
      auto g = out.grad();
      auto ga = a.grad_buffer();
      for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
      }
    });
  }
  return out;
}

Tensor Tape::tanh(const Tensor &a) {
  Tensor out = Tensor::zeros(a.shape());
  const double *pa = a.data();
  double *po = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = std::tanh(pa[i]);
  count_op("tanh", static_cast<uint64_t>(n));
  if (tracking({a})) {
    mark_output(out, true);
    record_node("tanh", {a}, out, [a, out]() mutable {
      if (no_out_grad(out)) return;
      auto g = out.grad();
      auto ga = a.grad_buffer();
      const double *po = out.data();
      for (size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * (1.0 - po[i] * po[i]);
      }
    });
  }
  return out;
}

Tensor Tape::sum(const Tensor &a) {
  double s = 0.0;
  for (double v : a.value()) s += v;
  Tensor out = Tensor::scalar(s);
  count_op("sum", static_cast<uint64_t>(a.numel()));
  if (tracking({a})) {
    mark_output(out, true);
    record_node("sum", {a}, out, [a, out]() mutable {
      if (no_out_grad(out)) return;
      const double g = out.grad()[0];
      auto ga = a.grad_buffer();
      for (double &v : ga) v += g;
    });
  }
  return out;
}

Tensor Tape::mean(const Tensor &a) {
  if (a.numel() == 0) throw ShapeError("mean: empty tensor");
  double s = 0.0;
  for (double v : a.value()) s += v;
  const double inv = 1.0 / static_cast<double>(a.numel());
  Tensor out = Tensor::scalar(s * inv);
  count_op("mean", static_cast<uint64_t>(a.numel()));
  if (tracking({a})) {
    mark_output(out, true);
    record_node("mean", {a}, out, [a, out, inv]() mutable {
      if (no_out_grad(out)) return;
      const double g = out.grad()[0] * inv;
      auto ga = a.grad_buffer();
      for (double &v : ga) v += g;
    });
  }
  return out;
}

Tensor Tape::take_rows(const Tensor &a, int64_t start, int64_t count) {
  const int64_t m = a.rows(), n = a.cols();
  if (start < 0 || count < 0 || start + count > m) {
    throw ShapeError("take_rows: range [" + std::to_string(start) + "," +
                     std::to_string(start + count) + ") outside " +
                     shape_str(a.shape()));
  }
  Tensor out = Tensor::zeros({count, n});
  std::copy_n(a.data() + start * n, count * n, out.data());
  count_op("take_rows");
  if (tracking({a})) {
    mark_output(out, true);
    record_node("take_rows", {a}, out, [a, out, start, n]() mutable {
      if (no_out_grad(out)) return;
      auto g = out.grad();
      auto ga = a.grad_buffer();
      for (size_t i = 0; i < g.size(); ++i) {
        ga[static_cast<size_t>(start * n) + i] += g[i];
      }
    });
  }
  return out;
}

Tensor Tape::take_cols(const Tensor &a, int64_t start, int64_t count) {
  const int64_t m = a.rows(), n = a.cols();
  if (start < 0 || count < 0 || start + count > n) {
    throw ShapeError("take_cols: range [" + std::to_string(start) + "," +
                     std::to_string(start + count) + ") outside " +
                     shape_str(a.shape()));
  }
  Tensor out = Tensor::zeros({m, count});
  const double *pa = a.data();
  double *po = out.data();
  for (int64_t i = 0; i < m; ++i) {
    std::copy_n(pa + i * n + start, count, po + i * count);
  }
  count_op("take_cols");
  if (tracking({a})) {
    mark_output(out, true);
    record_node("take_cols", {a}, out, [a, out, start, n, count]() mutable {
      if (no_out_grad(out)) return;
      auto g = out.grad();
      auto ga = a.grad_buffer();
      const int64_t m = out.rows();
      for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < count; ++j) {
          ga[i * n + start + j] += g[i * count + j];
        }
      }
    });
  }
  return out;
}

Tensor Tape::concat_rows(const std::vector<Tensor> &parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const int64_t n = parts[0].cols();
  int64_t m = 0;
  for (const Tensor &p : parts) {
    if (p.cols() != n) {
      throw ShapeError("concat_rows: column mismatch " + shape_str(p.shape()) +
                       " vs " + shape_str(parts[0].shape()));
    }
    m += p.rows();
  }
  Tensor out = Tensor::zeros({m, n});
  double *po = out.data();
  for (const Tensor &p : parts) {
    std::copy_n(p.data(), p.numel(), po);
    po += p.numel();
  }
  count_op("concat_rows");
  if (tracking(parts)) {
    mark_output(out, true);
    std::vector<Tensor> held = parts;
    record_node("concat_rows", parts, out, [held, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      size_t off = 0;
      for (Tensor &p : held) {
        const size_t n = static_cast<size_t>(p.numel());
        if (p.requires_grad()) {
          auto gp = p.grad_buffer();
          for (size_t i = 0; i < n; ++i) gp[i] += g[off + i];
        }
        off += n;
      }
    });
  }
  return out;
}

Tensor Tape::concat_cols(const std::vector<Tensor> &parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const int64_t m = parts[0].rows();
  int64_t n = 0;
  for (const Tensor &p : parts) {
    if (p.rows() != m) {
      throw ShapeError("concat_cols: row mismatch " + shape_str(p.shape()) +
                       " vs " + shape_str(parts[0].shape()));
    }
    n += p.cols();
  }
  Tensor out = Tensor::zeros({m, n});
  double *po = out.data();
  int64_t off = 0;
  for (const Tensor &p : parts) {
    const int64_t pc = p.cols();
    const double *pp = p.data();
    for (int64_t i = 0; i < m; ++i) {
      std::copy_n(pp + i * pc, pc, po + i * n + off);
    }
    off += pc;
  }
  count_op("concat_cols");
  if (tracking(parts)) {
    mark_output(out, true);
    std::vector<Tensor> held = parts;
    record_node("concat_cols", parts, out, [held, out, m, n]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      int64_t off = 0;
      for (Tensor &p : held) {
        const int64_t pc = p.cols();
        if (p.requires_grad()) {
          auto gp = p.grad_buffer();
          for (int64_t i = 0; i < m; ++i) {
            for (int64_t j = 0; j < pc; ++j) {
              gp[i * pc + j] += g[i * n + off + j];
            }
          }
        }
        off += pc;
      }
    });
  }
  return out;
}

}  // namespace zssl
