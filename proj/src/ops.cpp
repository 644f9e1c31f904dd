// Copyright 2025-2026 The zssl Authors
//
// Domain primitives recorded on the tape: activations, normalizations,
// convolutions, sequence plumbing, and the shared masked cross-entropy.
//
// Licensed under the Apache License, Version 2.0

#include <algorithm>
#include <cmath>

#include "zssl/tensor.hpp"

namespace zssl {

namespace {

constexpr double kNormEps = 1e-5;     // variance epsilon for affine norms
constexpr double kRmsFloor = 1e-8;    // bias_norm RMS floor, cosine norm floor

// log(1 + e^t) without overflow.
inline double softplus(double t) {
  return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

inline double sigmoid(double t) {
  return t > 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}

inline bool no_out_grad(const Tensor &out) { return !out.has_grad(); }

}  // namespace

// ---------------------------------------------------------------------------
// Row-wise softmax family

Tensor Tape::log_softmax(const Tensor &x) {
  const int64_t t = x.rows(), c = x.cols();
  Tensor out = Tensor::zeros(x.shape());
  const double *px = x.data();
  double *po = out.data();
  for (int64_t i = 0; i < t; ++i) {
    const double *row = px + i * c;
    double m = row[0];
    for (int64_t j = 1; j < c; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    for (int64_t j = 0; j < c; ++j) z += std::exp(row[j] - m);
    const double lse = m + std::log(z);
    for (int64_t j = 0; j < c; ++j) po[i * c + j] = row[j] - lse;
  }
  count_op("log_softmax", static_cast<uint64_t>(5 * t * c));
  if (tracking({x})) {
    mark_output(out, true);
    record_node("log_softmax", {x}, out, [x, out, t, c]() mutable {
      if (no_out_grad(out)) return;
      auto g = out.grad();
      auto gx = x.grad_buffer();
      const double *po = out.data();
      for (int64_t i = 0; i < t; ++i) {
        double gsum = 0.0;
        for (int64_t j = 0; j < c; ++j) gsum += g[i * c + j];
        for (int64_t j = 0; j < c; ++j) {
          gx[i * c + j] += g[i * c + j] - std::exp(po[i * c + j]) * gsum;
        }
      }
    });
  }
  return out;
}

Tensor Tape::softmax(const Tensor &x) {
  const int64_t t = x.rows(), c = x.cols();
  Tensor out = Tensor::zeros(x.shape());
  const double *px = x.data();
  double *po = out.data();
  for (int64_t i = 0; i < t; ++i) {
    const double *row = px + i * c;
    double m = row[0];
    for (int64_t j = 1; j < c; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    for (int64_t j = 0; j < c; ++j) {
      const double e = std::exp(row[j] - m);
      po[i * c + j] = e;
      z += e;
    }
    for (int64_t j = 0; j < c; ++j) po[i * c + j] /= z;
  }
  count_op("softmax", static_cast<uint64_t>(5 * t * c));
  if (tracking({x})) {
    mark_output(out, true);
    record_node("softmax", {x}, out, [x, out, t, c]() mutable {
      if (no_out_grad(out)) return;
      auto g = out.grad();
      auto gx = x.grad_buffer();
      const double *po = out.data();
      for (int64_t i = 0; i < t; ++i) {
        double dot = 0.0;
        for (int64_t j = 0; j < c; ++j) dot += g[i * c + j] * po[i * c + j];
        for (int64_t j = 0; j < c; ++j) {
          gx[i * c + j] += po[i * c + j] * (g[i * c + j] - dot);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Swoosh activations: softplus shifted so the function passes near zero at
// the origin, with a small negative slope for negative inputs.

namespace {

Tensor swoosh_impl(const Tensor &x, double shift, double offset) {
  Tensor out = Tensor::zeros(x.shape());
  const double *px = x.data();
  double *po = out.data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) {
    po[i] = softplus(px[i] - shift) - 0.08 * px[i] - offset;
  }
  return out;
}

}  // namespace

Tensor Tape::swoosh_r(const Tensor &x) {
  Tensor out = swoosh_impl(x, 1.0, 0.313261687);
  count_op("swoosh_r", static_cast<uint64_t>(4 * x.numel()));
  if (tracking({x})) {
    mark_output(out, true);
    record_node("swoosh_r", {x}, out, [x, out]() mutable {
      if (no_out_grad(out)) return;
      auto g = out.grad();
      auto gx = x.grad_buffer();
      const double *px = x.data();
      for (size_t i = 0; i < g.size(); ++i) {
        gx[i] += g[i] * (sigmoid(px[i] - 1.0) - 0.08);
      }
    });
  }
  return out;
}

Tensor Tape::swoosh_l(const Tensor &x) {
  Tensor out = swoosh_impl(x, 4.0, 0.035);
  count_op("swoosh_l", static_cast<uint64_t>(4 * x.numel()));
  if (tracking({x})) {
    mark_output(out, true);
    record_node("swoosh_l", {x}, out, [x, out]() mutable {
      if (no_out_grad(out)) return;
      auto g = out.grad();
      auto gx = x.grad_buffer();
      const double *px = x.data();
      for (size_t i = 0; i < g.size(); ++i) {
        gx[i] += g[i] * (sigmoid(px[i] - 4.0) - 0.08);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalizations

Tensor Tape::bias_norm(const Tensor &x, const Tensor &bias,
                       const Tensor &log_scale) {
  if (x.rank() != 2 || bias.rank() != 1 || x.cols() != bias.dim(0) ||
      log_scale.numel() != 1) {
    throw ShapeError("bias_norm: want [T,D], [D], scalar; got " +
                     shape_str(x.shape()) + ", " + shape_str(bias.shape()) +
                     ", " + shape_str(log_scale.shape()));
  }
  const int64_t t = x.rows(), d = x.cols();
  const double s = std::exp(log_scale.value()[0]);
  Tensor out = Tensor::zeros(x.shape());
  std::vector<double> rms(static_cast<size_t>(t));
  const double *px = x.data(), *pb = bias.data();
  double *po = out.data();
  for (int64_t i = 0; i < t; ++i) {
    double ss = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      const double dv = px[i * d + j] - pb[j];
      ss += dv * dv;
    }
    const double r = std::max(std::sqrt(ss / static_cast<double>(d)), kRmsFloor);
    rms[static_cast<size_t>(i)] = r;
    const double k = s / r;
    for (int64_t j = 0; j < d; ++j) po[i * d + j] = px[i * d + j] * k;
  }
  count_op("bias_norm", static_cast<uint64_t>(4 * t * d));
  if (tracking({x, bias, log_scale})) {
    mark_output(out, true);
    record_node("bias_norm", {x, bias, log_scale}, out,
                [x, bias, log_scale, out, rms = std::move(rms), s, t, d]() mutable {
      if (no_out_grad(out)) return;
      auto g = out.grad();
      const double *px = x.data(), *pb = bias.data(), *po = out.data();
      for (int64_t i = 0; i < t; ++i) {
        const double r = rms[static_cast<size_t>(i)];
        // dot = sum_j g_j * x_j for this row; also y = s*x/r so
        // d(log_scale) accumulates g . y.
        double dot = 0.0, gy = 0.0;
        for (int64_t j = 0; j < d; ++j) {
          dot += g[i * d + j] * px[i * d + j];
          gy += g[i * d + j] * po[i * d + j];
        }
        if (log_scale.requires_grad()) log_scale.grad_buffer()[0] += gy;
        // When the RMS hit the floor its derivative is zero.
        double ss = 0.0;
        for (int64_t j = 0; j < d; ++j) {
          const double dv = px[i * d + j] - pb[j];
          ss += dv * dv;
        }
        const bool floored = std::sqrt(ss / static_cast<double>(d)) < kRmsFloor;
        const double c = floored ? 0.0
                                 : s * dot / (static_cast<double>(d) * r * r * r);
        if (x.requires_grad()) {
          auto gx = x.grad_buffer();
          for (int64_t j = 0; j < d; ++j) {
            gx[i * d + j] += s / r * g[i * d + j] -
                             c * (px[i * d + j] - pb[j]);
          }
        }
        if (bias.requires_grad()) {
          auto gb = bias.grad_buffer();
          for (int64_t j = 0; j < d; ++j) {
            gb[j] += c * (px[i * d + j] - pb[j]);
          }
        }
      }
    });
  }
  return out;
}

namespace {

// Shared row-normalization backward: given upstream grad w.r.t. the
// normalized row xhat, accumulate grad w.r.t. the raw row.
inline void norm_row_backward(const double *ghat, const double *xhat,
                              double inv_std, int64_t n, double *gx) {
  double gsum = 0.0, gdot = 0.0;
  for (int64_t j = 0; j < n; ++j) {
    gsum += ghat[j];
    gdot += ghat[j] * xhat[j];
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  for (int64_t j = 0; j < n; ++j) {
    gx[j] += inv_std * (ghat[j] - inv_n * gsum - xhat[j] * inv_n * gdot);
  }
}

struct RowNormState {
  std::vector<double> xhat;     // normalized values, row-major
  std::vector<double> inv_std;  // one per row
};

RowNormState normalize_rows(const Tensor &x) {
  const int64_t m = x.rows(), n = x.cols();
  RowNormState st;
  st.xhat.resize(static_cast<size_t>(m * n));
  st.inv_std.resize(static_cast<size_t>(m));
  const double *px = x.data();
  for (int64_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (int64_t j = 0; j < n; ++j) mu += px[i * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      const double dv = px[i * n + j] - mu;
      var += dv * dv;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + kNormEps);
    st.inv_std[static_cast<size_t>(i)] = is;
    for (int64_t j = 0; j < n; ++j) {
      st.xhat[static_cast<size_t>(i * n + j)] = (px[i * n + j] - mu) * is;
    }
  }
  return st;
}

}  // namespace

Tensor Tape::group_norm(const Tensor &x, const Tensor &gamma,
                        const Tensor &beta) {
  if (x.rank() != 2 || gamma.numel() != x.rows() || beta.numel() != x.rows()) {
    throw ShapeError("group_norm: want [C,L] with per-channel affine, got " +
                     shape_str(x.shape()) + " with " +
                     shape_str(gamma.shape()));
  }
  const int64_t c = x.rows(), l = x.cols();
  RowNormState st = normalize_rows(x);
  Tensor out = Tensor::zeros(x.shape());
  double *po = out.data();
  const double *pg = gamma.data(), *pb = beta.data();
  for (int64_t i = 0; i < c; ++i) {
    for (int64_t j = 0; j < l; ++j) {
      po[i * l + j] = pg[i] * st.xhat[static_cast<size_t>(i * l + j)] + pb[i];
    }
  }
  count_op("group_norm", static_cast<uint64_t>(6 * c * l));
  if (tracking({x, gamma, beta})) {
    mark_output(out, true);
    record_node("group_norm", {x, gamma, beta}, out,
                [x, gamma, beta, out, st = std::move(st), c, l]() mutable {
      if (no_out_grad(out)) return;
      auto g = out.grad();
      const double *pg = gamma.data();
      std::vector<double> ghat(static_cast<size_t>(l));
      for (int64_t i = 0; i < c; ++i) {
        const double *xh = st.xhat.data() + i * l;
        double dgamma = 0.0, dbeta = 0.0;
        for (int64_t j = 0; j < l; ++j) {
          const double gv = g[i * l + j];
          ghat[static_cast<size_t>(j)] = gv * pg[i];
          dgamma += gv * xh[j];
          dbeta += gv;
        }
        if (gamma.requires_grad()) gamma.grad_buffer()[static_cast<size_t>(i)] += dgamma;
        if (beta.requires_grad()) beta.grad_buffer()[static_cast<size_t>(i)] += dbeta;
        if (x.requires_grad()) {
          norm_row_backward(ghat.data(), xh, st.inv_std[static_cast<size_t>(i)],
                            l, x.grad_buffer().data() + i * l);
        }
      }
    });
  }
  return out;
}

Tensor Tape::layer_norm(const Tensor &x, const Tensor &gamma,
                        const Tensor &beta) {
  if (x.rank() != 2 || gamma.numel() != x.cols() || beta.numel() != x.cols()) {
    throw ShapeError("layer_norm: want [T,C] with per-channel affine, got " +
                     shape_str(x.shape()) + " with " +
                     shape_str(gamma.shape()));
  }
  const int64_t t = x.rows(), c = x.cols();
  RowNormState st = normalize_rows(x);
  Tensor out = Tensor::zeros(x.shape());
  double *po = out.data();
  const double *pg = gamma.data(), *pb = beta.data();
  for (int64_t i = 0; i < t; ++i) {
    for (int64_t j = 0; j < c; ++j) {
      po[i * c + j] = pg[j] * st.xhat[static_cast<size_t>(i * c + j)] + pb[j];
    }
  }
  count_op("layer_norm", static_cast<uint64_t>(6 * t * c));
  if (tracking({x, gamma, beta})) {
    mark_output(out, true);
    record_node("layer_norm", {x, gamma, beta}, out,
                [x, gamma, beta, out, st = std::move(st), t, c]() mutable {
      if (no_out_grad(out)) return;
      auto g = out.grad();
      const double *pg = gamma.data();
      std::vector<double> ghat(static_cast<size_t>(c));
      for (int64_t i = 0; i < t; ++i) {
        const double *xh = st.xhat.data() + i * c;
        for (int64_t j = 0; j < c; ++j) {
          const double gv = g[i * c + j];
          ghat[static_cast<size_t>(j)] = gv * pg[j];
          if (gamma.requires_grad()) {
            gamma.grad_buffer()[static_cast<size_t>(j)] += gv * xh[j];
          }
          if (beta.requires_grad()) {
            beta.grad_buffer()[static_cast<size_t>(j)] += gv;
          }
        }
        if (x.requires_grad()) {
          norm_row_backward(ghat.data(), xh, st.inv_std[static_cast<size_t>(i)],
                            c, x.grad_buffer().data() + i * c);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convolutions

Tensor Tape::conv1d(const Tensor &x, const Tensor &w, const Tensor &bias,
                    int64_t stride) {
  if (x.rank() != 2 || w.rank() != 3 || bias.rank() != 1) {
    throw ShapeError("conv1d: want x [C_in,L], w [C_out,C_in,K], bias [C_out]");
  }
  const int64_t c_in = x.rows(), l = x.cols();
  const int64_t c_out = w.dim(0), k = w.dim(2);
  if (w.dim(1) != c_in || bias.dim(0) != c_out) {
    throw ShapeError("conv1d: weight " + shape_str(w.shape()) +
                     " does not match input " + shape_str(x.shape()));
  }
  if (stride < 1 || l < k) {
    throw ShapeError("conv1d: length " + std::to_string(l) +
                     " too short for kernel " + std::to_string(k));
  }
  const int64_t l_out = (l - k) / stride + 1;
  Tensor out = Tensor::zeros({c_out, l_out});
  const double *px = x.data(), *pw = w.data(), *pb = bias.data();
  double *po = out.data();
  for (int64_t o = 0; o < c_out; ++o) {
    for (int64_t t = 0; t < l_out; ++t) {
      double acc = pb[o];
      const int64_t base = t * stride;
      for (int64_t c = 0; c < c_in; ++c) {
        const double *xr = px + c * l + base;
        const double *wr = pw + (o * c_in + c) * k;
        for (int64_t j = 0; j < k; ++j) acc += wr[j] * xr[j];
      }
      po[o * l_out + t] = acc;
    }
  }
  count_op("conv1d", static_cast<uint64_t>(2 * c_out * l_out * c_in * k));
  if (tracking({x, w, bias})) {
    mark_output(out, true);
    record_node("conv1d", {x, w, bias}, out,
                [x, w, bias, out, stride, c_in, l, c_out, k, l_out]() mutable {
      if (no_out_grad(out)) return;
      auto g = out.grad();
      const double *px = x.data(), *pw = w.data();
      for (int64_t o = 0; o < c_out; ++o) {
        for (int64_t t = 0; t < l_out; ++t) {
          const double gv = g[o * l_out + t];
          if (gv == 0.0) continue;
          const int64_t base = t * stride;
          if (bias.requires_grad()) {
            bias.grad_buffer()[static_cast<size_t>(o)] += gv;
          }
          for (int64_t c = 0; c < c_in; ++c) {
            const double *xr = px + c * l + base;
            const double *wr = pw + (o * c_in + c) * k;
            if (w.requires_grad()) {
              double *gw = w.grad_buffer().data() + (o * c_in + c) * k;
              for (int64_t j = 0; j < k; ++j) gw[j] += gv * xr[j];
            }
            if (x.requires_grad()) {
              double *gx = x.grad_buffer().data() + c * l + base;
              for (int64_t j = 0; j < k; ++j) gx[j] += gv * wr[j];
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor Tape::depthwise_conv1d(const Tensor &x, const Tensor &w,
                              const Tensor &bias) {
  if (x.rank() != 2 || w.rank() != 2 || x.cols() != w.rows() ||
      bias.numel() != x.cols()) {
    throw ShapeError("depthwise_conv1d: want x [T,D], w [D,K], bias [D]; got " +
                     shape_str(x.shape()) + ", " + shape_str(w.shape()));
  }
  const int64_t t = x.rows(), d = x.cols(), k = w.cols();
  if (k % 2 == 0) {
    throw ShapeError("depthwise_conv1d: kernel size must be odd, got " +
                     std::to_string(k));
  }
  const int64_t half = k / 2;
  Tensor out = Tensor::zeros(x.shape());
  const double *px = x.data(), *pw = w.data(), *pb = bias.data();
  double *po = out.data();
  for (int64_t i = 0; i < t; ++i) {
    for (int64_t c = 0; c < d; ++c) {
      double acc = pb[c];
      for (int64_t j = 0; j < k; ++j) {
        const int64_t src = i + j - half;
        if (src >= 0 && src < t) acc += pw[c * k + j] * px[src * d + c];
      }
      po[i * d + c] = acc;
    }
  }
  count_op("depthwise_conv1d", static_cast<uint64_t>(2 * t * d * k));
  if (tracking({x, w, bias})) {
    mark_output(out, true);
    record_node("depthwise_conv1d", {x, w, bias}, out,
                [x, w, bias, out, t, d, k, half]() mutable {
      if (no_out_grad(out)) return;
      auto g = out.grad();
      const double *px = x.data(), *pw = w.data();
      for (int64_t i = 0; i < t; ++i) {
        for (int64_t c = 0; c < d; ++c) {
          const double gv = g[i * d + c];
          if (gv == 0.0) continue;
          if (bias.requires_grad()) {
            bias.grad_buffer()[static_cast<size_t>(c)] += gv;
          }
          for (int64_t j = 0; j < k; ++j) {
            const int64_t src = i + j - half;
            if (src < 0 || src >= t) continue;
            if (w.requires_grad()) {
              w.grad_buffer()[static_cast<size_t>(c * k + j)] +=
                  gv * px[src * d + c];
            }
            if (x.requires_grad()) {
              x.grad_buffer()[static_cast<size_t>(src * d + c)] +=
                  gv * pw[c * k + j];
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sequence plumbing

Tensor Tape::downsample_weighted(const Tensor &x, int64_t factor,
                                 const Tensor &w) {
  if (x.rank() != 2 || factor < 1 || w.numel() != factor) {
    throw ShapeError("downsample_weighted: want [T,D] with " +
                     std::to_string(factor) + " weights, got " +
                     shape_str(x.shape()) + " and " + shape_str(w.shape()));
  }
  const int64_t t = x.rows(), d = x.cols();
  const int64_t t_out = (t + factor - 1) / factor;
  // Convex weights via softmax so groups stay on the input's scale.
  std::vector<double> p(static_cast<size_t>(factor));
  {
    const double *pw = w.data();
    double m = pw[0];
    for (int64_t j = 1; j < factor; ++j) m = std::max(m, pw[j]);
    double z = 0.0;
    for (int64_t j = 0; j < factor; ++j) {
      p[static_cast<size_t>(j)] = std::exp(pw[j] - m);
      z += p[static_cast<size_t>(j)];
    }
    for (double &v : p) v /= z;
  }
  Tensor out = Tensor::zeros({t_out, d});
  const double *px = x.data();
  double *po = out.data();
  for (int64_t g = 0; g < t_out; ++g) {
    for (int64_t j = 0; j < factor; ++j) {
      // The final group repeats the last frame past the end.
      const int64_t src = std::min(g * factor + j, t - 1);
      const double pj = p[static_cast<size_t>(j)];
      for (int64_t c = 0; c < d; ++c) {
        po[g * d + c] += pj * px[src * d + c];
      }
    }
  }
  count_op("downsample_weighted", static_cast<uint64_t>(2 * t_out * factor * d));
  if (tracking({x, w})) {
    mark_output(out, true);
    record_node("downsample_weighted", {x, w}, out,
                [x, w, out, p = std::move(p), factor, t, d, t_out]() mutable {
      if (no_out_grad(out)) return;
      auto g = out.grad();
      const double *px = x.data();
      std::vector<double> dp(static_cast<size_t>(factor), 0.0);
      for (int64_t gi = 0; gi < t_out; ++gi) {
        for (int64_t j = 0; j < factor; ++j) {
          const int64_t src = std::min(gi * factor + j, t - 1);
          double dot = 0.0;
          for (int64_t c = 0; c < d; ++c) {
            dot += g[gi * d + c] * px[src * d + c];
          }
          dp[static_cast<size_t>(j)] += dot;
          if (x.requires_grad()) {
            auto gx = x.grad_buffer();
            const double pj = p[static_cast<size_t>(j)];
            for (int64_t c = 0; c < d; ++c) {
              gx[src * d + c] += pj * g[gi * d + c];
            }
          }
        }
      }
      if (w.requires_grad()) {
        double pd = 0.0;
        for (int64_t j = 0; j < factor; ++j) {
          pd += p[static_cast<size_t>(j)] * dp[static_cast<size_t>(j)];
        }
        auto gw = w.grad_buffer();
        for (int64_t j = 0; j < factor; ++j) {
          gw[j] += p[static_cast<size_t>(j)] * (dp[static_cast<size_t>(j)] - pd);
        }
      }
    });
  }
  return out;
}

Tensor Tape::upsample_repeat(const Tensor &x, int64_t factor) {
  if (x.rank() != 2 || factor < 1) {
    throw ShapeError("upsample_repeat: want rank-2 input, factor >= 1");
  }
  const int64_t t = x.rows(), d = x.cols();
  Tensor out = Tensor::zeros({t * factor, d});
  const double *px = x.data();
  double *po = out.data();
  for (int64_t i = 0; i < t; ++i) {
    for (int64_t j = 0; j < factor; ++j) {
      std::copy_n(px + i * d, d, po + (i * factor + j) * d);
    }
  }
  count_op("upsample_repeat");
  if (tracking({x})) {
    mark_output(out, true);
    record_node("upsample_repeat", {x}, out, [x, out, factor, t, d]() mutable {
      if (no_out_grad(out)) return;
      auto g = out.grad();
      auto gx = x.grad_buffer();
      for (int64_t i = 0; i < t; ++i) {
        for (int64_t j = 0; j < factor; ++j) {
          for (int64_t c = 0; c < d; ++c) {
            gx[i * d + c] += g[(i * factor + j) * d + c];
          }
        }
      }
    });
  }
  return out;
}

Tensor Tape::match_channels(const Tensor &x, int64_t d_out) {
  const int64_t t = x.rows(), d_in = x.cols();
  if (d_out < 1) throw ShapeError("match_channels: d_out must be positive");
  Tensor out = Tensor::zeros({t, d_out});
  const int64_t keep = std::min(d_in, d_out);
  const double *px = x.data();
  double *po = out.data();
  for (int64_t i = 0; i < t; ++i) {
    std::copy_n(px + i * d_in, keep, po + i * d_out);
  }
  count_op("match_channels");
  if (tracking({x})) {
    mark_output(out, true);
    record_node("match_channels", {x}, out, [x, out, t, d_in, d_out, keep]() mutable {
      if (no_out_grad(out)) return;
      auto g = out.grad();
      auto gx = x.grad_buffer();
      for (int64_t i = 0; i < t; ++i) {
        for (int64_t j = 0; j < keep; ++j) {
          gx[i * d_in + j] += g[i * d_out + j];
        }
      }
    });
  }
  return out;
}

Tensor Tape::substitute_rows(const Tensor &x, const std::vector<int64_t> &rows,
                             const Tensor &row) {
  if (x.rank() != 2 || row.rank() != 1 || row.dim(0) != x.cols()) {
    throw ShapeError("substitute_rows: want [T,D] and replacement [D], got " +
                     shape_str(x.shape()) + " and " + shape_str(row.shape()));
  }
  const int64_t t = x.rows(), d = x.cols();
  for (int64_t r : rows) {
    if (r < 0 || r >= t) {
      throw ShapeError("substitute_rows: row " + std::to_string(r) +
                       " outside [0," + std::to_string(t) + ")");
    }
  }
  Tensor out = Tensor::zeros(x.shape());
  std::copy_n(x.data(), x.numel(), out.data());
  std::vector<char> replaced(static_cast<size_t>(t), 0);
  for (int64_t r : rows) {
    std::copy_n(row.data(), d, out.data() + r * d);
    replaced[static_cast<size_t>(r)] = 1;
  }
  count_op("substitute_rows");
  if (tracking({x, row})) {
    mark_output(out, true);
    record_node("substitute_rows", {x, row}, out,
                [x, row, out, replaced = std::move(replaced), t, d]() mutable {
      if (no_out_grad(out)) return;
      auto g = out.grad();
      for (int64_t i = 0; i < t; ++i) {
        if (replaced[static_cast<size_t>(i)]) {
          if (row.requires_grad()) {
            auto gr = row.grad_buffer();
            for (int64_t j = 0; j < d; ++j) gr[j] += g[i * d + j];
          }
        } else if (x.requires_grad()) {
          auto gx = x.grad_buffer();
          for (int64_t j = 0; j < d; ++j) gx[i * d + j] += g[i * d + j];
        }
      }
    });
  }
  return out;
}

Tensor Tape::add_rel_pos_bias(const Tensor &logits, const Tensor &table,
                              int64_t t) {
  if (logits.rank() != 2 || table.rank() != 2 || t < 1 ||
      logits.cols() != t || logits.rows() % t != 0 ||
      table.cols() % 2 == 0) {
    throw ShapeError("add_rel_pos_bias: want logits [H*T,T] and table "
                     "[H,2R+1], got " + shape_str(logits.shape()) + " and " +
                     shape_str(table.shape()));
  }
  const int64_t h = logits.rows() / t;
  if (table.rows() != h) {
    throw ShapeError("add_rel_pos_bias: table has " +
                     std::to_string(table.rows()) + " heads, logits imply " +
                     std::to_string(h));
  }
  const int64_t r = (table.cols() - 1) / 2;
  Tensor out = Tensor::zeros(logits.shape());
  const double *pl = logits.data(), *pt = table.data();
  double *po = out.data();
  const int64_t span = table.cols();
  for (int64_t head = 0; head < h; ++head) {
    for (int64_t i = 0; i < t; ++i) {
      for (int64_t j = 0; j < t; ++j) {
        const int64_t off = std::clamp(j - i, -r, r) + r;
        po[(head * t + i) * t + j] =
            pl[(head * t + i) * t + j] + pt[head * span + off];
      }
    }
  }
  count_op("add_rel_pos_bias", static_cast<uint64_t>(h * t * t));
  if (tracking({logits, table})) {
    mark_output(out, true);
    record_node("add_rel_pos_bias", {logits, table}, out,
                [logits, table, out, h, t, r, span]() mutable {
      if (no_out_grad(out)) return;
      auto g = out.grad();
      if (logits.requires_grad()) {
        auto gl = logits.grad_buffer();
        for (size_t i = 0; i < g.size(); ++i) gl[i] += g[i];
      }
      if (table.requires_grad()) {
        auto gt = table.grad_buffer();
        for (int64_t head = 0; head < h; ++head) {
          for (int64_t i = 0; i < t; ++i) {
            for (int64_t j = 0; j < t; ++j) {
              const int64_t off = std::clamp(j - i, -r, r) + r;
              gt[head * span + off] += g[(head * t + i) * t + j];
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Losses

Tensor Tape::cosine_scores(const Tensor &a, const Tensor &b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
    throw ShapeError("cosine_scores: want [T,E] and [C,E], got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const int64_t t = a.rows(), c = b.rows(), e = a.cols();
  std::vector<double> na(static_cast<size_t>(t)), nb(static_cast<size_t>(c));
  const double *pa = a.data(), *pb = b.data();
  for (int64_t i = 0; i < t; ++i) {
    double ss = 0.0;
    for (int64_t j = 0; j < e; ++j) ss += pa[i * e + j] * pa[i * e + j];
    na[static_cast<size_t>(i)] = std::max(std::sqrt(ss), kRmsFloor);
  }
  for (int64_t i = 0; i < c; ++i) {
    double ss = 0.0;
    for (int64_t j = 0; j < e; ++j) ss += pb[i * e + j] * pb[i * e + j];
    nb[static_cast<size_t>(i)] = std::max(std::sqrt(ss), kRmsFloor);
  }
  Tensor out = Tensor::zeros({t, c});
  double *po = out.data();
  for (int64_t i = 0; i < t; ++i) {
    for (int64_t k = 0; k < c; ++k) {
      double dot = 0.0;
      for (int64_t j = 0; j < e; ++j) dot += pa[i * e + j] * pb[k * e + j];
      po[i * c + k] = dot / (na[static_cast<size_t>(i)] * nb[static_cast<size_t>(k)]);
    }
  }
  count_op("cosine_scores", static_cast<uint64_t>(2 * t * c * e));
  if (tracking({a, b})) {
    mark_output(out, true);
    record_node("cosine_scores", {a, b}, out,
                [a, b, out, na = std::move(na), nb = std::move(nb), t, c, e]() mutable {
      if (no_out_grad(out)) return;
      auto g = out.grad();
      const double *pa = a.data(), *pb = b.data(), *po = out.data();
      for (int64_t i = 0; i < t; ++i) {
        const double nai = na[static_cast<size_t>(i)];
        for (int64_t k = 0; k < c; ++k) {
          const double gv = g[i * c + k];
          if (gv == 0.0) continue;
          const double nbk = nb[static_cast<size_t>(k)];
          const double s = po[i * c + k];
          if (a.requires_grad()) {
            auto ga = a.grad_buffer();
            for (int64_t j = 0; j < e; ++j) {
              ga[i * e + j] += gv * (pb[k * e + j] / (nai * nbk) -
                                     s * pa[i * e + j] / (nai * nai));
            }
          }
          if (b.requires_grad()) {
            auto gb = b.grad_buffer();
            for (int64_t j = 0; j < e; ++j) {
              gb[k * e + j] += gv * (pa[i * e + j] / (nai * nbk) -
                                     s * pb[k * e + j] / (nbk * nbk));
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor Tape::masked_softmax_xent(const Tensor &scores,
                                 const LabelSequence &labels,
                                 const std::vector<int64_t> &mask) {
  const int64_t t = scores.rows(), c = scores.cols();
  if (static_cast<int64_t>(labels.size()) != t) {
    throw ShapeError("masked_softmax_xent: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(t) + " frames");
  }
  for (int64_t m : mask) {
    if (m < 0 || m >= t) {
      throw ShapeError("masked_softmax_xent: masked frame " +
                       std::to_string(m) + " outside [0," + std::to_string(t) +
                       ")");
    }
    if (labels[static_cast<size_t>(m)] < 0 ||
        labels[static_cast<size_t>(m)] >= c) {
      throw ShapeError("masked_softmax_xent: label " +
                       std::to_string(labels[static_cast<size_t>(m)]) +
                       " outside [0," + std::to_string(c) + ")");
    }
  }
  const double inv_m =
      mask.empty() ? 0.0 : 1.0 / static_cast<double>(mask.size());
  const double *ps = scores.data();
  double total = 0.0;
  for (int64_t m : mask) {
    const double *row = ps + m * c;
    double mx = row[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int64_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    // (max - target) + log(sum of shifted exps): exact when all scores are
    // equal, since the first term cancels and the log collapses to log(C).
    total += (mx - row[labels[static_cast<size_t>(m)]]) + std::log(z);
  }
  Tensor out = Tensor::scalar(total * inv_m);
  count_op("masked_softmax_xent",
           static_cast<uint64_t>(5 * static_cast<int64_t>(mask.size()) * c));
  if (tracking({scores})) {
    mark_output(out, true);
    record_node("masked_softmax_xent", {scores}, out,
                [scores, out, labels, mask, inv_m, c]() mutable {
      if (no_out_grad(out)) return;
      const double g = out.grad()[0] * inv_m;
      const double *ps = scores.data();
      auto gs = scores.grad_buffer();
      for (int64_t m : mask) {
        const double *row = ps + m * c;
        double mx = row[0];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int64_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
        for (int64_t j = 0; j < c; ++j) {
          gs[m * c + j] += g * std::exp(row[j] - mx) / z;
        }
        gs[m * c + labels[static_cast<size_t>(m)]] -= g;
      }
    });
  }
  return out;
}

}  // namespace zssl
