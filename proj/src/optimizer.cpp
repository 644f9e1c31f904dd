// Copyright 2025-2026 The zssl Authors
//
// Licensed under the Apache License, Version 2.0

#include "zssl/optimizer.hpp"

#include <algorithm>
#include <cmath>

namespace zssl {

namespace {

double rms_of(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double ss = 0.0;
  for (double v : x) ss += v * v;
  return std::sqrt(ss / static_cast<double>(x.size()));
}

}  // namespace

void ScaledAdam::step(ParamMap &params, double lr) {
  if (!std::isfinite(lr)) {
    throw ContractError("scaled_adam_step: non-finite learning rate");
  }
  // Validate every gradient before touching any parameter, so a rejected
  // step leaves the whole model unchanged.
  for (const auto &[name, p] : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) {
      if (!std::isfinite(g)) {
        throw NumericError("scaled_adam_step: non-finite gradient in '" +
                           name + "'");
      }
    }
  }
  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (auto &[name, p] : params) {
    auto mit = m_.find(name);
    if (mit == m_.end()) {
      mit = m_.emplace(name, Tensor::zeros(p.shape())).first;
      v_.emplace(name, Tensor::zeros(p.shape()));
    }
    Tensor &m = mit->second;
    Tensor &v = v_.at(name);
    if (m.shape() != p.shape()) {
      throw ShapeError("scaled_adam_step: state shape " +
                       shape_str(m.shape()) + " does not match '" + name +
                       "' " + shape_str(p.shape()));
    }
    const double g_rms = p.has_grad() ? rms_of(p.grad()) : 0.0;
    const double g_scale = g_rms > 0.0 ? 1.0 / g_rms : 0.0;
    const double p_rms = std::max(rms_of(p.value()), config_.rms_floor);
    double *pm = m.data(), *pv = v.data(), *pp = p.data();
    const int64_t n = p.numel();
    for (int64_t i = 0; i < n; ++i) {
      const double ghat =
          p.has_grad() ? p.grad()[static_cast<size_t>(i)] * g_scale : 0.0;
      pm[i] = b1 * pm[i] + (1.0 - b1) * ghat;
      pv[i] = b2 * pv[i] + (1.0 - b2) * ghat * ghat;
      const double mhat = pm[i] / bc1;
      const double vhat = pv[i] / bc2;
      const double dir = std::clamp(mhat / (std::sqrt(vhat) + config_.eps),
                                    -config_.clamp, config_.clamp);
      pp[i] -= lr * p_rms * dir;
    }
  }
}

void ScaledAdam::save_state(ParamMap &out) const {
  out["opt.step"] = Tensor::scalar(static_cast<double>(step_));
  for (const auto &[name, t] : m_) out["opt.m." + name] = t.clone();
  for (const auto &[name, t] : v_) out["opt.v." + name] = t.clone();
}

void ScaledAdam::load_state(const ParamMap &in) {
  auto it = in.find("opt.step");
  if (it == in.end()) {
    throw IoError("optimizer state missing 'opt.step'");
  }
  step_ = static_cast<int64_t>(it->second.item());
  m_.clear();
  v_.clear();
  for (const auto &[name, t] : in) {
    if (name.starts_with("opt.m.")) {
      m_[name.substr(6)] = t.clone();
    } else if (name.starts_with("opt.v.")) {
      v_[name.substr(6)] = t.clone();
    }
  }
  if (m_.size() != v_.size()) {
    throw IoError("optimizer state has mismatched moment tensors");
  }
}

double eden_lr(const EdenSchedule &sched, double step, double epoch) {
  if (sched.step_warmup <= 0.0 || sched.epoch_warmup <= 0.0) {
    throw ContractError("eden_lr: warmup constants must be positive");
  }
  if (step < 0.0 || epoch < 0.0) {
    throw ContractError("eden_lr: negative step or epoch");
  }
  const double tw2 = sched.step_warmup * sched.step_warmup;
  const double ew2 = sched.epoch_warmup * sched.epoch_warmup;
  const double s = std::pow((step * step + tw2) / tw2, -0.25);
  const double e = std::pow((epoch * epoch + ew2) / ew2, -0.25);
  return sched.base_lr * s * e;
}

}  // namespace zssl
