// Copyright 2025-2026 The zssl Authors
//
// Parameter-scale-invariant Adam variant plus the inverse-fourth-root
// learning-rate schedule with step and epoch warmup.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "zssl/tensor.hpp"

namespace zssl {

struct ScaledAdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;        // denominator floor
  double rms_floor = 1e-5;  // parameter-RMS floor
  double clamp = 10.0;      // per-element bound on the update direction
};

// Update rule per tensor, with ghat = g / rms(g) (zero gradient stays zero):
//   m <- b1*m + (1-b1)*ghat;  v <- b2*v + (1-b2)*ghat^2
//   dir = clamp(mhat / (sqrt(vhat) + eps))
//   theta <- theta - lr * max(rms(theta), rms_floor) * dir
// Normalizing the incoming gradient makes the trajectory exactly invariant
// to positive per-tensor gradient rescaling — including histories whose
// scale factor changes every step — while leaving the direction mhat/vhat
// semantics intact. The parameter-RMS factor makes the update magnitude
// 1-homogeneous in the parameter scale.
class ScaledAdam {
 public:
  explicit ScaledAdam(ScaledAdamConfig config = {}) : config_(config) {}

  // Reads each tensor's accumulated gradient (missing buffer = zero
  // gradient) and applies one update. Throws NumericError naming the tensor
  // on non-finite gradients, leaving all parameters untouched.
  void step(ParamMap &params, double lr);

  int64_t step_count() const { return step_; }
  const ScaledAdamConfig &config() const { return config_; }

  // Moments and step counter under "opt." names, for exact resume.
  void save_state(ParamMap &out) const;
  void load_state(const ParamMap &in);

 private:
  ScaledAdamConfig config_;
  int64_t step_ = 0;
  std::map<std::string, Tensor, std::less<>> m_;
  std::map<std::string, Tensor, std::less<>> v_;
};

struct EdenSchedule {
  double base_lr = 0.045;      // pre-training default; 1e-3 for fine-tuning
  double step_warmup = 7500.0;
  double epoch_warmup = 3.5;
};

// base_lr * ((step^2 + t_w^2)/t_w^2)^(-1/4) * ((epoch^2 + e_w^2)/e_w^2)^(-1/4)
double eden_lr(const EdenSchedule &sched, double step, double epoch);

}  // namespace zssl
