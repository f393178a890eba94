// Copyright 2026 the speclab authors
// SPDX-License-Identifier: Apache-2.0
#include "speclab/optim.hpp"

#include <cmath>

namespace speclab::num {

int LrSchedule::warmup_steps() const {
  return static_cast<int>(std::llround(warmup_ratio * total_steps));
}

void LrSchedule::validate() const {
  if (lr_min > lr_max) throw std::invalid_argument("LrSchedule: lr_min > lr_max");
  if (warmup_ratio < 0.0 || warmup_ratio > 1.0) {
    throw std::invalid_argument("LrSchedule: warmup_ratio must be in [0,1]");
  }
  if (total_steps <= 0) throw std::invalid_argument("LrSchedule: total_steps must be positive");
}

double lr_at(const LrSchedule& s, int step) {
  s.validate();
  if (step < 0 || step > s.total_steps) throw std::invalid_argument("lr_at: step out of range");
  const int warmup = s.warmup_steps();
  if (step < warmup) {
    return s.lr_max * static_cast<double>(step) / warmup;
  }
  const int decay_steps = s.total_steps - warmup;
  if (decay_steps == 0) return s.lr_max;
  const double progress = static_cast<double>(step - warmup) / decay_steps;
  return s.lr_min + 0.5 * (s.lr_max - s.lr_min) * (1.0 + std::cos(M_PI * progress));
}

void adam_step(Tensor& p, AdamState& state, double lr, const AdamConfig& cfg) {
  if (!p.has_grad()) throw std::logic_error("adam_step: parameter has no gradient");
  if (state.t == 0) {
    state.m = Mat::Zero(p.value().rows(), p.value().cols());
    state.v = Mat::Zero(p.value().rows(), p.value().cols());
  }
  state.t += 1;
  const Mat& g = p.grad();
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * g;
  state.v = cfg.beta2 * state.v.array().matrix() + (1.0 - cfg.beta2) * g.array().square().matrix();
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  p.value().array() -=
      lr * (state.m.array() / bc1) / ((state.v.array() / bc2).sqrt() + cfg.eps);
}

Adam::Adam(std::vector<Tensor*> params, AdamConfig cfg)
    : params_(std::move(params)), state_(params_.size()), cfg_(cfg) {
  for (Tensor* p : params_) {
    if (!p->has_grad()) p->enable_grad();
  }
}

void Adam::zero_grad() {
  for (Tensor* p : params_) p->zero_grad();
}

void Adam::step(double lr) {
  for (size_t i = 0; i < params_.size(); ++i) adam_step(*params_[i], state_[i], lr, cfg_);
}

}  // namespace speclab::num
