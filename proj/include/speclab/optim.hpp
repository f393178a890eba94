// Copyright 2026 the speclab authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "speclab/tensor.hpp"

namespace speclab::num {

// ============================================================================
// Learning-rate schedule
// ============================================================================

// Linear warmup from 0 to lr_max over round(warmup_ratio * total_steps)
// steps, then cosine decay from lr_max to lr_min over the remainder.
struct LrSchedule {
  double lr_max = 1e-3;
  double lr_min = 0.0;
  double warmup_ratio = 0.05;
  int total_steps = 1;
  // Constant schedules (stage-1 style) are expressed as lr_min == lr_max
  // with warmup_ratio 0.

  int warmup_steps() const;
  void validate() const;
};

double lr_at(const LrSchedule& s, int step);

// ============================================================================
// Adam
// ============================================================================

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Mat m;
  Mat v;
  int64_t t = 0;
};

// One bias-corrected Adam update of `p` from its gradient buffer.
void adam_step(Tensor& p, AdamState& state, double lr, const AdamConfig& cfg = {});

// Convenience wrapper owning per-parameter state for a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<Tensor*> params, AdamConfig cfg = {});

  void zero_grad();
  void step(double lr);

  const std::vector<Tensor*>& params() const { return params_; }

 private:
  std::vector<Tensor*> params_;
  std::vector<AdamState> state_;
  AdamConfig cfg_;
};

}  // namespace speclab::num
