// Copyright 2026 the speclab authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "speclab/common.hpp"

namespace speclab::dec {

// ============================================================================
// Decode policy
// ============================================================================

enum class DecodeMode { kGreedy, kTopP };

struct DecodePolicy {
  DecodeMode mode = DecodeMode::kGreedy;
  double top_p = 0.7;        // nucleus mass, used in kTopP mode only
  double temperature = 1.0;  // logit divisor
  int max_tokens = 128;
  uint64_t seed = 0;         // ignored in greedy mode

  void validate() const;
};

// ============================================================================
// Distribution transforms
// ============================================================================

// Nucleus truncation: keeps the smallest prefix of tokens in descending
// probability order (ties toward the lower id) whose cumulative mass reaches
// p, zeroes the rest and renormalizes. Input must sum to 1 within 1e-9.
Vec top_p_filter(const Vec& probabilities, double p);

// The distribution a decode step actually draws from: greedy collapses to a
// one-hot at the argmax (ties toward the lower id); top-p applies temperature
// softmax then nucleus truncation.
Vec policy_dist(const Vec& logits, const DecodePolicy& policy);

// Residual distribution normalize(max(p_target - p_draft, 0)) used at the
// first rejected position. When the residual mass vanishes (p_T == p_D) the
// target distribution itself is returned as the documented fallback.
Vec residual_dist(const Vec& p_target, const Vec& p_draft);

TokenId residual_sample(const Vec& p_target, const Vec& p_draft, Rng& rng);

// Inverse-CDF draw in ascending id order.
TokenId sample_token(const Vec& probabilities, Rng& rng);

}  // namespace speclab::dec
