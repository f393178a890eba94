// Copyright 2026 the speclab authors
// SPDX-License-Identifier: Apache-2.0
#include "speclab/sampling.hpp"

#include "speclab/tensor.hpp"

#include <algorithm>
#include <numeric>

namespace speclab::dec {

void DecodePolicy::validate() const {
  if (temperature <= 0.0) throw std::invalid_argument("DecodePolicy: temperature must be positive");
  if (mode == DecodeMode::kTopP && (top_p <= 0.0 || top_p > 1.0)) {
    throw std::invalid_argument("DecodePolicy: top_p must be in (0, 1]");
  }
  if (max_tokens < 0) throw std::invalid_argument("DecodePolicy: max_tokens must be >= 0");
}

Vec top_p_filter(const Vec& probabilities, double p) {
  if (p <= 0.0 || p > 1.0) throw std::invalid_argument("top_p_filter: p must be in (0, 1]");
  if (std::abs(probabilities.sum() - 1.0) > 1e-9 || probabilities.minCoeff() < 0.0) {
    throw std::invalid_argument("top_p_filter: input is not a probability vector");
  }
  const auto n = static_cast<int>(probabilities.size());
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return probabilities[a] > probabilities[b];  // stable keeps lower ids first on ties
  });

  Vec out = Vec::Zero(n);
  double kept = 0.0;
  for (int idx : order) {
    out[idx] = probabilities[idx];
    kept += probabilities[idx];
    if (kept >= p) break;
  }
  out /= kept;
  return out;
}

Vec policy_dist(const Vec& logits, const DecodePolicy& policy) {
  policy.validate();
  if (policy.mode == DecodeMode::kGreedy) {
    Vec out = Vec::Zero(logits.size());
    out[argmax_index(logits)] = 1.0;
    return out;
  }
  Vec probs = num::softmax_row(logits, policy.temperature);
  if (policy.top_p >= 1.0) return probs;
  return top_p_filter(probs, policy.top_p);
}

Vec residual_dist(const Vec& p_target, const Vec& p_draft) {
  if (p_target.size() != p_draft.size()) {
    throw std::invalid_argument("residual_dist: size mismatch");
  }
  if (std::abs(p_target.sum() - 1.0) > 1e-9 || std::abs(p_draft.sum() - 1.0) > 1e-9) {
    throw std::invalid_argument("residual_dist: inputs must sum to 1");
  }
  Vec res = (p_target - p_draft).cwiseMax(0.0);
  const double mass = res.sum();
  if (mass < 1e-12) return p_target;  // p_T == p_D: documented fallback
  return res / mass;
}

TokenId residual_sample(const Vec& p_target, const Vec& p_draft, Rng& rng) {
  return static_cast<TokenId>(sample_index(residual_dist(p_target, p_draft), rng));
}

TokenId sample_token(const Vec& probabilities, Rng& rng) {
  return static_cast<TokenId>(sample_index(probabilities, rng));
}

}  // namespace speclab::dec
