// Copyright 2026 the speclab authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "speclab/decode.hpp"
#include "speclab/training.hpp"

namespace speclab::metrics {

// ============================================================================
// Text-overlap metrics (single reference, character-level token units)
// ============================================================================

struct MetricTriple {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Clipped n-gram overlap: precision over candidate n-grams, recall over
// reference n-grams, harmonic-mean F1. Empty n-gram sets score zero.
MetricTriple rouge_n(const TokenSeq& candidate, const TokenSeq& reference, int n);

// Longest-common-subsequence variant.
MetricTriple rouge_l(const TokenSeq& candidate, const TokenSeq& reference);

// Geometric mean of clipped n-gram precisions n = 1..4 with add-one smoothing
// on n > 1 and the standard brevity penalty. Single reference, uniform 1/4
// weights. Note the smoothing choice makes absolute values comparable only
// within this implementation.
double bleu_4(const TokenSeq& candidate, const TokenSeq& reference);

struct ScoreReport {
  MetricTriple rouge1, rouge2, rougeL;
  double bleu4 = 0.0;
  int sample_count = 0;
};

// Greedy/policy decoding of every eval prompt followed by character-level
// scoring against the reference response. Deterministic under a fixed seed.
ScoreReport eval_generation(const lm::LanguageModel& model, const lm::Vocab& vocab,
                            const std::vector<train::SftPair>& eval_set,
                            const dec::DecodePolicy& policy);

// ============================================================================
// Acceptance statistics over decode traces
// ============================================================================

struct AcceptanceStats {
  double acceptance_rate = 0.0;        // accepted / proposed draft tokens
  double mean_accepted_run = 0.0;      // accepted per proposal block
  double tokens_per_target_call = 0.0; // emitted tokens per target forward
};

AcceptanceStats acceptance_stats(const std::vector<dec::DecodeTrace>& traces);

}  // namespace speclab::metrics
