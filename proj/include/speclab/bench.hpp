// Copyright 2026 the speclab authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "speclab/decode.hpp"
#include "speclab/metrics.hpp"

#include <map>

namespace speclab::bench {

// ============================================================================
// Grid configuration
// ============================================================================

struct BenchCell {
  std::string name;
  std::string method;      // "autoregressive" | "spd" | "prompt_lookup"
  std::string draft;       // draft-registry key for spd cells
  int block_size = 3;
  dec::AcceptRule rule = dec::AcceptRule::kPaperExactMatch;
  dec::DecodeMode mode = dec::DecodeMode::kGreedy;
  double top_p = 0.7;
  double temperature = 1.0;
  int lookup_order = 3;    // n-gram order for prompt_lookup cells
};

struct BenchConfig {
  std::vector<TokenSeq> prompts;
  std::vector<BenchCell> cells;
  int repetitions = 3;     // timed repetitions (median reported)
  int warmup = 1;          // untimed warmup iterations
  int max_tokens = 96;
  uint64_t seed = 17;
  // Model-draft cells must satisfy target FLOPs >= this multiple of draft
  // FLOPs, so wall-clock speedups are observable at desk scale.
  double min_flop_ratio = 20.0;
  // Relative spread of repetition timings above this flags (not fails) the
  // cell.
  double variance_flag_threshold = 0.5;

  void validate() const;
};

struct CellResult {
  BenchCell cell;
  double tokens_per_second = 0.0;  // median over repetitions
  double speedup = 0.0;            // vs the same-mode autoregressive cell
  double acceptance_rate = 0.0;
  double mean_accepted_run = 0.0;
  double tokens_per_target_call = 0.0;
  int64_t emitted_tokens = 0;
  int64_t target_calls = 0;
  int64_t draft_calls = 0;
  bool variance_flagged = false;
  std::vector<double> rep_tokens_per_second;
};

struct BenchReport {
  std::vector<CellResult> cells;
  std::string target_description;
  double target_flops_per_token = 0.0;
  std::map<std::string, double> draft_flops_per_token;
  std::string environment;  // compiler / library / hardware fingerprint
  int max_tokens = 0;
  int repetitions = 0;
  uint64_t seed = 0;
};

// ============================================================================
// Operations
// ============================================================================

// Runs every grid cell single-concurrency against the shared prompt set.
// Speedups are computed against the first autoregressive cell with the same
// decode mode, whose own speedup is exactly 1 by construction. Trace-derived
// fields are identical across repetitions (fixed seeds); only wall-clock
// fields vary.
BenchReport run_bench(const lm::LanguageModel& target,
                      const std::map<std::string, dec::DraftSource*>& drafts,
                      const BenchConfig& cfg);

// Expected speedup under an i.i.d. per-token acceptance model: tokens per
// block (1 - beta^(n+1)) / (1 - beta) with the bonus token, over a block cost
// of n * cost_ratio + 1 target units.
double analytic_speedup(double beta, int n, double cost_ratio, bool bonus = true);

// Machine-readable JSON, an aligned-column text table and a CSV grid.
void emit_report(const BenchReport& report, const std::string& dir);

std::string environment_fingerprint();

}  // namespace speclab::bench
