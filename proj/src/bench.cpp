// Copyright 2026 the speclab authors
// SPDX-License-Identifier: Apache-2.0
#include "speclab/bench.hpp"

#include <json.hpp>

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <thread>

namespace speclab::bench {

void BenchConfig::validate() const {
  if (prompts.empty()) throw std::invalid_argument("BenchConfig: no prompts");
  if (cells.empty()) throw std::invalid_argument("BenchConfig: no cells");
  if (repetitions < 3) throw std::invalid_argument("BenchConfig: repetitions must be >= 3");
  if (warmup < 1) throw std::invalid_argument("BenchConfig: warmup must be >= 1");
  if (max_tokens < 1) throw std::invalid_argument("BenchConfig: max_tokens must be >= 1");
  bool has_baseline = false;
  for (const auto& c : cells) has_baseline |= (c.method == "autoregressive");
  if (!has_baseline) throw std::invalid_argument("BenchConfig: an autoregressive baseline cell is required");
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

dec::DecodePolicy cell_policy(const BenchCell& cell, int max_tokens, uint64_t seed) {
  dec::DecodePolicy p;
  p.mode = cell.mode;
  p.top_p = cell.top_p;
  p.temperature = cell.temperature;
  p.max_tokens = max_tokens;
  p.seed = seed;
  return p;
}

struct RepOutcome {
  double seconds = 0.0;
  int64_t emitted = 0;
  std::vector<dec::DecodeTrace> traces;
};

RepOutcome run_cell_once(const lm::LanguageModel& target,
                         const std::map<std::string, dec::DraftSource*>& drafts,
                         const BenchCell& cell, const BenchConfig& cfg,
                         std::unique_ptr<dec::PromptLookupDraft>& lookup) {
  RepOutcome out;
  for (size_t pi = 0; pi < cfg.prompts.size(); ++pi) {
    const uint64_t seed = cfg.seed + 7919 * pi;
    dec::DecodePolicy policy = cell_policy(cell, cfg.max_tokens, seed);
    dec::DecodeResult r;
    if (cell.method == "autoregressive") {
      r = dec::autoregressive_decode(target, cfg.prompts[pi], policy);
    } else if (cell.method == "spd") {
      auto it = drafts.find(cell.draft);
      if (it == drafts.end()) {
        throw std::invalid_argument("run_bench: unknown draft variant '" + cell.draft + "'");
      }
      dec::SpecDecodeConfig sc;
      sc.block_size = cell.block_size;
      sc.rule = cell.rule;
      r = dec::speculative_decode(target, *it->second, cfg.prompts[pi], sc, policy);
    } else if (cell.method == "prompt_lookup") {
      if (!lookup) {
        lookup = std::make_unique<dec::PromptLookupDraft>(cell.lookup_order, target.vocab_size());
      }
      dec::SpecDecodeConfig sc;
      sc.block_size = cell.block_size;
      sc.rule = cell.rule;
      r = dec::speculative_decode(target, *lookup, cfg.prompts[pi], sc, policy);
    } else {
      throw std::invalid_argument("run_bench: unknown method '" + cell.method + "'");
    }
    out.seconds += r.trace.wall_seconds;
    out.emitted += r.trace.emitted_tokens;
    out.traces.push_back(std::move(r.trace));
  }
  return out;
}

}  // namespace

BenchReport run_bench(const lm::LanguageModel& target,
                      const std::map<std::string, dec::DraftSource*>& drafts,
                      const BenchConfig& cfg) {
  cfg.validate();
  for (const auto& prompt : cfg.prompts) {
    if (prompt.empty()) throw std::invalid_argument("run_bench: empty prompt");
  }
  // Cost-asymmetry gate for model-backed drafts.
  for (const auto& cell : cfg.cells) {
    if (cell.method != "spd") continue;
    auto it = drafts.find(cell.draft);
    if (it == drafts.end()) {
      throw std::invalid_argument("run_bench: unknown draft variant '" + cell.draft + "'");
    }
    const lm::LanguageModel* dm = it->second->model();
    if (dm && target.flops_per_token() < cfg.min_flop_ratio * dm->flops_per_token()) {
      throw std::invalid_argument("run_bench: draft '" + cell.draft +
                                  "' violates the minimum target/draft FLOP ratio");
    }
  }

  BenchReport report;
  report.environment = environment_fingerprint();
  report.target_flops_per_token = target.flops_per_token();
  report.max_tokens = cfg.max_tokens;
  report.repetitions = cfg.repetitions;
  report.seed = cfg.seed;
  for (const auto& [name, d] : drafts) {
    if (d->model()) report.draft_flops_per_token[name] = d->model()->flops_per_token();
  }

  for (const auto& cell : cfg.cells) {
    std::unique_ptr<dec::PromptLookupDraft> lookup;
    for (int w = 0; w < cfg.warmup; ++w) {
      (void)run_cell_once(target, drafts, cell, cfg, lookup);
    }
    CellResult result;
    result.cell = cell;
    std::vector<dec::DecodeTrace> traces;
    for (int rep = 0; rep < cfg.repetitions; ++rep) {
      RepOutcome out = run_cell_once(target, drafts, cell, cfg, lookup);
      result.rep_tokens_per_second.push_back(out.emitted / std::max(out.seconds, 1e-12));
      if (rep == 0) {
        traces = std::move(out.traces);
      } else {
        // Trace-derived fields must not depend on the repetition.
        int64_t emitted = 0;
        for (const auto& t : out.traces) emitted += t.emitted_tokens;
        int64_t first = 0;
        for (const auto& t : traces) first += t.emitted_tokens;
        if (emitted != first) {
          throw std::runtime_error("run_bench: nondeterministic trace in cell '" + cell.name + "'");
        }
      }
    }
    const auto stats = metrics::acceptance_stats(traces);
    result.tokens_per_second = median(result.rep_tokens_per_second);
    result.acceptance_rate = stats.acceptance_rate;
    result.mean_accepted_run = stats.mean_accepted_run;
    result.tokens_per_target_call = stats.tokens_per_target_call;
    for (const auto& t : traces) {
      result.emitted_tokens += t.emitted_tokens;
      result.target_calls += t.target_calls;
      result.draft_calls += t.draft_calls;
    }
    const auto [lo, hi] =
        std::minmax_element(result.rep_tokens_per_second.begin(), result.rep_tokens_per_second.end());
    result.variance_flagged =
        (*hi - *lo) > cfg.variance_flag_threshold * std::max(result.tokens_per_second, 1e-12);
    report.cells.push_back(std::move(result));
  }

  // Speedups against the same-mode autoregressive baseline.
  for (auto& cell : report.cells) {
    const CellResult* baseline = nullptr;
    for (const auto& c : report.cells) {
      if (c.cell.method == "autoregressive" && c.cell.mode == cell.cell.mode) {
        baseline = &c;
        break;
      }
    }
    if (!baseline) {
      throw std::invalid_argument("run_bench: no autoregressive baseline for cell '" +
                                  cell.cell.name + "'");
    }
    cell.speedup = baseline == &cell ? 1.0 : cell.tokens_per_second / baseline->tokens_per_second;
    if (cell.cell.method == "autoregressive" && baseline == &cell) cell.speedup = 1.0;
  }
  return report;
}

double analytic_speedup(double beta, int n, double cost_ratio, bool bonus) {
  if (beta < 0.0 || beta > 1.0) throw std::invalid_argument("analytic_speedup: beta in [0,1]");
  if (n < 1) throw std::invalid_argument("analytic_speedup: n must be >= 1");
  if (cost_ratio < 0.0) throw std::invalid_argument("analytic_speedup: cost_ratio must be >= 0");
  double expected_tokens;
  if (beta >= 1.0) {
    expected_tokens = bonus ? n + 1 : n;
  } else {
    expected_tokens = (1.0 - std::pow(beta, n + 1)) / (1.0 - beta);
    if (!bonus) expected_tokens -= std::pow(beta, n);
  }
  return expected_tokens / (n * cost_ratio + 1.0);
}

std::string environment_fingerprint() {
  nlohmann::json j = {
      {"compiler", __VERSION__},
      {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                    "." + std::to_string(EIGEN_MINOR_VERSION)},
      {"hardware_threads", std::thread::hardware_concurrency()},
#ifdef NDEBUG
      {"build", "release"},
#else
      {"build", "debug"},
#endif
  };
  return j.dump();
}

namespace {

nlohmann::json cell_json(const CellResult& c) {
  return {
      {"name", c.cell.name},
      {"method", c.cell.method},
      {"draft", c.cell.draft},
      {"block_size", c.cell.block_size},
      {"rule", c.cell.rule == dec::AcceptRule::kPaperExactMatch ? "paper_exact_match"
                                                                 : "standard_ratio"},
      {"mode", c.cell.mode == dec::DecodeMode::kGreedy ? "greedy" : "top_p"},
      {"top_p", c.cell.top_p},
      {"temperature", c.cell.temperature},
      {"tokens_per_second", c.tokens_per_second},
      {"speedup", c.speedup},
      {"acceptance_rate", c.acceptance_rate},
      {"mean_accepted_run", c.mean_accepted_run},
      {"tokens_per_target_call", c.tokens_per_target_call},
      {"emitted_tokens", c.emitted_tokens},
      {"target_calls", c.target_calls},
      {"draft_calls", c.draft_calls},
      {"variance_flagged", c.variance_flagged},
      {"rep_tokens_per_second", c.rep_tokens_per_second},
  };
}

}  // namespace

void emit_report(const BenchReport& report, const std::string& dir) {
  std::filesystem::create_directories(dir);

  nlohmann::json j = {
      {"environment", nlohmann::json::parse(report.environment)},
      {"target_flops_per_token", report.target_flops_per_token},
      {"draft_flops_per_token", report.draft_flops_per_token},
      {"max_tokens", report.max_tokens},
      {"repetitions", report.repetitions},
      {"seed", report.seed},
      {"note", "tokens/s measured over the decode loop only; prompt prefill excluded"},
      {"cells", nlohmann::json::array()},
  };
  for (const auto& c : report.cells) j["cells"].push_back(cell_json(c));
  std::ofstream js(std::filesystem::path(dir) / "bench_report.json", std::ios::trunc);
  js << j.dump(2) << "\n";

  std::ofstream table(std::filesystem::path(dir) / "bench_table.txt", std::ios::trunc);
  char line[256];
  std::snprintf(line, sizeof(line), "%-28s %-6s %-7s %6s %12s %12s %9s\n", "Cell", "n", "Mode",
                "Acc%", "tokens/s", "tok/call", "Speedup");
  table << line;
  table << std::string(86, '-') << "\n";
  for (const auto& c : report.cells) {
    std::snprintf(line, sizeof(line), "%-28s %-6d %-7s %6.2f %12.2f %12.3f %8.2fx\n",
                  c.cell.name.c_str(), c.cell.block_size,
                  c.cell.mode == dec::DecodeMode::kGreedy ? "greedy" : "top-p",
                  100.0 * c.acceptance_rate, c.tokens_per_second, c.tokens_per_target_call,
                  c.speedup);
    table << line;
  }

  std::ofstream csv(std::filesystem::path(dir) / "bench_grid.csv", std::ios::trunc);
  csv << "name,method,draft,block_size,mode,acceptance_rate,tokens_per_second,"
         "tokens_per_target_call,speedup,variance_flagged\n";
  for (const auto& c : report.cells) {
    csv << c.cell.name << ',' << c.cell.method << ',' << c.cell.draft << ',' << c.cell.block_size
        << ',' << (c.cell.mode == dec::DecodeMode::kGreedy ? "greedy" : "top_p") << ','
        << c.acceptance_rate << ',' << c.tokens_per_second << ',' << c.tokens_per_target_call
        << ',' << c.speedup << ',' << (c.variance_flagged ? 1 : 0) << "\n";
  }
}

}  // namespace speclab::bench
