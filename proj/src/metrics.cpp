// Copyright 2026 the speclab authors
// SPDX-License-Identifier: Apache-2.0
#include "speclab/metrics.hpp"

#include <cmath>
#include <map>

namespace speclab::metrics {

namespace {

std::map<TokenSeq, int> ngram_counts(const TokenSeq& tokens, int n) {
  std::map<TokenSeq, int> counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (size_t i = 0; i + static_cast<size_t>(n) <= tokens.size(); ++i) {
    counts[TokenSeq(tokens.begin() + static_cast<long>(i),
                    tokens.begin() + static_cast<long>(i) + n)] += 1;
  }
  return counts;
}

MetricTriple from_counts(double overlap, double n_cand, double n_ref) {
  MetricTriple t;
  if (n_cand > 0) t.precision = overlap / n_cand;
  if (n_ref > 0) t.recall = overlap / n_ref;
  if (t.precision + t.recall > 0) {
    t.f1 = 2.0 * t.precision * t.recall / (t.precision + t.recall);
  }
  return t;
}

}  // namespace

MetricTriple rouge_n(const TokenSeq& candidate, const TokenSeq& reference, int n) {
  if (n < 1) throw std::invalid_argument("rouge_n: n must be >= 1");
  auto cand = ngram_counts(candidate, n);
  auto ref = ngram_counts(reference, n);
  double overlap = 0.0, n_cand = 0.0, n_ref = 0.0;
  for (auto& [g, c] : cand) n_cand += c;
  for (auto& [g, c] : ref) n_ref += c;
  for (auto& [g, c] : cand) {
    auto it = ref.find(g);
    if (it != ref.end()) overlap += std::min(c, it->second);
  }
  return from_counts(overlap, n_cand, n_ref);
}

MetricTriple rouge_l(const TokenSeq& candidate, const TokenSeq& reference) {
  const size_t m = candidate.size(), n = reference.size();
  if (m == 0 || n == 0) return {};
  std::vector<int> prev(n + 1, 0), cur(n + 1, 0);
  for (size_t i = 1; i <= m; ++i) {
    for (size_t j = 1; j <= n; ++j) {
      cur[j] = candidate[i - 1] == reference[j - 1] ? prev[j - 1] + 1
                                                    : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return from_counts(prev[n], static_cast<double>(m), static_cast<double>(n));
}

double bleu_4(const TokenSeq& candidate, const TokenSeq& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  double log_sum = 0.0;
  for (int n = 1; n <= 4; ++n) {
    auto cand = ngram_counts(candidate, n);
    auto ref = ngram_counts(reference, n);
    double overlap = 0.0, total = 0.0;
    for (auto& [g, c] : cand) {
      total += c;
      auto it = ref.find(g);
      if (it != ref.end()) overlap += std::min(c, it->second);
    }
    double p;
    if (n == 1) {
      p = total > 0 ? overlap / total : 0.0;
    } else {
      p = (overlap + 1.0) / (total + 1.0);  // add-one smoothing on n > 1
    }
    if (p <= 0.0) return 0.0;
    log_sum += 0.25 * std::log(p);
  }
  const double bp =
      candidate.size() >= reference.size()
          ? 1.0
          : std::exp(1.0 - static_cast<double>(reference.size()) / candidate.size());
  return bp * std::exp(log_sum);
}

ScoreReport eval_generation(const lm::LanguageModel& model, const lm::Vocab& vocab,
                            const std::vector<train::SftPair>& eval_set,
                            const dec::DecodePolicy& policy) {
  ScoreReport report;
  auto add = [](MetricTriple& acc, const MetricTriple& x) {
    acc.precision += x.precision;
    acc.recall += x.recall;
    acc.f1 += x.f1;
  };
  for (const auto& pair : eval_set) {
    TokenSeq prompt{kBosId};
    for (TokenId t : vocab.encode(pair.prompt)) prompt.push_back(t);
    dec::DecodeResult r = dec::autoregressive_decode(model, prompt, policy);
    // Score on characters; specials drop out in decode().
    TokenSeq cand = vocab.encode(vocab.decode(r.tokens));
    TokenSeq ref = vocab.encode(pair.response);
    add(report.rouge1, rouge_n(cand, ref, 1));
    add(report.rouge2, rouge_n(cand, ref, 2));
    add(report.rougeL, rouge_l(cand, ref));
    report.bleu4 += bleu_4(cand, ref);
    report.sample_count += 1;
  }
  if (report.sample_count > 0) {
    const double inv = 1.0 / report.sample_count;
    for (auto* t : {&report.rouge1, &report.rouge2, &report.rougeL}) {
      t->precision *= inv;
      t->recall *= inv;
      t->f1 *= inv;
    }
    report.bleu4 *= inv;
  }
  return report;
}

AcceptanceStats acceptance_stats(const std::vector<dec::DecodeTrace>& traces) {
  AcceptanceStats stats;
  int64_t proposed = 0, accepted = 0, emitted = 0, target_calls = 0, proposal_blocks = 0;
  for (const auto& t : traces) {
    proposed += t.proposed_tokens;
    accepted += t.accepted_tokens;
    emitted += t.emitted_tokens;
    target_calls += t.target_calls;
    for (const auto& b : t.blocks) proposal_blocks += (b.proposed > 0);
  }
  if (proposed > 0) stats.acceptance_rate = static_cast<double>(accepted) / proposed;
  if (proposal_blocks > 0) stats.mean_accepted_run = static_cast<double>(accepted) / proposal_blocks;
  if (target_calls > 0) stats.tokens_per_target_call = static_cast<double>(emitted) / target_calls;
  return stats;
}

}  // namespace speclab::metrics
