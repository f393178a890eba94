// Copyright 2026 the speclab authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "speclab/language_model.hpp"
#include "speclab/sampling.hpp"
#include "speclab/table_lm.hpp"

#include <memory>
#include <string>

namespace speclab::dec {

using lm::LanguageModel;
using lm::LmSession;

// ============================================================================
// Configuration and trace
// ============================================================================

// Acceptance rules for draft-token verification.
//  - kPaperExactMatch: the target draws its own token per position (argmax in
//    greedy mode); a draft token is accepted iff it matches. On rejection in
//    sampling mode the replacement comes from the residual distribution.
//  - kStandardRatio: accept with probability min(1, p_T(tok)/p_D(tok)); on
//    rejection sample the residual. This is the rule with an exact
//    distributional-equivalence guarantee.
enum class AcceptRule { kPaperExactMatch, kStandardRatio };

struct SpecDecodeConfig {
  int block_size = 3;
  AcceptRule rule = AcceptRule::kPaperExactMatch;
  bool bonus_token = true;  // emit the target's extra token on full acceptance
  // Apply the decode policy (temperature + nucleus truncation) to the target
  // side of verification as well as the draft side. On: the standard rule is
  // exactly equivalent to sampling the policy-adjusted target. Off: the
  // target uses its plain temperature softmax (draft-only variant).
  bool policy_on_target = true;

  void validate() const;
};

struct BlockRecord {
  int proposed = 0;       // draft tokens offered to verification
  int accepted = 0;       // verification outcome (before max_tokens cut)
  int emitted = 0;        // tokens actually appended to the output
  bool has_extra = false; // a correction or bonus token was emitted
  bool extra_is_bonus = false;
  int draft_calls = 0;
  int target_calls = 0;
};

struct DecodeTrace {
  std::vector<BlockRecord> blocks;
  int64_t draft_calls = 0;   // forward calls, prefill excluded
  int64_t target_calls = 0;
  int64_t prefill_calls = 0;
  int64_t proposed_tokens = 0;
  int64_t accepted_tokens = 0;
  int64_t emitted_tokens = 0;
  double wall_seconds = 0.0;  // decode loop only; prompt processing excluded

  double acceptance_rate() const {
    return proposed_tokens == 0 ? 0.0
                                : static_cast<double>(accepted_tokens) / proposed_tokens;
  }
  double tokens_per_target_call() const {
    return target_calls == 0 ? 0.0 : static_cast<double>(emitted_tokens) / target_calls;
  }
  double tokens_per_second() const {
    return wall_seconds <= 0.0 ? 0.0 : static_cast<double>(emitted_tokens) / wall_seconds;
  }
};

struct DecodeResult {
  TokenSeq tokens;  // generated tokens only (prompt excluded)
  DecodeTrace trace;
};

// One line-delimited JSON record per block plus a summary record; the stable
// field names feed the bench module.
std::string trace_to_jsonl(const DecodeTrace& trace);

// ============================================================================
// Draft sources
// ============================================================================

// Where speculative blocks come from: a draft model or context lookup. A
// source is stateful across one decode run (model drafts keep a KV session)
// and self-synchronizes to the context it is handed.
class DraftSource {
 public:
  struct Proposal {
    TokenSeq tokens;
    std::vector<Vec> dists;  // policy-adjusted distribution each token came from
    int calls = 0;           // model forward calls spent proposing
  };

  virtual ~DraftSource() = default;
  virtual Proposal propose(const TokenSeq& context, int n, const DecodePolicy& policy,
                           Rng& rng) = 0;
  virtual void reset() = 0;
  virtual const LanguageModel* model() const { return nullptr; }
};

// Autoregressive proposals from a concrete draft model.
class ModelDraft final : public DraftSource {
 public:
  explicit ModelDraft(const LanguageModel& model);

  Proposal propose(const TokenSeq& context, int n, const DecodePolicy& policy, Rng& rng) override;
  void reset() override;
  const LanguageModel* model() const override { return &model_; }

 private:
  const LanguageModel& model_;
  std::unique_ptr<LmSession> session_;
  TokenSeq history_;
};

// Longest context suffix (length <= max_order, >= 1) that recurs earlier in
// the context; proposes up to n tokens following the most recent earlier
// occurrence. Empty result means no usable match.
TokenSeq prompt_lookup_draft(std::span<const TokenId> context, int n, int max_order);

// Draft-free speculation by n-gram lookup; proposals carry one-hot
// distributions so both acceptance rules remain well-defined.
class PromptLookupDraft final : public DraftSource {
 public:
  PromptLookupDraft(int max_order, int vocab_size)
      : max_order_(max_order), vocab_size_(vocab_size) {}

  Proposal propose(const TokenSeq& context, int n, const DecodePolicy& policy, Rng& rng) override;
  void reset() override {}

 private:
  int max_order_;
  int vocab_size_;
};

// ============================================================================
// Decoding engines
// ============================================================================

DecodeResult autoregressive_decode(const LanguageModel& model, std::span<const TokenId> prompt,
                                   const DecodePolicy& policy);

// Draft-then-verify loop: the draft proposes a block, one target forward
// scores every block position plus the bonus slot, the acceptance rule picks
// the kept prefix, and the context is extended. Greedy output is
// token-identical to the target's own greedy decode for any draft.
DecodeResult speculative_decode(const LanguageModel& target, DraftSource& draft,
                                std::span<const TokenId> prompt, const SpecDecodeConfig& cfg,
                                const DecodePolicy& policy);

// Single-block verification outcome (exposed for unit tests and oracles).
struct VerifyOutcome {
  int accepted = 0;
  TokenId extra_token = -1;  // correction, bonus, or -1 (bonus disabled)
  bool full_accept = false;
};

// Decides acceptance given the policy-adjusted target distributions for the
// n block positions plus the bonus slot.
VerifyOutcome verify_with_dists(const std::vector<Vec>& target_dists, const TokenSeq& draft_tokens,
                                const std::vector<Vec>& draft_dists, const DecodePolicy& policy,
                                const SpecDecodeConfig& cfg, Rng& rng);

// Spec-shaped wrapper: runs the one target forward over context + draft
// tokens itself and returns the per-position target distributions it used.
VerifyOutcome verify_block(const LanguageModel& target, const TokenSeq& context,
                           const TokenSeq& draft_tokens, const std::vector<Vec>& draft_dists,
                           const DecodePolicy& policy, const SpecDecodeConfig& cfg, Rng& rng,
                           std::vector<Vec>* target_dists_out = nullptr);

// ============================================================================
// Exact-enumeration oracle
// ============================================================================

// Marginal distribution of the first emitted token of a block (n = 1),
// computed by exact enumeration over draft token, accept/reject outcome and
// resample token. For the standard rule this equals the policy-adjusted
// target distribution; for the paper rule it equals
// p_D .* p_T + (1 - sum(p_D .* p_T)) * p_res.
Vec first_token_marginal(const lm::TableLM& target, const lm::TableLM& draft,
                         std::span<const TokenId> context, AcceptRule rule,
                         const DecodePolicy& policy);

// Overload enforcing the exact-model precondition at runtime.
Vec first_token_marginal(const lm::LanguageModel& target, const lm::LanguageModel& draft,
                         std::span<const TokenId> context, AcceptRule rule,
                         const DecodePolicy& policy);

}  // namespace speclab::dec
