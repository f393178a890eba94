// Copyright 2026 the speclab authors
// SPDX-License-Identifier: Apache-2.0
#include "speclab/decode.hpp"

#include "speclab/tensor.hpp"

#include <json.hpp>

#include <chrono>

namespace speclab::dec {

using Clock = std::chrono::steady_clock;

void SpecDecodeConfig::validate() const {
  if (block_size < 1) throw std::invalid_argument("SpecDecodeConfig: block_size must be >= 1");
}

namespace {

size_t common_prefix(const TokenSeq& a, const TokenSeq& b) {
  size_t n = std::min(a.size(), b.size());
  size_t i = 0;
  while (i < n && a[i] == b[i]) ++i;
  return i;
}

// Session wrapper that reconciles the KV cache with an externally evolved
// context. Reuses the longest common prefix, but always re-appends at least
// `min_tail` trailing tokens so their logits rows come back.
class SyncedSession {
 public:
  explicit SyncedSession(const LanguageModel& model) : model_(model) { reset(); }

  void reset() {
    session_ = model_.make_session();
    history_.clear();
  }

  // Appends without producing rows for the caller (prompt prefill).
  void prefill(std::span<const TokenId> tokens) {
    if (tokens.empty()) return;
    (void)session_->append(tokens);
    history_.insert(history_.end(), tokens.begin(), tokens.end());
  }

  // Appends needed[p..] where p is the reused common-prefix length, capped
  // so at least min_tail trailing rows come back. Row j predicts position
  // p+j+1.
  Mat sync_append(const TokenSeq& needed, int min_tail) {
    if (static_cast<int>(needed.size()) > model_.max_context()) {
      throw std::invalid_argument("decode: context exceeds model maximum");
    }
    size_t p = common_prefix(history_, needed);
    p = std::min(p, needed.size() - static_cast<size_t>(min_tail));
    if (p < history_.size()) {
      session_->truncate(static_cast<int>(p));
      history_.resize(p);
    }
    Mat rows = session_->append(std::span<const TokenId>(needed.data() + p, needed.size() - p));
    history_ = needed;
    return rows;
  }

  const TokenSeq& history() const { return history_; }

 private:
  const LanguageModel& model_;
  std::unique_ptr<LmSession> session_;
  TokenSeq history_;
};

Vec target_verify_dist(const Vec& logits, const DecodePolicy& policy,
                       const SpecDecodeConfig& cfg) {
  if (policy.mode == DecodeMode::kGreedy || cfg.policy_on_target) {
    return policy_dist(logits, policy);
  }
  return num::softmax_row(logits, policy.temperature);
}

}  // namespace

// ============================================================================
// Draft sources
// ============================================================================

ModelDraft::ModelDraft(const LanguageModel& model) : model_(model) { reset(); }

void ModelDraft::reset() {
  session_ = model_.make_session();
  history_.clear();
}

DraftSource::Proposal ModelDraft::propose(const TokenSeq& context, int n,
                                          const DecodePolicy& policy, Rng& rng) {
  Proposal prop;
  if (context.empty()) throw std::invalid_argument("ModelDraft: empty context");
  // Stay inside our own context window: proposing k tokens needs the session
  // to hold |context| + k - 1 tokens.
  n = std::min<int>(n, model_.max_context() - static_cast<int>(context.size()) + 1);
  if (n <= 0) return prop;

  // Reconcile with the caller's context; the catch-up append ends on the last
  // context token, whose row is the first proposal distribution.
  size_t p = common_prefix(history_, context);
  p = std::min(p, context.size() - 1);
  if (p < history_.size()) {
    session_->truncate(static_cast<int>(p));
    history_.resize(p);
  }
  Mat rows = session_->append(std::span<const TokenId>(context.data() + p, context.size() - p));
  history_ = context;
  prop.calls += 1;

  Vec last_logits = rows.row(rows.rows() - 1).transpose();
  for (int i = 0; i < n; ++i) {
    Vec dist = policy_dist(last_logits, policy);
    const TokenId tok = policy.mode == DecodeMode::kGreedy
                            ? static_cast<TokenId>(argmax_index(last_logits))
                            : sample_token(dist, rng);
    prop.tokens.push_back(tok);
    prop.dists.push_back(std::move(dist));
    if (i + 1 < n) {
      Mat r = session_->append(std::span<const TokenId>(&tok, 1));
      history_.push_back(tok);
      prop.calls += 1;
      last_logits = r.row(0).transpose();
    }
  }
  return prop;
}

TokenSeq prompt_lookup_draft(std::span<const TokenId> context, int n, int max_order) {
  if (n < 1 || max_order < 1) return {};
  const auto m = static_cast<int>(context.size());
  for (int len = std::min(max_order, m - 1); len >= 1; --len) {
    const TokenId* suffix = context.data() + m - len;
    // Most recent occurrence that starts strictly before the suffix itself.
    for (int j = m - len - 1; j >= 0; --j) {
      if (std::equal(suffix, suffix + len, context.data() + j)) {
        const int follow = j + len;
        const int count = std::min(n, m - follow);
        return TokenSeq(context.begin() + follow, context.begin() + follow + count);
      }
    }
  }
  return {};
}

DraftSource::Proposal PromptLookupDraft::propose(const TokenSeq& context, int n,
                                                 const DecodePolicy& policy, Rng& rng) {
  (void)policy;
  (void)rng;
  Proposal prop;
  prop.tokens = prompt_lookup_draft(context, n, max_order_);
  for (TokenId tok : prop.tokens) {
    Vec onehot = Vec::Zero(vocab_size_);
    onehot[tok] = 1.0;
    prop.dists.push_back(std::move(onehot));
  }
  return prop;
}

// ============================================================================
// Verification
// ============================================================================

VerifyOutcome verify_with_dists(const std::vector<Vec>& target_dists, const TokenSeq& draft_tokens,
                                const std::vector<Vec>& draft_dists, const DecodePolicy& policy,
                                const SpecDecodeConfig& cfg, Rng& rng) {
  const auto n = static_cast<int>(draft_tokens.size());
  if (static_cast<int>(target_dists.size()) != n + 1 ||
      static_cast<int>(draft_dists.size()) != n) {
    throw std::invalid_argument("verify_with_dists: distribution count mismatch");
  }

  VerifyOutcome out;
  const bool greedy = policy.mode == DecodeMode::kGreedy;
  for (int i = 0; i < n; ++i) {
    const TokenId proposed = draft_tokens[static_cast<size_t>(i)];
    const Vec& q = target_dists[static_cast<size_t>(i)];
    if (greedy) {
      // Eq.-3 style argmax match; a failure truncates the draft and the
      // target's own token is emitted in its place.
      const auto own = static_cast<TokenId>(argmax_index(q));
      if (own == proposed) {
        out.accepted += 1;
        continue;
      }
      out.extra_token = own;
      return out;
    }
    const Vec& pd = draft_dists[static_cast<size_t>(i)];
    if (cfg.rule == AcceptRule::kPaperExactMatch) {
      const TokenId own = sample_token(q, rng);
      if (own == proposed) {
        out.accepted += 1;
        continue;
      }
      out.extra_token = residual_sample(q, pd, rng);
      return out;
    }
    // Standard ratio rule.
    if (pd[proposed] <= 0.0) {
      throw std::logic_error("verify_with_dists: proposed token has zero draft probability");
    }
    const double ratio = q[proposed] / pd[proposed];
    bool accept = ratio >= 1.0;
    if (!accept && ratio > 0.0) accept = rng.uniform() < ratio;
    if (accept) {
      out.accepted += 1;
      continue;
    }
    out.extra_token = residual_sample(q, pd, rng);
    return out;
  }

  out.full_accept = true;
  const Vec& bonus_dist = target_dists[static_cast<size_t>(n)];
  if (n == 0) {
    // Empty proposal (lookup miss or exhausted draft window): this block is a
    // plain target step, emitted regardless of the bonus flag.
    out.extra_token = greedy ? static_cast<TokenId>(argmax_index(bonus_dist))
                             : sample_token(bonus_dist, rng);
    out.full_accept = false;
  } else if (cfg.bonus_token) {
    out.extra_token = greedy ? static_cast<TokenId>(argmax_index(bonus_dist))
                             : sample_token(bonus_dist, rng);
  }
  return out;
}

VerifyOutcome verify_block(const LanguageModel& target, const TokenSeq& context,
                           const TokenSeq& draft_tokens, const std::vector<Vec>& draft_dists,
                           const DecodePolicy& policy, const SpecDecodeConfig& cfg, Rng& rng,
                           std::vector<Vec>* target_dists_out) {
  if (context.empty()) throw std::invalid_argument("verify_block: empty context");
  TokenSeq full = context;
  full.insert(full.end(), draft_tokens.begin(), draft_tokens.end());
  if (static_cast<int>(full.size()) > target.max_context()) {
    throw std::invalid_argument("verify_block: context exceeds model maximum");
  }
  Mat rows = target.make_session()->append(full);
  std::vector<Vec> target_dists;
  for (size_t i = 0; i <= draft_tokens.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(context.size() - 1 + i);
    target_dists.push_back(target_verify_dist(rows.row(r).transpose(), policy, cfg));
  }
  VerifyOutcome out = verify_with_dists(target_dists, draft_tokens, draft_dists, policy, cfg, rng);
  if (target_dists_out) *target_dists_out = std::move(target_dists);
  return out;
}

// ============================================================================
// Autoregressive decode
// ============================================================================

DecodeResult autoregressive_decode(const LanguageModel& model, std::span<const TokenId> prompt,
                                   const DecodePolicy& policy) {
  policy.validate();
  if (prompt.empty()) throw std::invalid_argument("autoregressive_decode: empty prompt");
  if (static_cast<int>(prompt.size()) > model.max_context()) {
    throw std::invalid_argument("autoregressive_decode: prompt exceeds context budget");
  }

  DecodeResult result;
  Rng rng(policy.seed);
  SyncedSession session(model);
  session.prefill(prompt.subspan(0, prompt.size() - 1));
  if (prompt.size() > 1) result.trace.prefill_calls = 1;

  TokenSeq ctx(prompt.begin(), prompt.end());
  const auto t0 = Clock::now();
  while (static_cast<int>(result.tokens.size()) < policy.max_tokens &&
         static_cast<int>(ctx.size()) < model.max_context()) {
    Mat rows = session.sync_append(ctx, 1);
    result.trace.target_calls += 1;
    Vec logits = rows.row(rows.rows() - 1).transpose();
    const TokenId tok = policy.mode == DecodeMode::kGreedy
                            ? static_cast<TokenId>(argmax_index(logits))
                            : sample_token(policy_dist(logits, policy), rng);
    ctx.push_back(tok);
    result.tokens.push_back(tok);
    result.trace.emitted_tokens += 1;
    if (tok == kEosId) break;
  }
  result.trace.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return result;
}

// ============================================================================
// Speculative decode
// ============================================================================

DecodeResult speculative_decode(const LanguageModel& target, DraftSource& draft,
                                std::span<const TokenId> prompt, const SpecDecodeConfig& cfg,
                                const DecodePolicy& policy) {
  policy.validate();
  cfg.validate();
  if (prompt.empty()) throw std::invalid_argument("speculative_decode: empty prompt");
  if (static_cast<int>(prompt.size()) + 1 > target.max_context()) {
    throw std::invalid_argument("speculative_decode: prompt exceeds context budget");
  }

  DecodeResult result;
  Rng rng(policy.seed);
  SyncedSession target_session(target);
  target_session.prefill(prompt.subspan(0, prompt.size() - 1));
  if (prompt.size() > 1) result.trace.prefill_calls = 1;
  draft.reset();

  TokenSeq ctx(prompt.begin(), prompt.end());
  bool stopped = false;
  const auto t0 = Clock::now();
  while (!stopped && static_cast<int>(result.tokens.size()) < policy.max_tokens &&
         static_cast<int>(ctx.size()) + 1 <= target.max_context()) {
    const int room = target.max_context() - static_cast<int>(ctx.size()) - 1;
    const int n_eff = std::min(cfg.block_size, room);

    DraftSource::Proposal prop =
        n_eff > 0 ? draft.propose(ctx, n_eff, policy, rng) : DraftSource::Proposal{};
    const auto n_prop = static_cast<int>(prop.tokens.size());

    TokenSeq needed = ctx;
    needed.insert(needed.end(), prop.tokens.begin(), prop.tokens.end());
    Mat rows = target_session.sync_append(needed, n_prop + 1);

    std::vector<Vec> target_dists;
    const auto base = rows.rows() - (n_prop + 1);
    for (int j = 0; j <= n_prop; ++j) {
      target_dists.push_back(target_verify_dist(rows.row(base + j).transpose(), policy, cfg));
    }
    VerifyOutcome outcome =
        verify_with_dists(target_dists, prop.tokens, prop.dists, policy, cfg, rng);

    BlockRecord block;
    block.proposed = n_prop;
    block.accepted = outcome.accepted;
    block.draft_calls = prop.calls;
    block.target_calls = 1;

    for (int i = 0; i < outcome.accepted && !stopped; ++i) {
      const TokenId tok = prop.tokens[static_cast<size_t>(i)];
      ctx.push_back(tok);
      result.tokens.push_back(tok);
      block.emitted += 1;
      if (tok == kEosId || static_cast<int>(result.tokens.size()) >= policy.max_tokens) {
        stopped = true;
      }
    }
    if (!stopped && outcome.extra_token >= 0) {
      ctx.push_back(outcome.extra_token);
      result.tokens.push_back(outcome.extra_token);
      block.emitted += 1;
      block.has_extra = true;
      block.extra_is_bonus = outcome.full_accept;
      if (outcome.extra_token == kEosId ||
          static_cast<int>(result.tokens.size()) >= policy.max_tokens) {
        stopped = true;
      }
    }

    result.trace.draft_calls += prop.calls;
    result.trace.target_calls += 1;
    result.trace.proposed_tokens += n_prop;
    result.trace.accepted_tokens += outcome.accepted;
    result.trace.emitted_tokens += block.emitted;
    result.trace.blocks.push_back(block);
    // A block always emits at least one token unless it was cut short, so the
    // loop cannot stall.
    if (block.emitted == 0) stopped = true;
  }
  result.trace.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return result;
}

// ============================================================================
// Exact-enumeration oracle
// ============================================================================

Vec first_token_marginal(const lm::TableLM& target, const lm::TableLM& draft,
                         std::span<const TokenId> context, AcceptRule rule,
                         const DecodePolicy& policy) {
  policy.validate();
  if (target.vocab_size() != draft.vocab_size()) {
    throw std::invalid_argument("first_token_marginal: vocabulary mismatch");
  }
  const int v = target.vocab_size();
  if (v > 32) throw std::invalid_argument("first_token_marginal: vocabulary too large (> 32)");

  const Vec q = policy_dist(target.logit_row(context), policy);
  const Vec pd = policy_dist(draft.logit_row(context), policy);
  const Vec res = residual_dist(q, pd);

  Vec marginal = Vec::Zero(v);
  if (rule == AcceptRule::kPaperExactMatch) {
    // Accept event: the target's independently drawn token equals the draft
    // token, which for token x has probability pd(x) * q(x).
    const double accept_mass = (pd.array() * q.array()).sum();
    marginal = (pd.array() * q.array()).matrix() + (1.0 - accept_mass) * res;
  } else {
    double reject_mass = 0.0;
    for (int x = 0; x < v; ++x) {
      if (pd[x] <= 0.0) continue;
      const double a = std::min(1.0, q[x] / pd[x]);
      marginal[x] += pd[x] * a;
      reject_mass += pd[x] * (1.0 - a);
    }
    marginal += reject_mass * res;
  }
  return marginal;
}

Vec first_token_marginal(const lm::LanguageModel& target, const lm::LanguageModel& draft,
                         std::span<const TokenId> context, AcceptRule rule,
                         const DecodePolicy& policy) {
  const auto* t = dynamic_cast<const lm::TableLM*>(&target);
  const auto* d = dynamic_cast<const lm::TableLM*>(&draft);
  if (!t || !d) {
    throw std::invalid_argument("first_token_marginal: exact enumeration requires TableLM inputs");
  }
  return first_token_marginal(*t, *d, context, rule, policy);
}

// ============================================================================
// Trace serialization
// ============================================================================

std::string trace_to_jsonl(const DecodeTrace& trace) {
  std::string out;
  for (size_t i = 0; i < trace.blocks.size(); ++i) {
    const BlockRecord& b = trace.blocks[i];
    nlohmann::json j = {
        {"record", "block"},          {"index", i},
        {"proposed", b.proposed},     {"accepted", b.accepted},
        {"emitted", b.emitted},       {"has_extra", b.has_extra},
        {"extra_is_bonus", b.extra_is_bonus},
        {"draft_calls", b.draft_calls},
        {"target_calls", b.target_calls},
    };
    out += j.dump() + "\n";
  }
  nlohmann::json summary = {
      {"record", "summary"},
      {"blocks", trace.blocks.size()},
      {"draft_calls", trace.draft_calls},
      {"target_calls", trace.target_calls},
      {"prefill_calls", trace.prefill_calls},
      {"proposed_tokens", trace.proposed_tokens},
      {"accepted_tokens", trace.accepted_tokens},
      {"emitted_tokens", trace.emitted_tokens},
      {"acceptance_rate", trace.acceptance_rate()},
      {"tokens_per_target_call", trace.tokens_per_target_call()},
      {"wall_seconds", trace.wall_seconds},
  };
  out += summary.dump() + "\n";
  return out;
}

}  // namespace speclab::dec
