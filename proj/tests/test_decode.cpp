// Copyright 2026 the speclab authors
// SPDX-License-Identifier: Apache-2.0
#include "speclab/decode.hpp"
#include "speclab/transformer.hpp"

#include <doctest.h>

using namespace speclab;
using namespace speclab::dec;
using speclab::lm::TableLM;
using speclab::lm::Transformer;
using speclab::lm::TransformerConfig;

namespace {

constexpr int kV = 8;  // test vocabulary size

// Deterministic cycle over ids [4, kV): next(t) = 4 + (t - 3) % (kV - 4).
// Never emits specials, so decode lengths are driven by max_tokens only.
TableLM cycle_model() {
  TableLM model(kV, 1);
  const double eps = 1e-9;
  for (TokenId t = 0; t < kV; ++t) {
    const TokenId next = t < 4 ? 4 : 4 + (t - 3) % (kV - 4);
    Vec row = Vec::Constant(kV, eps / kV);
    row[next] += 1.0 - eps / kV * kV;
    model.set_row({t}, row);
  }
  Vec row0 = Vec::Constant(kV, eps / kV);
  row0[4] += 1.0 - eps / kV * kV;
  model.set_row({}, row0);
  return model;
}

DecodePolicy greedy_policy(int max_tokens) {
  DecodePolicy p;
  p.mode = DecodeMode::kGreedy;
  p.max_tokens = max_tokens;
  return p;
}

DecodePolicy topp_policy(int max_tokens, uint64_t seed, double p = 0.7, double temp = 1.0) {
  DecodePolicy pol;
  pol.mode = DecodeMode::kTopP;
  pol.top_p = p;
  pol.temperature = temp;
  pol.max_tokens = max_tokens;
  pol.seed = seed;
  return pol;
}

Vec onehot(int v, TokenId t) {
  Vec out = Vec::Zero(v);
  out[t] = 1.0;
  return out;
}

void check_trace_conservation(const DecodeResult& r) {
  int64_t emitted = 0;
  for (const auto& b : r.trace.blocks) {
    emitted += b.emitted;
    CHECK(b.accepted <= b.proposed);
    // Non-truncated blocks emit accepted + 1 when an extra token went out.
    if (b.has_extra) CHECK(b.emitted <= b.accepted + 1);
  }
  CHECK(emitted == r.trace.emitted_tokens);
  CHECK(static_cast<int64_t>(r.tokens.size()) == r.trace.emitted_tokens);
  CHECK(r.trace.acceptance_rate() >= 0.0);
  CHECK(r.trace.acceptance_rate() <= 1.0);
}

}  // namespace

// ============================================================================
// verify_with_dists / verify_block
// ============================================================================

TEST_CASE("verify: all-accept emits bonus; first mismatch truncates (greedy)") {
  SpecDecodeConfig cfg;
  cfg.block_size = 3;
  Rng rng(0);

  // Identical one-hot target and draft on every position.
  std::vector<Vec> target{onehot(kV, 5), onehot(kV, 6), onehot(kV, 4), onehot(kV, 7)};
  TokenSeq draft{5, 6, 4};
  std::vector<Vec> draft_dists{onehot(kV, 5), onehot(kV, 6), onehot(kV, 4)};
  VerifyOutcome out = verify_with_dists(target, draft, draft_dists, greedy_policy(10), cfg, rng);
  CHECK(out.accepted == 3);
  CHECK(out.full_accept);
  CHECK(out.extra_token == 7);  // bonus from position n+1

  // Immediate mismatch: k = 0, the target's own argmax is emitted.
  TokenSeq draft2{6, 6, 4};
  out = verify_with_dists(target, draft2, draft_dists, greedy_policy(10), cfg, rng);
  CHECK(out.accepted == 0);
  CHECK_FALSE(out.full_accept);
  CHECK(out.extra_token == 5);

  // Bonus disabled: full accept emits nothing extra.
  cfg.bonus_token = false;
  out = verify_with_dists(target, draft, draft_dists, greedy_policy(10), cfg, rng);
  CHECK(out.accepted == 3);
  CHECK(out.extra_token == -1);

  // Size mismatch rejected.
  CHECK_THROWS_AS(verify_with_dists(target, draft, {onehot(kV, 5)}, greedy_policy(10), cfg, rng),
                  std::invalid_argument);
}

TEST_CASE("verify: standard ratio flags zero draft probability as internal error") {
  SpecDecodeConfig cfg;
  cfg.rule = AcceptRule::kStandardRatio;
  Rng rng(3);
  std::vector<Vec> target{onehot(kV, 1), onehot(kV, 2)};
  std::vector<Vec> draft_dists{onehot(kV, 5)};  // zero mass at proposed token 1
  CHECK_THROWS_AS(
      verify_with_dists(target, {1}, draft_dists, topp_policy(10, 1), cfg, rng),
      std::logic_error);
}

TEST_CASE("verify_block: one target forward produces all n+1 distributions") {
  TableLM target = TableLM::random(kV, 1, 11);
  TableLM draft = TableLM::random(kV, 1, 12);
  TokenSeq ctx{4, 5, 6};
  SpecDecodeConfig cfg;
  DecodePolicy pol = greedy_policy(10);
  Rng rng(1);

  // Draft proposes its own greedy walk.
  ModelDraft source(draft);
  auto prop = source.propose(ctx, 3, pol, rng);
  REQUIRE(prop.tokens.size() == 3);

  std::vector<Vec> tdists;
  VerifyOutcome out = verify_block(target, ctx, prop.tokens, prop.dists, pol, cfg, rng, &tdists);
  REQUIRE(tdists.size() == 4);
  // Target dists must equal the table rows (greedy one-hots of them).
  TokenSeq full = ctx;
  full.insert(full.end(), prop.tokens.begin(), prop.tokens.end());
  for (size_t i = 0; i < 4; ++i) {
    std::span<const TokenId> prefix(full.data(), ctx.size() + i);
    CHECK(tdists[i][argmax_index(target.prob_row(prefix))] == 1.0);
  }
  // Outcome consistent with hand-walking the acceptance rule.
  int expect_k = 0;
  while (expect_k < 3) {
    std::span<const TokenId> prefix(full.data(), ctx.size() + static_cast<size_t>(expect_k));
    if (argmax_index(target.prob_row(prefix)) != prop.tokens[static_cast<size_t>(expect_k)]) break;
    ++expect_k;
  }
  CHECK(out.accepted == expect_k);
}

// ============================================================================
// autoregressive_decode
// ============================================================================

TEST_CASE("autoregressive: deterministic table walk; greedy == top-p on one-hot rows") {
  TableLM model = cycle_model();
  TokenSeq prompt{4};
  DecodeResult g = autoregressive_decode(model, prompt, greedy_policy(9));
  // Cycle 4 -> 5 -> 6 -> 7 -> 4 ...
  CHECK(g.tokens == TokenSeq{5, 6, 7, 4, 5, 6, 7, 4, 5});
  CHECK(g.trace.target_calls == 9);
  CHECK(g.trace.emitted_tokens == 9);

  DecodeResult s = autoregressive_decode(model, prompt, topp_policy(9, 77));
  CHECK(s.tokens == g.tokens);

  // max_tokens = 0 -> empty output.
  DecodeResult empty = autoregressive_decode(model, prompt, greedy_policy(0));
  CHECK(empty.tokens.empty());
  CHECK(empty.trace.target_calls == 0);

  // Same seed twice -> identical outputs.
  TableLM noisy = TableLM::random(kV, 2, 5);
  DecodeResult a = autoregressive_decode(noisy, prompt, topp_policy(30, 99, 0.9));
  DecodeResult b = autoregressive_decode(noisy, prompt, topp_policy(30, 99, 0.9));
  CHECK(a.tokens == b.tokens);

  CHECK_THROWS_AS(autoregressive_decode(model, TokenSeq{}, greedy_policy(5)),
                  std::invalid_argument);
}

TEST_CASE("autoregressive: stops at EOS; context overflow rejected") {
  // Row for token 6 peaks at EOS.
  TableLM model(kV, 1);
  Vec row = Vec::Constant(kV, 1e-10);
  row[6] += 1.0 - 1e-10 * kV;
  model.set_row({4}, row);
  Vec row2 = Vec::Constant(kV, 1e-10);
  row2[kEosId] += 1.0 - 1e-10 * kV;
  model.set_row({6}, row2);

  DecodeResult r = autoregressive_decode(model, TokenSeq{4}, greedy_policy(50));
  CHECK(r.tokens == TokenSeq{6, kEosId});

  TransformerConfig cfg;
  cfg.vocab_size = kV;
  cfg.max_context = 8;
  cfg.d_model = 8;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 16;
  Transformer tf(cfg);
  TokenSeq long_prompt(9, 4);
  CHECK_THROWS_AS(autoregressive_decode(tf, long_prompt, greedy_policy(5)),
                  std::invalid_argument);
  // Generation halts when the window fills, EOS or not.
  DecodeResult full = autoregressive_decode(tf, TokenSeq{4, 5}, greedy_policy(100));
  CHECK(static_cast<int>(full.tokens.size()) <= cfg.max_context - 2);
}

// ============================================================================
// speculative_decode
// ============================================================================

TEST_CASE("speculative: perfect draft fully accepts; call arithmetic") {
  TableLM model = cycle_model();
  SpecDecodeConfig cfg;
  cfg.block_size = 3;
  ModelDraft draft(model);  // draft == target

  DecodeResult r = speculative_decode(model, draft, TokenSeq{4}, cfg, greedy_policy(16));
  DecodeResult ar = autoregressive_decode(model, TokenSeq{4}, greedy_policy(16));
  CHECK(r.tokens == ar.tokens);
  CHECK(r.trace.acceptance_rate() == 1.0);
  // Every block emits n+1 tokens: ceil(16 / 4) = 4 target calls.
  CHECK(r.trace.target_calls == 4);
  CHECK(r.trace.draft_calls == 4 * 3);
  check_trace_conservation(r);

  // Acceptance monotonicity endpoint: a perfect draft measures 100%.
  CHECK(r.trace.accepted_tokens == r.trace.proposed_tokens);
}

TEST_CASE("speculative: greedy output equals target AR output for any draft") {
  SpecDecodeConfig cfg;
  Rng meta(2024);
  for (int trial = 0; trial < 40; ++trial) {
    TableLM target = TableLM::random(kV, 2, meta.raw(), 0.4);
    TableLM draft_model = TableLM::random(kV, 1, meta.raw());
    cfg.block_size = 1 + static_cast<int>(meta.below(8));
    TokenSeq prompt;
    for (int i = 0; i < 1 + static_cast<int>(meta.below(4)); ++i) {
      prompt.push_back(static_cast<TokenId>(4 + meta.below(kV - 4)));
    }
    const int budget = 8 + static_cast<int>(meta.below(40));

    DecodeResult ar = autoregressive_decode(target, prompt, greedy_policy(budget));
    ModelDraft draft(draft_model);
    DecodeResult sp = speculative_decode(target, draft, prompt, cfg, greedy_policy(budget));
    CHECK(sp.tokens == ar.tokens);
    check_trace_conservation(sp);

    // Uniform-adversarial draft: still lossless.
    TableLM uniform(kV, 0);
    ModelDraft bad(uniform);
    DecodeResult sp2 = speculative_decode(target, bad, prompt, cfg, greedy_policy(budget));
    CHECK(sp2.tokens == ar.tokens);
  }
}

TEST_CASE("speculative: greedy lossless with a transformer target too") {
  TransformerConfig tc;
  tc.d_model = 16;
  tc.n_layers = 2;
  tc.n_heads = 2;
  tc.d_ff = 32;
  tc.max_context = 64;
  tc.vocab_size = kV;
  tc.init_seed = 9;
  Transformer target(tc);
  TableLM draft_model = TableLM::random(kV, 1, 31);

  for (int n : {1, 2, 3, 5, 8}) {
    SpecDecodeConfig cfg;
    cfg.block_size = n;
    ModelDraft draft(draft_model);
    DecodeResult ar = autoregressive_decode(target, TokenSeq{4, 5}, greedy_policy(40));
    DecodeResult sp = speculative_decode(target, draft, TokenSeq{4, 5}, cfg, greedy_policy(40));
    CHECK(sp.tokens == ar.tokens);
    check_trace_conservation(sp);
  }
}

TEST_CASE("speculative: seed contract and bonus ablation") {
  TableLM target = TableLM::random(kV, 1, 41, 0.7);
  TableLM draft_model = TableLM::random(kV, 1, 42, 0.7);
  SpecDecodeConfig cfg;
  cfg.rule = AcceptRule::kStandardRatio;

  ModelDraft d1(draft_model), d2(draft_model);
  DecodeResult a = speculative_decode(target, d1, TokenSeq{5}, cfg, topp_policy(30, 1234));
  DecodeResult b = speculative_decode(target, d2, TokenSeq{5}, cfg, topp_policy(30, 1234));
  CHECK(a.tokens == b.tokens);
  CHECK(a.trace.target_calls == b.trace.target_calls);
  CHECK(a.trace.accepted_tokens == b.trace.accepted_tokens);
  check_trace_conservation(a);

  cfg.bonus_token = false;
  ModelDraft d3(draft_model);
  DecodeResult nb = speculative_decode(target, d3, TokenSeq{5}, cfg, topp_policy(30, 1234));
  for (const auto& blk : nb.trace.blocks) {
    if (blk.proposed > 0 && blk.accepted == blk.proposed) CHECK_FALSE(blk.extra_is_bonus);
  }
  check_trace_conservation(nb);
}

// ============================================================================
// prompt lookup
// ============================================================================

TEST_CASE("prompt_lookup_draft: hand-traced matches") {
  // "abcab": suffix "ab" recurs at position 0; the next token is "c".
  TokenSeq abcab{10, 11, 12, 10, 11};
  CHECK(prompt_lookup_draft(abcab, 1, 3) == TokenSeq{12});

  // No repeated suffix anywhere: no proposal.
  TokenSeq distinct{4, 5, 6, 7};
  CHECK(prompt_lookup_draft(distinct, 2, 3).empty());

  // "abcdabc": longest suffix "abc" matches at 0; continuation "d a b".
  TokenSeq s{10, 11, 12, 13, 10, 11, 12};
  CHECK(prompt_lookup_draft(s, 3, 4) == TokenSeq{13, 10, 11});

  // Period-2 context: suffix "yxy" recurs at position 1; the continuation
  // after it is "xy", clipped at the context end.
  TokenSeq xy{20, 21, 20, 21, 20, 21};
  CHECK(prompt_lookup_draft(xy, 3, 3) == TokenSeq{20, 21});

  // Most recent match wins when a suffix recurs twice.
  // Context: a b X a b Y a b -> suffix "ab" matches at 3 (recent) and 0;
  // proposal follows position 3: "Y a b".
  TokenSeq twice{10, 11, 30, 10, 11, 31, 10, 11};
  CHECK(prompt_lookup_draft(twice, 3, 2) == TokenSeq{31, 10, 11});
}

TEST_CASE("prompt lookup engine: lossless in greedy mode, falls back when no match") {
  TableLM target = TableLM::random(kV, 2, 51, 0.5);
  SpecDecodeConfig cfg;
  cfg.block_size = 3;
  PromptLookupDraft lookup(3, kV);

  DecodeResult ar = autoregressive_decode(target, TokenSeq{4, 5}, greedy_policy(30));
  DecodeResult sp = speculative_decode(target, lookup, TokenSeq{4, 5}, cfg, greedy_policy(30));
  CHECK(sp.tokens == ar.tokens);
  check_trace_conservation(sp);

  // Zero-proposal blocks are plain target steps (one token per call).
  bool saw_fallback = false;
  for (const auto& blk : sp.trace.blocks) {
    if (blk.proposed == 0) {
      saw_fallback = true;
      CHECK(blk.emitted == 1);
    }
  }
  CHECK(saw_fallback);  // the first block has no repeated suffix yet
}

// ============================================================================
// first_token_marginal
// ============================================================================

TEST_CASE("first_token_marginal: standard rule reproduces the target exactly") {
  Rng meta(7);
  for (int trial = 0; trial < 30; ++trial) {
    TableLM target = TableLM::random(6, 1, meta.raw());
    TableLM draft = TableLM::random(6, 1, meta.raw());
    TokenSeq ctx{2, 4};
    for (auto pol : {topp_policy(1, 0, 0.7), topp_policy(1, 0, 1.0), greedy_policy(1)}) {
      Vec marginal = first_token_marginal(target, draft, ctx, AcceptRule::kStandardRatio, pol);
      Vec expect = policy_dist(target.logit_row(ctx), pol);
      CHECK((marginal - expect).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("first_token_marginal: paper rule analytic form and worked example") {
  // p_T = [.5,.3,.2], p_D = [.2,.5,.3] with full-nucleus sampling:
  // accept mass = .1+.15+.06 = .31, residual = [1,0,0],
  // marginal = [.1,.15,.06] + .69*[1,0,0] = [.79,.15,.06].
  TableLM target(3, 0);
  TableLM draft(3, 0);
  Vec pt(3), pd(3);
  pt << 0.5, 0.3, 0.2;
  pd << 0.2, 0.5, 0.3;
  target.set_row({}, pt);
  draft.set_row({}, pd);

  DecodePolicy pol = topp_policy(1, 0, 1.0);
  Vec marginal = first_token_marginal(target, draft, TokenSeq{}, AcceptRule::kPaperExactMatch, pol);
  CHECK(marginal[0] == doctest::Approx(0.79).epsilon(1e-12));
  CHECK(marginal[1] == doctest::Approx(0.15).epsilon(1e-12));
  CHECK(marginal[2] == doctest::Approx(0.06).epsilon(1e-12));

  // Total-variation distance to the target: 0.29.
  const double tv = 0.5 * (marginal - pt).cwiseAbs().sum();
  CHECK(tv == doctest::Approx(0.29).epsilon(1e-12));

  // p_T == p_D engages the zero-residual fallback (p_res := p_T); the
  // analytic form becomes p.*p + (1 - sum(p.*p)) * p, which is NOT p itself
  // for a non-degenerate distribution. Identity does hold for one-hot rows.
  Vec m2 = first_token_marginal(target, target, TokenSeq{}, AcceptRule::kPaperExactMatch, pol);
  const double self_mass = pt.array().square().sum();
  Vec expect_eq = (pt.array().square() + (1.0 - self_mass) * pt.array()).matrix();
  CHECK((m2 - expect_eq).cwiseAbs().maxCoeff() < 1e-12);

  TableLM hot(3, 0);
  Vec onehotish(3);
  onehotish << 1.0 - 2e-12, 1e-12, 1e-12;
  hot.set_row({}, onehotish);
  Vec m3 = first_token_marginal(hot, hot, TokenSeq{}, AcceptRule::kPaperExactMatch, pol);
  CHECK((m3 - Vec(onehotish)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("first_token_marginal: enumeration agrees with the sampling engine") {
  // Monte-Carlo cross-check ties the oracle to the implementation it audits.
  TableLM target = TableLM::random(5, 0, 2001);
  TableLM draft = TableLM::random(5, 0, 2002);
  TokenSeq ctx{1};

  for (auto rule : {AcceptRule::kPaperExactMatch, AcceptRule::kStandardRatio}) {
    DecodePolicy pol = topp_policy(1, 0, 0.9);
    Vec marginal = first_token_marginal(target, draft, ctx, rule, pol);

    SpecDecodeConfig cfg;
    cfg.block_size = 1;
    cfg.rule = rule;
    Vec counts = Vec::Zero(5);
    const int trials = 60000;
    for (int i = 0; i < trials; ++i) {
      ModelDraft d(draft);
      DecodePolicy p = pol;
      p.seed = static_cast<uint64_t>(i) + 1;
      p.max_tokens = 1;
      DecodeResult r = speculative_decode(target, d, ctx, cfg, p);
      REQUIRE(r.tokens.size() == 1);
      counts[r.tokens[0]] += 1.0;
    }
    counts /= trials;
    CHECK((counts - marginal).cwiseAbs().maxCoeff() < 0.01);
  }
}

TEST_CASE("first_token_marginal: rejects non-table models and big vocabularies") {
  TransformerConfig tc;
  tc.vocab_size = 8;
  tc.d_model = 8;
  tc.n_heads = 2;
  tc.n_layers = 1;
  tc.d_ff = 16;
  tc.max_context = 8;
  Transformer tf(tc);
  TableLM tab = TableLM::random(8, 0, 1);
  CHECK_THROWS_AS(first_token_marginal(static_cast<const lm::LanguageModel&>(tf), tab, TokenSeq{1},
                                       AcceptRule::kStandardRatio, greedy_policy(1)),
                  std::invalid_argument);

  TableLM big = TableLM::random(33, 0, 2);
  CHECK_THROWS_AS(first_token_marginal(big, big, TokenSeq{1}, AcceptRule::kStandardRatio,
                                       greedy_policy(1)),
                  std::invalid_argument);
}
