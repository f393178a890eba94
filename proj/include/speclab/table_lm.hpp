// Copyright 2026 the speclab authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "speclab/language_model.hpp"

#include <unordered_map>

namespace speclab::lm {

// ============================================================================
// TableLM — exact n-gram table model
// ============================================================================

// Language model whose conditional distributions are stored explicitly: each
// context of up to `order` trailing tokens maps to a full probability vector
// over the vocabulary. Because every distribution is available in closed
// form, decoding behaviour can be verified by exact enumeration — this is
// the oracle the distributional-equivalence tests are built on.
//
// Lookup backs off from the longest stored suffix down to the empty context;
// contexts never seen anywhere resolve to the uniform distribution.
class TableLM final : public LanguageModel {
 public:
  TableLM(int vocab_size, int order);

  // Sets the (smoothed, normalized) distribution for one exact context.
  void set_row(const TokenSeq& context, Vec probabilities);

  // Exact next-token distribution after `context` (applies suffix backoff).
  const Vec& prob_row(std::span<const TokenId> context) const;
  Vec logit_row(std::span<const TokenId> context) const;

  int order() const { return order_; }

  // LanguageModel interface.
  int vocab_size() const override { return vocab_size_; }
  int max_context() const override { return 1 << 24; }
  std::unique_ptr<LmSession> make_session() const override;
  double flops_per_token() const override { return vocab_size_; }

  // Fully random model: every context of length exactly `order` gets an
  // independent random distribution (plus random shorter-context rows for
  // backoff). concentration < 1 sharpens rows, > 1 flattens them.
  static TableLM random(int vocab_size, int order, uint64_t seed, double concentration = 1.0);

  // Near-deterministic model: every context maps to a single token chosen by
  // a seeded hash, with 1 - epsilon of the mass on it.
  static TableLM peaked(int vocab_size, int order, uint64_t seed, double epsilon = 0.0);

 private:
  struct SeqHash {
    size_t operator()(const TokenSeq& s) const {
      return static_cast<size_t>(fnv1a(s.data(), s.size() * sizeof(TokenId)));
    }
  };

  int vocab_size_ = 0;
  int order_ = 0;
  Vec uniform_;
  std::unordered_map<TokenSeq, Vec, SeqHash> rows_;
};

// Fits a TableLM on token sequences: row(ctx) proportional to
// count(ctx, next) + smoothing, for all context lengths 0..order. Rows for
// unseen contexts stay uniform.
TableLM fit_table_lm(const std::vector<TokenSeq>& corpus, int order, double smoothing);

}  // namespace speclab::lm
