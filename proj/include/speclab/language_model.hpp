// Copyright 2026 the speclab authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "speclab/common.hpp"

#include <memory>

namespace speclab::lm {

// ============================================================================
// LanguageModel / LmSession
// ============================================================================

// Incremental decoding session over one immutable model. append(tokens)
// extends the context and returns one logits row per appended token, where
// the row for the token at position j predicts position j+1. truncate(n)
// rolls the context back to n tokens (rejected speculative positions are
// discarded this way). Sessions are single-threaded.
class LmSession {
 public:
  virtual ~LmSession() = default;

  virtual Mat append(std::span<const TokenId> tokens) = 0;
  virtual void truncate(int n_tokens) = 0;
  virtual int size() const = 0;
};

// Anything that maps a token context to per-position next-token logits.
// Realized by the exact table model (test oracle) and the trainable
// transformer. Models are immutable during inference; any number of sessions
// may read one model concurrently.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual int vocab_size() const = 0;
  virtual int max_context() const = 0;
  virtual std::unique_ptr<LmSession> make_session() const = 0;
  // Nominal forward cost per token position, used for the bench module's
  // draft/target cost-ratio validation.
  virtual double flops_per_token() const = 0;
};

// Teacher-forced logits for every position of a context: one forward pass,
// shape (len(context), vocab). Row i depends only on ids 0..i.
Mat lm_logits(const LanguageModel& model, std::span<const TokenId> context);

}  // namespace speclab::lm
