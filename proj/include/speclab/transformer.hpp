// Copyright 2026 the speclab authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "speclab/graph.hpp"
#include "speclab/language_model.hpp"

namespace speclab::lm {

// ============================================================================
// Tiny causal transformer
// ============================================================================

struct TransformerConfig {
  int d_model = 32;
  int n_layers = 2;
  int n_heads = 2;
  int d_ff = 128;
  int max_context = 128;
  int vocab_size = 0;
  uint64_t init_seed = 1;

  void validate() const;
  int head_dim() const { return d_model / n_heads; }
  bool operator==(const TransformerConfig&) const = default;
};

// Pre-norm decoder-only transformer with learned positional embeddings and a
// weight-tied output projection. Double precision throughout; sized for
// desk-scale experiments, not throughput records.
class Transformer final : public LanguageModel {
 public:
  struct Layer {
    num::Tensor ln1_gain, ln1_bias;
    num::Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    num::Tensor ln2_gain, ln2_bias;
    num::Tensor w1, b1, w2, b2;
  };

  explicit Transformer(const TransformerConfig& cfg);  // deterministic per seed

  const TransformerConfig& config() const { return cfg_; }

  // Teacher-forced forward on the tape; returns the (len, vocab) logits node.
  num::Graph::NodeId forward_logits(num::Graph& g, const TokenSeq& ids) const;

  // All trainable tensors, paired with stable names for checkpoints.
  std::vector<num::Tensor*> parameters();
  std::vector<std::pair<std::string, num::Tensor*>> named_parameters();
  int64_t parameter_count() const;

  // LanguageModel interface.
  int vocab_size() const override { return cfg_.vocab_size; }
  int max_context() const override { return cfg_.max_context; }
  std::unique_ptr<LmSession> make_session() const override;
  double flops_per_token() const override;

 private:
  friend class TransformerSession;

  TransformerConfig cfg_;
  num::Tensor tok_emb_;  // (V, d); also the tied output projection
  num::Tensor pos_emb_;  // (max_context, d)
  std::vector<Layer> layers_;
  num::Tensor lnf_gain_, lnf_bias_;
};

}  // namespace speclab::lm
