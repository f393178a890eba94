// Copyright 2026 the speclab authors
// SPDX-License-Identifier: Apache-2.0
#include "speclab/table_lm.hpp"

#include <cmath>

namespace speclab::lm {

namespace {

class TableSession final : public LmSession {
 public:
  explicit TableSession(const TableLM& model) : model_(model) {}

  Mat append(std::span<const TokenId> tokens) override {
    Mat out(static_cast<Eigen::Index>(tokens.size()), model_.vocab_size());
    for (size_t i = 0; i < tokens.size(); ++i) {
      context_.push_back(tokens[i]);
      out.row(static_cast<Eigen::Index>(i)) = model_.logit_row(context_).transpose();
    }
    return out;
  }

  void truncate(int n_tokens) override {
    if (n_tokens < 0 || n_tokens > static_cast<int>(context_.size())) {
      throw std::invalid_argument("TableSession::truncate: bad length");
    }
    context_.resize(static_cast<size_t>(n_tokens));
  }

  int size() const override { return static_cast<int>(context_.size()); }

 private:
  const TableLM& model_;
  TokenSeq context_;
};

}  // namespace

TableLM::TableLM(int vocab_size, int order) : vocab_size_(vocab_size), order_(order) {
  if (vocab_size < 2) throw std::invalid_argument("TableLM: vocab_size must be >= 2");
  if (order < 0) throw std::invalid_argument("TableLM: order must be >= 0");
  uniform_ = Vec::Constant(vocab_size, 1.0 / vocab_size);
}

void TableLM::set_row(const TokenSeq& context, Vec probabilities) {
  if (static_cast<int>(context.size()) > order_) {
    throw std::invalid_argument("TableLM::set_row: context longer than order");
  }
  if (probabilities.size() != vocab_size_) {
    throw std::invalid_argument("TableLM::set_row: wrong vector length");
  }
  const double sum = probabilities.sum();
  if (std::abs(sum - 1.0) > 1e-9 || probabilities.minCoeff() <= 0.0) {
    throw std::invalid_argument("TableLM::set_row: row must be strictly positive and sum to 1");
  }
  probabilities /= sum;  // exact renormalization
  rows_[context] = std::move(probabilities);
}

const Vec& TableLM::prob_row(std::span<const TokenId> context) const {
  const int max_len = std::min<int>(order_, static_cast<int>(context.size()));
  for (int len = max_len; len >= 0; --len) {
    TokenSeq key(context.end() - len, context.end());
    auto it = rows_.find(key);
    if (it != rows_.end()) return it->second;
  }
  return uniform_;
}

Vec TableLM::logit_row(std::span<const TokenId> context) const {
  return prob_row(context).array().log();
}

std::unique_ptr<LmSession> TableLM::make_session() const {
  return std::make_unique<TableSession>(*this);
}

TableLM TableLM::random(int vocab_size, int order, uint64_t seed, double concentration) {
  TableLM model(vocab_size, order);
  Rng rng(seed);
  // Enumerate all contexts of length 0..order over the vocabulary.
  std::vector<TokenSeq> contexts{TokenSeq{}};
  size_t level_begin = 0;
  for (int len = 1; len <= order; ++len) {
    const size_t level_end = contexts.size();
    for (size_t i = level_begin; i < level_end; ++i) {
      for (TokenId t = 0; t < vocab_size; ++t) {
        TokenSeq c = contexts[i];
        c.push_back(t);
        contexts.push_back(std::move(c));
      }
    }
    level_begin = level_end;
  }
  for (const auto& ctx : contexts) {
    Vec row(vocab_size);
    for (int i = 0; i < vocab_size; ++i) {
      row[i] = std::exp(rng.normal() / std::max(concentration, 1e-3));
    }
    row /= row.sum();
    model.set_row(ctx, std::move(row));
  }
  return model;
}

TableLM TableLM::peaked(int vocab_size, int order, uint64_t seed, double epsilon) {
  TableLM model(vocab_size, order);
  Rng ctx_rng(seed);
  std::vector<TokenSeq> contexts{TokenSeq{}};
  size_t level_begin = 0;
  for (int len = 1; len <= order; ++len) {
    const size_t level_end = contexts.size();
    for (size_t i = level_begin; i < level_end; ++i) {
      for (TokenId t = 0; t < vocab_size; ++t) {
        TokenSeq c = contexts[i];
        c.push_back(t);
        contexts.push_back(std::move(c));
      }
    }
    level_begin = level_end;
  }
  const double floor = std::max(epsilon, 1e-12) / vocab_size;
  for (const auto& ctx : contexts) {
    const auto peak = static_cast<TokenId>(ctx_rng.below(static_cast<uint64_t>(vocab_size)));
    Vec row = Vec::Constant(vocab_size, floor);
    row[peak] += 1.0 - floor * vocab_size;
    model.set_row(ctx, std::move(row));
  }
  return model;
}

TableLM fit_table_lm(const std::vector<TokenSeq>& corpus, int order, double smoothing) {
  if (smoothing <= 0.0) throw std::invalid_argument("fit_table_lm: smoothing must be positive");
  TokenId max_id = 0;
  for (const auto& seq : corpus) {
    for (TokenId t : seq) max_id = std::max(max_id, t);
  }
  const int vocab = std::max<int>(max_id + 1, 2);
  TableLM model(vocab, order);

  struct SeqHash {
    size_t operator()(const TokenSeq& s) const {
      return static_cast<size_t>(fnv1a(s.data(), s.size() * sizeof(TokenId)));
    }
  };
  std::unordered_map<TokenSeq, Vec, SeqHash> counts;
  for (const auto& seq : corpus) {
    for (size_t i = 0; i < seq.size(); ++i) {
      const int max_len = std::min<int>(order, static_cast<int>(i));
      for (int len = 0; len <= max_len; ++len) {
        TokenSeq ctx(seq.begin() + static_cast<long>(i) - len, seq.begin() + static_cast<long>(i));
        auto [it, inserted] = counts.try_emplace(ctx, Vec::Zero(vocab));
        it->second[seq[i]] += 1.0;
      }
    }
  }
  for (auto& [ctx, c] : counts) {
    Vec row = (c.array() + smoothing) / (c.sum() + smoothing * vocab);
    model.set_row(ctx, std::move(row));
  }
  return model;
}

}  // namespace speclab::lm
