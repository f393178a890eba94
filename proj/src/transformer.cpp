// Copyright 2026 the speclab authors
// SPDX-License-Identifier: Apache-2.0
#include "speclab/transformer.hpp"

#include <cmath>

namespace speclab::lm {

using num::Graph;
using num::Tensor;

namespace {

constexpr double kInitStd = 0.08;
constexpr double kLayerNormEps = 1e-5;  // must match the tape op
constexpr double kMaskValue = -1e30;

void fill_normal(Tensor& t, Rng& rng, double stddev) {
  for (int64_t i = 0; i < t.size(); ++i) t.at_flat(i) = stddev * rng.normal();
}

void fill_const(Tensor& t, double v) {
  for (int64_t i = 0; i < t.size(); ++i) t.at_flat(i) = v;
}

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

Mat layer_norm_rows(const Mat& x, const Mat& gain, const Mat& bias) {
  Mat out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    out.row(r) = ((x.row(r).array() - mu) / std::sqrt(var + kLayerNormEps)) * gain.row(0).array() +
                 bias.row(0).array();
  }
  return out;
}

}  // namespace

// ============================================================================
// KV-cache session
// ============================================================================

class TransformerSession final : public LmSession {
 public:
  explicit TransformerSession(const Transformer& model) : model_(model) {
    const auto& cfg = model.config();
    k_cache_.resize(static_cast<size_t>(cfg.n_layers));
    v_cache_.resize(static_cast<size_t>(cfg.n_layers));
    for (int l = 0; l < cfg.n_layers; ++l) {
      k_cache_[static_cast<size_t>(l)] = Mat::Zero(cfg.max_context, cfg.d_model);
      v_cache_[static_cast<size_t>(l)] = Mat::Zero(cfg.max_context, cfg.d_model);
    }
  }

  Mat append(std::span<const TokenId> tokens) override;

  void truncate(int n_tokens) override {
    if (n_tokens < 0 || n_tokens > len_) {
      throw std::invalid_argument("TransformerSession::truncate: bad length");
    }
    len_ = n_tokens;  // stale cache rows above len_ are overwritten on append
  }

  int size() const override { return len_; }

 private:
  const Transformer& model_;
  std::vector<Mat> k_cache_;
  std::vector<Mat> v_cache_;
  int len_ = 0;
};

Mat TransformerSession::append(std::span<const TokenId> tokens) {
  const auto& cfg = model_.config();
  const auto p = static_cast<int>(tokens.size());
  if (p == 0) return Mat(0, cfg.vocab_size);
  if (len_ + p > cfg.max_context) {
    throw std::invalid_argument("TransformerSession::append: context exceeds model maximum");
  }
  const int d = cfg.d_model;
  const int hd = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  Mat x(p, d);
  for (int i = 0; i < p; ++i) {
    const TokenId t = tokens[static_cast<size_t>(i)];
    if (t < 0 || t >= cfg.vocab_size) {
      throw std::invalid_argument("TransformerSession::append: token id out of range");
    }
    x.row(i) = model_.tok_emb_.value().row(t) + model_.pos_emb_.value().row(len_ + i);
  }

  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& L = model_.layers_[static_cast<size_t>(l)];
    Mat h = layer_norm_rows(x, L.ln1_gain.value(), L.ln1_bias.value());
    Mat qn = (h * L.wq.value()).rowwise() + L.bq.value().row(0);
    Mat kn = (h * L.wk.value()).rowwise() + L.bk.value().row(0);
    Mat vn = (h * L.wv.value()).rowwise() + L.bv.value().row(0);
    k_cache_[static_cast<size_t>(l)].middleRows(len_, p) = kn;
    v_cache_[static_cast<size_t>(l)].middleRows(len_, p) = vn;

    Mat att_out(p, d);
    for (int head = 0; head < cfg.n_heads; ++head) {
      const int c0 = head * hd;
      for (int i = 0; i < p; ++i) {
        const int ctx = len_ + i + 1;
        auto keys = k_cache_[static_cast<size_t>(l)].topRows(ctx).middleCols(c0, hd);
        auto vals = v_cache_[static_cast<size_t>(l)].topRows(ctx).middleCols(c0, hd);
        Vec scores = (keys * qn.row(i).segment(c0, hd).transpose()) * scale;
        Vec attn = num::softmax_row(scores);
        att_out.row(i).segment(c0, hd) = attn.transpose() * vals;
      }
    }
    x += ((att_out * L.wo.value()).rowwise() + L.bo.value().row(0)).eval();

    Mat h2 = layer_norm_rows(x, L.ln2_gain.value(), L.ln2_bias.value());
    Mat f = ((h2 * L.w1.value()).rowwise() + L.b1.value().row(0))
                .unaryExpr([](double v) { return gelu_scalar(v); });
    x += ((f * L.w2.value()).rowwise() + L.b2.value().row(0)).eval();
  }

  Mat xf = layer_norm_rows(x, model_.lnf_gain_.value(), model_.lnf_bias_.value());
  len_ += p;
  return xf * model_.tok_emb_.value().transpose();
}

// ============================================================================
// Transformer
// ============================================================================

void TransformerConfig::validate() const {
  if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0) {
    throw std::invalid_argument("TransformerConfig: dimensions must be positive");
  }
  if (d_model % n_heads != 0) throw std::invalid_argument("TransformerConfig: d_model % n_heads != 0");
  if (max_context < 2) throw std::invalid_argument("TransformerConfig: max_context must be >= 2");
  if (vocab_size < 2) throw std::invalid_argument("TransformerConfig: vocab_size must be >= 2");
}

Transformer::Transformer(const TransformerConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int d = cfg_.d_model;
  Rng rng(cfg_.init_seed);

  tok_emb_ = Tensor({cfg_.vocab_size, d});
  pos_emb_ = Tensor({cfg_.max_context, d});
  fill_normal(tok_emb_, rng, kInitStd);
  fill_normal(pos_emb_, rng, kInitStd);

  layers_.resize(static_cast<size_t>(cfg_.n_layers));
  for (auto& L : layers_) {
    L.ln1_gain = Tensor({1, d});
    L.ln1_bias = Tensor({1, d});
    fill_const(L.ln1_gain, 1.0);
    L.wq = Tensor({d, d});
    L.bq = Tensor({1, d});
    L.wk = Tensor({d, d});
    L.bk = Tensor({1, d});
    L.wv = Tensor({d, d});
    L.bv = Tensor({1, d});
    L.wo = Tensor({d, d});
    L.bo = Tensor({1, d});
    fill_normal(L.wq, rng, kInitStd);
    fill_normal(L.wk, rng, kInitStd);
    fill_normal(L.wv, rng, kInitStd);
    fill_normal(L.wo, rng, kInitStd);
    L.ln2_gain = Tensor({1, d});
    L.ln2_bias = Tensor({1, d});
    fill_const(L.ln2_gain, 1.0);
    L.w1 = Tensor({d, cfg_.d_ff});
    L.b1 = Tensor({1, cfg_.d_ff});
    L.w2 = Tensor({cfg_.d_ff, d});
    L.b2 = Tensor({1, d});
    fill_normal(L.w1, rng, kInitStd);
    fill_normal(L.w2, rng, kInitStd);
  }
  lnf_gain_ = Tensor({1, d});
  lnf_bias_ = Tensor({1, d});
  fill_const(lnf_gain_, 1.0);
}

Graph::NodeId Transformer::forward_logits(Graph& g, const TokenSeq& ids) const {
  const auto T = static_cast<int>(ids.size());
  if (T == 0) throw std::invalid_argument("Transformer::forward_logits: empty context");
  if (T > cfg_.max_context) {
    throw std::invalid_argument("Transformer::forward_logits: context exceeds model maximum");
  }
  auto* self = const_cast<Transformer*>(this);
  const int hd = cfg_.head_dim();

  Mat causal = Mat::Zero(T, T);
  for (int i = 0; i < T; ++i) {
    for (int j = i + 1; j < T; ++j) causal(i, j) = kMaskValue;
  }
  Graph::NodeId mask = g.constant(std::move(causal));

  Graph::NodeId tok = g.param(&self->tok_emb_);
  Graph::NodeId x = g.add(g.embedding(tok, ids), g.slice_rows(g.param(&self->pos_emb_), 0, T));

  for (auto& L : self->layers_) {
    Graph::NodeId h = g.layer_norm(x, g.param(&L.ln1_gain), g.param(&L.ln1_bias));
    Graph::NodeId q = g.add_rowvec(g.matmul(h, g.param(&L.wq)), g.param(&L.bq));
    Graph::NodeId k = g.add_rowvec(g.matmul(h, g.param(&L.wk)), g.param(&L.bk));
    Graph::NodeId v = g.add_rowvec(g.matmul(h, g.param(&L.wv)), g.param(&L.bv));
    std::vector<Graph::NodeId> heads;
    for (int head = 0; head < cfg_.n_heads; ++head) {
      const int c0 = head * hd;
      Graph::NodeId qh = g.slice_cols(q, c0, hd);
      Graph::NodeId kh = g.slice_cols(k, c0, hd);
      Graph::NodeId vh = g.slice_cols(v, c0, hd);
      Graph::NodeId scores =
          g.add(g.scale(g.matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(hd))), mask);
      heads.push_back(g.matmul(g.softmax_rows(scores), vh));
    }
    Graph::NodeId att = g.add_rowvec(g.matmul(g.concat_cols(heads), g.param(&L.wo)), g.param(&L.bo));
    x = g.add(x, att);
    Graph::NodeId h2 = g.layer_norm(x, g.param(&L.ln2_gain), g.param(&L.ln2_bias));
    Graph::NodeId f = g.gelu(g.add_rowvec(g.matmul(h2, g.param(&L.w1)), g.param(&L.b1)));
    x = g.add(x, g.add_rowvec(g.matmul(f, g.param(&L.w2)), g.param(&L.b2)));
  }
  Graph::NodeId xf = g.layer_norm(x, g.param(&self->lnf_gain_), g.param(&self->lnf_bias_));
  return g.matmul_nt(xf, tok);  // tied output projection
}

std::vector<Tensor*> Transformer::parameters() {
  std::vector<Tensor*> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::vector<std::pair<std::string, Tensor*>> Transformer::named_parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("tok_emb", &tok_emb_);
  out.emplace_back("pos_emb", &pos_emb_);
  for (size_t l = 0; l < layers_.size(); ++l) {
    auto& L = layers_[l];
    const std::string prefix = "layer" + std::to_string(l) + ".";
    out.emplace_back(prefix + "ln1_gain", &L.ln1_gain);
    out.emplace_back(prefix + "ln1_bias", &L.ln1_bias);
    out.emplace_back(prefix + "wq", &L.wq);
    out.emplace_back(prefix + "bq", &L.bq);
    out.emplace_back(prefix + "wk", &L.wk);
    out.emplace_back(prefix + "bk", &L.bk);
    out.emplace_back(prefix + "wv", &L.wv);
    out.emplace_back(prefix + "bv", &L.bv);
    out.emplace_back(prefix + "wo", &L.wo);
    out.emplace_back(prefix + "bo", &L.bo);
    out.emplace_back(prefix + "ln2_gain", &L.ln2_gain);
    out.emplace_back(prefix + "ln2_bias", &L.ln2_bias);
    out.emplace_back(prefix + "w1", &L.w1);
    out.emplace_back(prefix + "b1", &L.b1);
    out.emplace_back(prefix + "w2", &L.w2);
    out.emplace_back(prefix + "b2", &L.b2);
  }
  out.emplace_back("lnf_gain", &lnf_gain_);
  out.emplace_back("lnf_bias", &lnf_bias_);
  return out;
}

int64_t Transformer::parameter_count() const {
  int64_t n = 0;
  for (auto& [name, t] : const_cast<Transformer*>(this)->named_parameters()) n += t->size();
  return n;
}

std::unique_ptr<LmSession> Transformer::make_session() const {
  return std::make_unique<TransformerSession>(*this);
}

double Transformer::flops_per_token() const {
  // Weight-matrix multiply-adds dominate at desk scale; the context-dependent
  // attention term is omitted from this nominal figure.
  const double per_layer = 4.0 * cfg_.d_model * cfg_.d_model + 2.0 * cfg_.d_model * cfg_.d_ff;
  return 2.0 * (cfg_.n_layers * per_layer + static_cast<double>(cfg_.d_model) * cfg_.vocab_size);
}

Mat lm_logits(const LanguageModel& model, std::span<const TokenId> context) {
  if (static_cast<int>(context.size()) > model.max_context()) {
    throw std::invalid_argument("lm_logits: context exceeds model maximum");
  }
  return model.make_session()->append(context);
}

}  // namespace speclab::lm
