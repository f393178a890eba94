// Copyright 2026 the speclab authors
// SPDX-License-Identifier: Apache-2.0
#include "speclab/graph.hpp"

#include <cmath>

namespace speclab::num {

namespace {
constexpr double kLayerNormEps = 1e-5;
constexpr double kLogFloor = -69.07755278982137;  // log(1e-30)

double gelu_scalar(double x) {
  return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
}

double gelu_grad_scalar(double x) {
  const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  return cdf + x * phi;
}
}  // namespace

Graph::NodeId Graph::push(Mat value, std::function<void()> back, Tensor* bound) {
  if (!value.allFinite()) throw std::runtime_error("Graph: non-finite value produced in forward pass");
  Node n;
  n.value = std::move(value);
  n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  n.back = std::move(back);
  n.bound = bound;
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size()) - 1;
}

Graph::NodeId Graph::constant(Mat value) { return push(std::move(value)); }

Graph::NodeId Graph::param(Tensor* p) {
  auto it = param_nodes_.find(p);
  if (it != param_nodes_.end()) return it->second;
  NodeId id = push(p->value(), {}, p);
  param_nodes_.emplace(p, id);
  return id;
}

Graph::NodeId Graph::add(NodeId a, NodeId b) {
  if (nodes_[a].value.rows() != nodes_[b].value.rows() ||
      nodes_[a].value.cols() != nodes_[b].value.cols()) {
    throw std::invalid_argument("Graph::add: shape mismatch");
  }
  NodeId out = push(nodes_[a].value + nodes_[b].value);
  nodes_[out].back = [this, a, b, out] {
    nodes_[a].grad += nodes_[out].grad;
    nodes_[b].grad += nodes_[out].grad;
  };
  return out;
}

Graph::NodeId Graph::add_rowvec(NodeId a, NodeId row) {
  if (nodes_[row].value.rows() != 1 || nodes_[row].value.cols() != nodes_[a].value.cols()) {
    throw std::invalid_argument("Graph::add_rowvec: row must be 1 x cols(a)");
  }
  NodeId out = push(nodes_[a].value.rowwise() + nodes_[row].value.row(0));
  nodes_[out].back = [this, a, row, out] {
    nodes_[a].grad += nodes_[out].grad;
    nodes_[row].grad.row(0) += nodes_[out].grad.colwise().sum();
  };
  return out;
}

Graph::NodeId Graph::scale(NodeId a, double c) {
  NodeId out = push(nodes_[a].value * c);
  nodes_[out].back = [this, a, out, c] { nodes_[a].grad += c * nodes_[out].grad; };
  return out;
}

Graph::NodeId Graph::gelu(NodeId a) {
  NodeId out = push(nodes_[a].value.unaryExpr([](double x) { return gelu_scalar(x); }));
  nodes_[out].back = [this, a, out] {
    nodes_[a].grad.array() +=
        nodes_[out].grad.array() *
        nodes_[a].value.unaryExpr([](double x) { return gelu_grad_scalar(x); }).array();
  };
  return out;
}

Graph::NodeId Graph::slice_cols(NodeId a, int col0, int ncols) {
  NodeId out = push(nodes_[a].value.middleCols(col0, ncols));
  nodes_[out].back = [this, a, out, col0, ncols] {
    nodes_[a].grad.middleCols(col0, ncols) += nodes_[out].grad;
  };
  return out;
}

Graph::NodeId Graph::slice_rows(NodeId a, int row0, int nrows) {
  NodeId out = push(nodes_[a].value.middleRows(row0, nrows));
  nodes_[out].back = [this, a, out, row0, nrows] {
    nodes_[a].grad.middleRows(row0, nrows) += nodes_[out].grad;
  };
  return out;
}

Graph::NodeId Graph::concat_cols(const std::vector<NodeId>& parts) {
  if (parts.empty()) throw std::invalid_argument("Graph::concat_cols: no parts");
  Eigen::Index rows = nodes_[parts[0]].value.rows();
  Eigen::Index cols = 0;
  for (NodeId p : parts) {
    if (nodes_[p].value.rows() != rows) throw std::invalid_argument("Graph::concat_cols: row mismatch");
    cols += nodes_[p].value.cols();
  }
  Mat v(rows, cols);
  Eigen::Index c = 0;
  for (NodeId p : parts) {
    v.middleCols(c, nodes_[p].value.cols()) = nodes_[p].value;
    c += nodes_[p].value.cols();
  }
  NodeId out = push(std::move(v));
  std::vector<NodeId> ps = parts;
  nodes_[out].back = [this, ps, out] {
    Eigen::Index c = 0;
    for (NodeId p : ps) {
      nodes_[p].grad += nodes_[out].grad.middleCols(c, nodes_[p].value.cols());
      c += nodes_[p].value.cols();
    }
  };
  return out;
}

Graph::NodeId Graph::matmul(NodeId a, NodeId b) {
  if (nodes_[a].value.cols() != nodes_[b].value.rows()) {
    throw std::invalid_argument("Graph::matmul: inner dimension mismatch");
  }
  NodeId out = push(nodes_[a].value * nodes_[b].value);
  nodes_[out].back = [this, a, b, out] {
    nodes_[a].grad.noalias() += nodes_[out].grad * nodes_[b].value.transpose();
    nodes_[b].grad.noalias() += nodes_[a].value.transpose() * nodes_[out].grad;
  };
  return out;
}

Graph::NodeId Graph::matmul_nt(NodeId a, NodeId b) {
  if (nodes_[a].value.cols() != nodes_[b].value.cols()) {
    throw std::invalid_argument("Graph::matmul_nt: inner dimension mismatch");
  }
  NodeId out = push(nodes_[a].value * nodes_[b].value.transpose());
  nodes_[out].back = [this, a, b, out] {
    nodes_[a].grad.noalias() += nodes_[out].grad * nodes_[b].value;
    nodes_[b].grad.noalias() += nodes_[out].grad.transpose() * nodes_[a].value;
  };
  return out;
}

Graph::NodeId Graph::layer_norm(NodeId a, NodeId gain, NodeId bias) {
  const Mat& x = nodes_[a].value;
  const Eigen::Index n = x.cols();
  if (nodes_[gain].value.cols() != n || nodes_[bias].value.cols() != n ||
      nodes_[gain].value.rows() != 1 || nodes_[bias].value.rows() != 1) {
    throw std::invalid_argument("Graph::layer_norm: gain/bias must be 1 x cols");
  }
  Mat xhat(x.rows(), n);
  Vec inv_sigma(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    inv_sigma[r] = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(r) = (x.row(r).array() - mu) * inv_sigma[r];
  }
  Mat y = (xhat.array().rowwise() * nodes_[gain].value.row(0).array()).rowwise() +
          nodes_[bias].value.row(0).array();
  NodeId out = push(std::move(y));
  // Retain xhat / inv_sigma by value in the closure.
  nodes_[out].back = [this, a, gain, bias, out, xhat, inv_sigma] {
    const Mat& g = nodes_[out].grad;
    nodes_[bias].grad.row(0) += g.colwise().sum();
    nodes_[gain].grad.row(0) += (g.array() * xhat.array()).colwise().sum().matrix();
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      Eigen::ArrayXd dxhat = g.row(r).array() * nodes_[gain].value.row(0).array();
      const double m1 = dxhat.mean();
      const double m2 = (dxhat * xhat.row(r).array().transpose()).mean();
      nodes_[a].grad.row(r).array() +=
          inv_sigma[r] * (dxhat - m1 - xhat.row(r).array().transpose() * m2);
    }
  };
  return out;
}

Graph::NodeId Graph::softmax_rows(NodeId a) {
  Mat p = num::softmax_rows(nodes_[a].value, 1.0);
  NodeId out = push(p);
  nodes_[out].back = [this, a, out] {
    const Mat& p = nodes_[out].value;
    const Mat& g = nodes_[out].grad;
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      const double dot = g.row(r).dot(p.row(r));
      nodes_[a].grad.row(r).array() += p.row(r).array() * (g.row(r).array() - dot);
    }
  };
  return out;
}

Graph::NodeId Graph::embedding(NodeId table, const TokenSeq& ids) {
  const Mat& tab = nodes_[table].value;
  Mat v(static_cast<Eigen::Index>(ids.size()), tab.cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tab.rows()) throw std::invalid_argument("Graph::embedding: id out of range");
    v.row(static_cast<Eigen::Index>(i)) = tab.row(ids[i]);
  }
  NodeId out = push(std::move(v));
  TokenSeq ids_copy = ids;
  nodes_[out].back = [this, table, out, ids_copy] {
    for (size_t i = 0; i < ids_copy.size(); ++i) {
      nodes_[table].grad.row(ids_copy[i]) += nodes_[out].grad.row(static_cast<Eigen::Index>(i));
    }
  };
  return out;
}

Graph::NodeId Graph::inner(NodeId a, Mat weights) {
  if (weights.rows() != nodes_[a].value.rows() || weights.cols() != nodes_[a].value.cols()) {
    throw std::invalid_argument("Graph::inner: weight shape mismatch");
  }
  Mat s(1, 1);
  s(0, 0) = (nodes_[a].value.array() * weights.array()).sum();
  NodeId out = push(std::move(s));
  nodes_[out].back = [this, a, out, weights] {
    nodes_[a].grad += nodes_[out].grad(0, 0) * weights;
  };
  return out;
}

Graph::NodeId Graph::cross_entropy(NodeId logits, const TokenSeq& targets,
                                   const std::vector<uint8_t>& mask) {
  const Mat& z = nodes_[logits].value;
  const auto T = static_cast<size_t>(z.rows());
  if (targets.size() != T || mask.size() != T) {
    throw std::invalid_argument("cross_entropy: targets/mask length mismatch");
  }
  int active = 0;
  for (uint8_t m : mask) active += (m != 0);
  if (active == 0) throw std::invalid_argument("cross_entropy: all positions masked");
  double total = 0.0;
  for (size_t t = 0; t < T; ++t) {
    if (!mask[t]) continue;
    if (targets[t] < 0 || targets[t] >= z.cols()) {
      throw std::invalid_argument("cross_entropy: target id out of vocabulary range");
    }
    Vec lsm = log_softmax_row(z.row(static_cast<Eigen::Index>(t)).transpose());
    total -= lsm[targets[t]];
  }
  Mat s(1, 1);
  s(0, 0) = total / active;
  NodeId out = push(std::move(s));
  TokenSeq tgt = targets;
  std::vector<uint8_t> msk = mask;
  nodes_[out].back = [this, logits, out, tgt, msk, active] {
    const double gs = nodes_[out].grad(0, 0) / active;
    const Mat& z = nodes_[logits].value;
    for (size_t t = 0; t < tgt.size(); ++t) {
      if (!msk[t]) continue;
      Vec p = softmax_row(z.row(static_cast<Eigen::Index>(t)).transpose());
      nodes_[logits].grad.row(static_cast<Eigen::Index>(t)) += gs * p.transpose();
      nodes_[logits].grad(static_cast<Eigen::Index>(t), tgt[t]) -= gs;
    }
  };
  return out;
}

Graph::NodeId Graph::kl_to_teacher(const Mat& teacher_logits, NodeId student_logits, double tau,
                                   const std::vector<uint8_t>& mask) {
  if (tau <= 0.0) throw std::invalid_argument("kl_to_teacher: tau must be positive");
  const Mat& zd = nodes_[student_logits].value;
  if (teacher_logits.rows() != zd.rows() || teacher_logits.cols() != zd.cols()) {
    throw std::invalid_argument("kl_to_teacher: teacher/student shape mismatch");
  }
  const auto T = static_cast<size_t>(zd.rows());
  if (mask.size() != T) throw std::invalid_argument("kl_to_teacher: mask length mismatch");
  int active = 0;
  for (uint8_t m : mask) active += (m != 0);
  if (active == 0) throw std::invalid_argument("kl_to_teacher: all positions masked");

  // Cache the softened teacher rows for backward; floor log-probs so exact
  // zeros from truncated teacher distributions cannot produce -inf.
  Mat p_teacher(teacher_logits.rows(), teacher_logits.cols());
  double total = 0.0;
  for (size_t t = 0; t < T; ++t) {
    Vec lt = log_softmax_row(teacher_logits.row(static_cast<Eigen::Index>(t)).transpose(), tau)
                 .cwiseMax(kLogFloor);
    p_teacher.row(static_cast<Eigen::Index>(t)) = lt.array().exp().transpose();
    if (!mask[t]) continue;
    Vec ld = log_softmax_row(zd.row(static_cast<Eigen::Index>(t)).transpose(), tau);
    total += (p_teacher.row(static_cast<Eigen::Index>(t)).transpose().array() *
              (lt - ld).array())
                 .sum();
  }
  Mat s(1, 1);
  s(0, 0) = total / active;
  NodeId out = push(std::move(s));
  std::vector<uint8_t> msk = mask;
  nodes_[out].back = [this, student_logits, out, p_teacher, msk, tau, active] {
    const double gs = nodes_[out].grad(0, 0) / (active * tau);
    const Mat& zd = nodes_[student_logits].value;
    for (size_t t = 0; t < msk.size(); ++t) {
      if (!msk[t]) continue;
      const auto r = static_cast<Eigen::Index>(t);
      Vec pd = softmax_row(zd.row(r).transpose(), tau);
      const double pt_sum = p_teacher.row(r).sum();
      nodes_[student_logits].grad.row(r) +=
          gs * (pt_sum * pd.transpose() - p_teacher.row(r));
    }
  };
  return out;
}

Graph::NodeId Graph::weighted_sum(const std::vector<NodeId>& scalars,
                                  const std::vector<double>& coeffs) {
  if (scalars.size() != coeffs.size() || scalars.empty()) {
    throw std::invalid_argument("Graph::weighted_sum: size mismatch");
  }
  double total = 0.0;
  for (size_t i = 0; i < scalars.size(); ++i) {
    if (nodes_[scalars[i]].value.size() != 1) {
      throw std::invalid_argument("Graph::weighted_sum: inputs must be scalars");
    }
    total += coeffs[i] * nodes_[scalars[i]].value(0, 0);
  }
  Mat s(1, 1);
  s(0, 0) = total;
  NodeId out = push(std::move(s));
  std::vector<NodeId> ss = scalars;
  std::vector<double> cc = coeffs;
  nodes_[out].back = [this, ss, cc, out] {
    for (size_t i = 0; i < ss.size(); ++i) {
      nodes_[ss[i]].grad(0, 0) += cc[i] * nodes_[out].grad(0, 0);
    }
  };
  return out;
}

double Graph::scalar(NodeId id) const {
  if (nodes_[id].value.size() != 1) throw std::invalid_argument("Graph::scalar: node is not scalar");
  return nodes_[id].value(0, 0);
}

void Graph::backward(NodeId loss) {
  if (nodes_[loss].value.size() != 1) {
    throw std::invalid_argument("Graph::backward: loss must be a scalar node");
  }
  nodes_[loss].grad(0, 0) = 1.0;
  for (auto i = static_cast<int64_t>(nodes_.size()) - 1; i >= 0; --i) {
    if (nodes_[i].back) nodes_[i].back();
  }
  for (auto& [tensor, id] : param_nodes_) {
    auto* p = const_cast<Tensor*>(tensor);
    if (!p->has_grad()) p->enable_grad();
    p->grad() += nodes_[id].grad;
    if (!p->grad().allFinite()) throw std::runtime_error("Graph: non-finite gradient in backward pass");
  }
}

// ============================================================================

DistillLossParts mixed_distill_loss(Graph& g, const Mat& teacher_logits,
                                    Graph::NodeId student_logits, const TokenSeq& targets,
                                    const std::vector<uint8_t>& mask, double alpha, double tau,
                                    bool tau_squared) {
  if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("mixed_distill_loss: alpha must be in [0,1]");
  DistillLossParts parts;
  const double kl_coeff = alpha * (tau_squared ? tau * tau : 1.0);
  if (alpha == 0.0) {
    // Pure SFT: keep the tape identical to a plain supervised step and
    // compute the KL component off-tape for logging only.
    Graph::NodeId ce = g.cross_entropy(student_logits, targets, mask);
    parts.total = ce;
    parts.ce = g.scalar(ce);
    parts.kl = kl_loss_value(teacher_logits, g.value(student_logits), tau, mask);
  } else if (alpha == 1.0) {
    Graph::NodeId kl = g.kl_to_teacher(teacher_logits, student_logits, tau, mask);
    parts.total = (kl_coeff == 1.0) ? kl : g.weighted_sum({kl}, {kl_coeff});
    parts.kl = g.scalar(kl);
    parts.ce = cross_entropy_value(g.value(student_logits), targets, mask);
  } else {
    Graph::NodeId kl = g.kl_to_teacher(teacher_logits, student_logits, tau, mask);
    Graph::NodeId ce = g.cross_entropy(student_logits, targets, mask);
    parts.total = g.weighted_sum({kl, ce}, {kl_coeff, 1.0 - alpha});
    parts.kl = g.scalar(kl);
    parts.ce = g.scalar(ce);
  }
  return parts;
}

double cross_entropy_value(const Mat& logits, const TokenSeq& targets,
                           const std::vector<uint8_t>& mask) {
  const auto T = static_cast<size_t>(logits.rows());
  if (targets.size() != T || mask.size() != T) {
    throw std::invalid_argument("cross_entropy: targets/mask length mismatch");
  }
  int active = 0;
  double total = 0.0;
  for (size_t t = 0; t < T; ++t) {
    if (!mask[t]) continue;
    if (targets[t] < 0 || targets[t] >= logits.cols()) {
      throw std::invalid_argument("cross_entropy: target id out of vocabulary range");
    }
    ++active;
    total -= log_softmax_row(logits.row(static_cast<Eigen::Index>(t)).transpose())[targets[t]];
  }
  if (active == 0) throw std::invalid_argument("cross_entropy: all positions masked");
  return total / active;
}

double kl_loss_value(const Mat& teacher_logits, const Mat& student_logits, double tau,
                     const std::vector<uint8_t>& mask) {
  if (tau <= 0.0) throw std::invalid_argument("kl_loss: tau must be positive");
  if (teacher_logits.rows() != student_logits.rows() ||
      teacher_logits.cols() != student_logits.cols()) {
    throw std::invalid_argument("kl_loss: shape mismatch");
  }
  int active = 0;
  double total = 0.0;
  for (Eigen::Index t = 0; t < teacher_logits.rows(); ++t) {
    if (!mask[static_cast<size_t>(t)]) continue;
    ++active;
    Vec lt = log_softmax_row(teacher_logits.row(t).transpose(), tau).cwiseMax(kLogFloor);
    Vec ld = log_softmax_row(student_logits.row(t).transpose(), tau);
    total += (lt.array().exp() * (lt - ld).array()).sum();
  }
  if (active == 0) throw std::invalid_argument("kl_loss: all positions masked");
  return total / active;
}

double grad_check(const std::function<double()>& loss_fn, std::span<Tensor* const> params,
                  double epsilon, int max_entries, uint64_t seed) {
  if (epsilon < 1e-6 || epsilon > 1e-4) {
    throw std::invalid_argument("grad_check: epsilon must be in [1e-6, 1e-4]");
  }
  for (Tensor* p : params) {
    if (!p->has_grad()) p->enable_grad();
    p->zero_grad();
  }
  (void)loss_fn();
  std::vector<Mat> analytic;
  analytic.reserve(params.size());
  for (Tensor* p : params) analytic.push_back(p->grad());

  Rng rng(seed);
  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor* p = params[pi];
    const int64_t n = p->size();
    std::vector<int64_t> entries;
    if (n <= max_entries) {
      entries.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) entries[static_cast<size_t>(i)] = i;
    } else {
      for (int i = 0; i < max_entries; ++i) entries.push_back(static_cast<int64_t>(rng.below(n)));
    }
    for (int64_t idx : entries) {
      const double saved = p->at_flat(idx);
      p->at_flat(idx) = saved + epsilon;
      for (Tensor* q : params) q->zero_grad();
      const double lp = loss_fn();
      p->at_flat(idx) = saved - epsilon;
      for (Tensor* q : params) q->zero_grad();
      const double lm = loss_fn();
      p->at_flat(idx) = saved;
      const double numeric = (lp - lm) / (2.0 * epsilon);
      const double a = analytic[pi].data()[idx];
      const double rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
      worst = std::max(worst, rel);
    }
  }
  for (Tensor* p : params) p->zero_grad();
  return worst;
}

}  // namespace speclab::num
