// Copyright 2026 the speclab authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "speclab/tensor.hpp"

#include <functional>
#include <unordered_map>

namespace speclab::num {

// ============================================================================
// Reverse-mode tape
// ============================================================================

// A Graph records one forward pass as a flat tape of matrix-valued nodes.
// Nodes are appended in topological order, so backward() is a single reverse
// sweep. Parameter leaves are bound to external Tensors: after the sweep
// their accumulated gradients are flushed into Tensor::grad(), which is what
// the optimizer consumes.
//
// The op set is exactly what a pre-norm causal transformer with tied
// embeddings and the distillation losses need; this is not a general array
// framework.
class Graph {
 public:
  using NodeId = int;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // --- leaves ---
  NodeId constant(Mat value);
  // Bound parameter leaf; memoized so repeated uses share one node.
  NodeId param(Tensor* p);

  // --- elementwise / structural ---
  NodeId add(NodeId a, NodeId b);              // same shape
  NodeId add_rowvec(NodeId a, NodeId row);     // broadcast a 1xN row over rows
  NodeId scale(NodeId a, double c);
  NodeId gelu(NodeId a);
  NodeId slice_cols(NodeId a, int col0, int ncols);
  NodeId slice_rows(NodeId a, int row0, int nrows);
  NodeId concat_cols(const std::vector<NodeId>& parts);

  // --- linear algebra ---
  NodeId matmul(NodeId a, NodeId b);     // A(m,k) * B(k,n)
  NodeId matmul_nt(NodeId a, NodeId b);  // A(m,k) * B(n,k)^T

  // --- neural-net blocks ---
  NodeId layer_norm(NodeId a, NodeId gain, NodeId bias);  // per row
  NodeId softmax_rows(NodeId a);                          // temperature 1
  NodeId embedding(NodeId table, const TokenSeq& ids);    // gather rows

  // --- reductions / losses (all produce 1x1 nodes) ---
  // Frobenius inner product <a, w>; used to reduce op outputs to scalars.
  NodeId inner(NodeId a, Mat weights);
  // Masked mean next-token negative log-likelihood. logits: (T,V).
  NodeId cross_entropy(NodeId logits, const TokenSeq& targets,
                       const std::vector<uint8_t>& mask);
  // Masked mean KL(softmax(teacher/tau) || softmax(student/tau)). The teacher
  // side is a constant; gradient flows to the student only. Teacher log-probs
  // are floored at log(1e-30) to guard zeros from truncated distributions.
  NodeId kl_to_teacher(const Mat& teacher_logits, NodeId student_logits, double tau,
                       const std::vector<uint8_t>& mask);
  // sum_i coeffs[i] * scalars[i]; every input must be 1x1.
  NodeId weighted_sum(const std::vector<NodeId>& scalars, const std::vector<double>& coeffs);

  const Mat& value(NodeId id) const { return nodes_[id].value; }
  const Mat& grad(NodeId id) const { return nodes_[id].grad; }
  double scalar(NodeId id) const;

  // Reverse sweep from a scalar loss node. Flushes parameter gradients into
  // their bound Tensors (accumulating, so callers zero grads between steps).
  void backward(NodeId loss);

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void()> back;  // empty for leaves
    Tensor* bound = nullptr;
  };

  NodeId push(Mat value, std::function<void()> back = {}, Tensor* bound = nullptr);
  Mat& grad_ref(NodeId id) { return nodes_[id].grad; }

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, NodeId> param_nodes_;
};

// ============================================================================
// Loss helpers and gradient checking
// ============================================================================

// Masked mean losses evaluated outside the tape (same math as the graph ops;
// used for evaluation and component logging).
double cross_entropy_value(const Mat& logits, const TokenSeq& targets,
                           const std::vector<uint8_t>& mask);
double kl_loss_value(const Mat& teacher_logits, const Mat& student_logits, double tau,
                     const std::vector<uint8_t>& mask);

struct DistillLossParts {
  Graph::NodeId total;  // scalar node driving backward
  double kl = 0.0;      // component values for logging
  double ce = 0.0;
};

// alpha * KL + (1 - alpha) * CE, the mixed distillation objective. At the
// degenerate endpoints the absent term is kept off the tape entirely (its
// value is still reported), so alpha = 0 runs the exact supervised step.
// When tau_squared is set the KL term is additionally scaled by tau^2
// (classical correction; off by default).
DistillLossParts mixed_distill_loss(Graph& g, const Mat& teacher_logits,
                                    Graph::NodeId student_logits, const TokenSeq& targets,
                                    const std::vector<uint8_t>& mask, double alpha, double tau,
                                    bool tau_squared = false);

// Central-difference gradient verification. loss_fn must run a full
// deterministic forward+backward populating the gradients of `params`.
// Samples at most max_entries entries per tensor and returns the max of
// |analytic - numeric| / (|analytic| + |numeric| + 1e-12).
double grad_check(const std::function<double()>& loss_fn, std::span<Tensor* const> params,
                  double epsilon = 1e-5, int max_entries = 256, uint64_t seed = 0x5eed);

}  // namespace speclab::num
