// Copyright 2026 the speclab authors
// SPDX-License-Identifier: Apache-2.0
#include "speclab/tensor.hpp"

namespace speclab::num {

Vec softmax_row(const Vec& logits, double temperature) {
  if (temperature <= 0.0) throw std::invalid_argument("softmax: temperature must be positive");
  if (!logits.allFinite()) throw std::invalid_argument("softmax: non-finite logits");
  const double m = logits.maxCoeff();
  Vec e = ((logits.array() - m) / temperature).exp();
  return e / e.sum();
}

Mat softmax_rows(const Mat& logits, double temperature) {
  if (temperature <= 0.0) throw std::invalid_argument("softmax: temperature must be positive");
  if (!logits.allFinite()) throw std::invalid_argument("softmax: non-finite logits");
  Mat out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    out.row(r) = ((logits.row(r).array() - m) / temperature).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

Tensor softmax(const Tensor& logits, double temperature) {
  return Tensor(logits.shape(), softmax_rows(logits.value(), temperature));
}

Vec log_softmax_row(const Vec& logits, double temperature) {
  if (temperature <= 0.0) throw std::invalid_argument("softmax: temperature must be positive");
  const double m = logits.maxCoeff();
  Vec shifted = (logits.array() - m) / temperature;
  const double lse = std::log(shifted.array().exp().sum());
  return shifted.array() - lse;
}

Mat log_softmax_rows(const Mat& logits, double temperature) {
  Mat out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    out.row(r) = log_softmax_row(logits.row(r).transpose(), temperature).transpose();
  }
  return out;
}

}  // namespace speclab::num
