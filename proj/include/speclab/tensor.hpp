// Copyright 2026 the speclab authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "speclab/common.hpp"

#include <numeric>

namespace speclab::num {

// ============================================================================
// Tensor
// ============================================================================

// Dense double-precision tensor. Values are stored row-major with the last
// extent as the contiguous axis, which lets every rank map onto one Eigen
// matrix of shape (product-of-leading-extents, last-extent). A gradient
// buffer of identical shape is attached only for tensors that train.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    check_shape(shape_);
    value_ = Mat::Zero(leading_extent(shape_), shape_.back());
  }

  Tensor(std::vector<int> shape, Mat value) : shape_(std::move(shape)), value_(std::move(value)) {
    check_shape(shape_);
    if (value_.rows() != leading_extent(shape_) || value_.cols() != shape_.back()) {
      throw std::invalid_argument("Tensor: value extents do not match shape");
    }
  }

  static Tensor from_matrix(Mat m) {
    std::vector<int> shape{static_cast<int>(m.rows()), static_cast<int>(m.cols())};
    return Tensor(std::move(shape), std::move(m));
  }

  const std::vector<int>& shape() const { return shape_; }
  int64_t size() const { return value_.size(); }

  Mat& value() { return value_; }
  const Mat& value() const { return value_; }

  bool has_grad() const { return grad_.size() != 0; }

  // Allocates (zeroed) the gradient buffer; marks the tensor as trainable.
  void enable_grad() {
    grad_ = Mat::Zero(value_.rows(), value_.cols());
  }

  Mat& grad() {
    if (!has_grad()) throw std::logic_error("Tensor: gradient not enabled");
    return grad_;
  }
  const Mat& grad() const {
    if (!has_grad()) throw std::logic_error("Tensor: gradient not enabled");
    return grad_;
  }

  void zero_grad() {
    if (has_grad()) grad_.setZero();
  }

  bool all_finite() const { return value_.allFinite(); }

  // Flat element access in row-major order (used by grad_check and the
  // checkpoint writer).
  double& at_flat(int64_t i) { return value_.data()[i]; }
  double at_flat(int64_t i) const { return value_.data()[i]; }
  double grad_flat(int64_t i) const { return grad_.data()[i]; }

 private:
  static void check_shape(const std::vector<int>& shape) {
    if (shape.empty()) throw std::invalid_argument("Tensor: empty shape");
    for (int e : shape) {
      if (e <= 0) throw std::invalid_argument("Tensor: non-positive extent");
    }
  }

  static int64_t leading_extent(const std::vector<int>& shape) {
    int64_t n = 1;
    for (size_t i = 0; i + 1 < shape.size(); ++i) n *= shape[i];
    return n;
  }

  std::vector<int> shape_;
  Mat value_;
  Mat grad_;
};

// ============================================================================
// Softmax
// ============================================================================

// Numerically stable softmax of one row: subtracts the max before
// exponentiation. temperature scales the logits as z / temperature.
Vec softmax_row(const Vec& logits, double temperature = 1.0);

// Row-wise (last-axis) softmax of a logits matrix.
Mat softmax_rows(const Mat& logits, double temperature = 1.0);

// Last-axis softmax over an arbitrary-rank tensor.
Tensor softmax(const Tensor& logits, double temperature = 1.0);

// log(softmax(z)) computed in log space.
Vec log_softmax_row(const Vec& logits, double temperature = 1.0);
Mat log_softmax_rows(const Mat& logits, double temperature = 1.0);

}  // namespace speclab::num
