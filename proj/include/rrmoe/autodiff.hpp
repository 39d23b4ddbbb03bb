// Copyright 2026 The rrmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Minimal tape-based reverse-mode differentiation over dense row-major
// matrices. Every value is a 2-D matrix; vectors are 1xN rows.

#include <Eigen/Dense>

#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace rrmoe {

using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

/// A named learnable tensor plus its accumulated gradient. The gradient is
/// an accumulator, so forward passes over const parameters may add to it.
struct Parameter {
  std::string name;
  Matrix value;
  mutable Matrix grad;

  void zero_grad() const { grad.setZero(value.rows(), value.cols()); }
};

namespace ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix&)>;

  /// With `record == false` no backward closures are kept (inference).
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  /// Leaf bound to a parameter. The value is referenced, not copied, and
  /// backward() adds into `p.grad`.
  Var param(const Parameter& p);
  /// Leaf that carries a gradient but is not a parameter (used by gradient
  /// checks on intermediate inputs).
  Var variable(Matrix value);

  /// Records an op node. `backward` receives the node's upstream gradient.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Matrix value, std::span<const Var> inputs, Backward backward);

  void backward(Var root);

  const Matrix& value(int id) const;
  /// Upstream gradient of a node after backward(); zero-sized if none flowed.
  const Matrix& grad(int id) const { return nodes_[id].grad; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  bool recording() const { return record_; }

  /// Adds `g` into the gradient of node `id` (no-op if it needs none).
  template <typename Expr>
  void accumulate(int id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    const Matrix* external = nullptr;
    Matrix grad;
    const Parameter* param = nullptr;
    bool requires_grad = false;
    Backward backward;
  };

  bool record_;
  std::deque<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

// Linear algebra.
Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var transpose(Var a);

// Elementwise.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double s);
/// Adds a 1xC row to every row of `a`.
Var add_row(Var a, Var row);
/// Multiplies row i of `a` by w(i, 0); `w` is Nx1.
Var mul_col(Var a, Var w);
Var gelu(Var a);
Var softplus(Var a);

// Normalization / probabilities.
/// Row-wise softmax. With `causal`, entry (i, j) is masked for j > i.
Var softmax_rows(Var a, bool causal = false);
/// Row-wise softmax restricted to `selected[i]` columns; other entries are 0.
Var sparse_softmax_rows(Var a, const std::vector<std::vector<int>>& selected);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
/// Mean negative log-likelihood of `targets` under row-wise softmax(logits).
/// Rows whose target equals `ignore_index` are skipped.
Var cross_entropy(Var logits, std::span<const int> targets, int ignore_index);

// Structure.
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var gather_rows(Var a, std::span<const int> rows);
/// Output has `out_rows` rows; row idx[i] receives a.row(i) (summed on
/// collisions).
Var scatter_rows(Var a, std::span<const int> rows, Eigen::Index out_rows);
Var mean_rows(Var a);
Var sum_all(Var a);
/// sum(a .* c) for a constant c of the same shape.
Var dot_const(Var a, const Matrix& c);

/// x W + b
inline Var linear(Var x, Var w, Var b) { return add_row(matmul(x, w), b); }

}  // namespace ad
}  // namespace rrmoe
