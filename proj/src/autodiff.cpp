// Copyright 2026 The rrmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "rrmoe/autodiff.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "rrmoe/errors.hpp"

namespace rrmoe::ad {

namespace {

void require_same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) throw std::logic_error("vars from different tapes");
}

void require_shape(bool ok, const char* op, Var a, Var b) {
  if (!ok) {
    throw ShapeError(std::string(op) + ": shape mismatch (" +
                     std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
  }
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

double stable_softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---------------------------------------------------------------------------
// Tape

Var Tape::constant(Matrix value) {
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::param(const Parameter& p) {
  Node& n = nodes_.emplace_back();
  n.external = &p.value;
  n.param = &p;
  n.requires_grad = record_;
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::variable(Matrix value) {
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  n.requires_grad = record_;
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs,
                 Backward backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Tape::record(Matrix value, std::span<const Var> inputs, Backward backward) {
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  if (record_) {
    for (const Var& v : inputs) {
      if (v.requires_grad()) {
        n.requires_grad = true;
        break;
      }
    }
    if (n.requires_grad) n.backward = std::move(backward);
  }
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

const Matrix& Tape::value(int id) const {
  const Node& n = nodes_[id];
  return n.external ? *n.external : n.value;
}

void Tape::backward(Var root) {
  if (!record_) throw std::logic_error("backward() on a non-recording tape");
  if (root.tape() != this) throw std::logic_error("root from another tape");
  const Matrix& rv = root.value();
  if (rv.rows() != 1 || rv.cols() != 1) {
    throw ShapeError("backward() root must be a 1x1 scalar");
  }
  Node& r = nodes_[root.id()];
  if (!r.requires_grad) return;
  r.grad = Matrix::Ones(1, 1);
  for (int id = root.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) continue;
    if (n.backward) {
      n.backward(*this, n.grad);
    } else if (n.param != nullptr) {
      const Parameter& p = *n.param;
      if (p.grad.size() == 0) p.grad.setZero(p.value.rows(), p.value.cols());
      p.grad += n.grad;
    }
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(a.cols() == b.rows(), "matmul", a, b);
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  return t.record(a.value() * b.value(), {a, b},
                  [ia, ib](Tape& t, const Matrix& g) {
                    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
                    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
                  });
}

Var matmul_nt(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(a.cols() == b.cols(), "matmul_nt", a, b);
  Tape& t = *a.tape();
  const int ia = a.id(), ib = b.id();
  return t.record(a.value() * b.value().transpose(), {a, b},
                  [ia, ib](Tape& t, const Matrix& g) {
                    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib));
                    if (t.requires_grad(ib)) t.accumulate(ib, g.transpose() * t.value(ia));
                  });
}

Var transpose(Var a) {
  const int ia = a.id();
  return a.tape()->record(a.value().transpose(), {a},
                          [ia](Tape& t, const Matrix& g) { t.accumulate(ia, g.transpose()); });
}

// ---------------------------------------------------------------------------
// Elementwise

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add", a, b);
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value() + b.value(), {a, b},
                          [ia, ib](Tape& t, const Matrix& g) {
                            t.accumulate(ia, g);
                            t.accumulate(ib, g);
                          });
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "sub", a, b);
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value() - b.value(), {a, b},
                          [ia, ib](Tape& t, const Matrix& g) {
                            t.accumulate(ia, g);
                            t.accumulate(ib, -g);
                          });
}

Var hadamard(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "hadamard", a, b);
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value().cwiseProduct(b.value()), {a, b},
                          [ia, ib](Tape& t, const Matrix& g) {
                            if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                            if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                          });
}

Var scale(Var a, double s) {
  const int ia = a.id();
  return a.tape()->record(a.value() * s, {a},
                          [ia, s](Tape& t, const Matrix& g) { t.accumulate(ia, g * s); });
}

Var add_row(Var a, Var row) {
  require_same_tape(a, row);
  require_shape(row.rows() == 1 && row.cols() == a.cols(), "add_row", a, row);
  const int ia = a.id(), ir = row.id();
  Matrix v = a.value();
  v.rowwise() += row.value().row(0);
  return a.tape()->record(std::move(v), {a, row},
                          [ia, ir](Tape& t, const Matrix& g) {
                            t.accumulate(ia, g);
                            if (t.requires_grad(ir)) t.accumulate(ir, g.colwise().sum());
                          });
}

Var mul_col(Var a, Var w) {
  require_same_tape(a, w);
  require_shape(w.cols() == 1 && w.rows() == a.rows(), "mul_col", a, w);
  const int ia = a.id(), iw = w.id();
  Matrix v = a.value();
  for (Eigen::Index i = 0; i < v.rows(); ++i) v.row(i) *= w.value()(i, 0);
  return a.tape()->record(std::move(v), {a, w},
                          [ia, iw](Tape& t, const Matrix& g) {
                            const Matrix& wv = t.value(iw);
                            if (t.requires_grad(ia)) {
                              Matrix ga = g;
                              for (Eigen::Index i = 0; i < ga.rows(); ++i) ga.row(i) *= wv(i, 0);
                              t.accumulate(ia, ga);
                            }
                            if (t.requires_grad(iw)) {
                              t.accumulate(iw, g.cwiseProduct(t.value(ia)).rowwise().sum());
                            }
                          });
}

Var gelu(Var a) {
  const int ia = a.id();
  Matrix v = a.value().unaryExpr([](double x) { return x * normal_cdf(x); });
  return a.tape()->record(std::move(v), {a}, [ia](Tape& t, const Matrix& g) {
    const Matrix d = t.value(ia).unaryExpr(
        [](double x) { return normal_cdf(x) + x * normal_pdf(x); });
    t.accumulate(ia, g.cwiseProduct(d));
  });
}

Var softplus(Var a) {
  const int ia = a.id();
  Matrix v = a.value().unaryExpr([](double x) { return stable_softplus(x); });
  return a.tape()->record(std::move(v), {a}, [ia](Tape& t, const Matrix& g) {
    t.accumulate(ia, g.cwiseProduct(t.value(ia).unaryExpr([](double x) { return sigmoid(x); })));
  });
}

// ---------------------------------------------------------------------------
// Normalization / probabilities

Var softmax_rows(Var a, bool causal) {
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Eigen::Index n = causal ? std::min<Eigen::Index>(i + 1, x.cols()) : x.cols();
    const double mx = x.row(i).head(n).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      y(i, j) = std::exp(x(i, j) - mx);
      sum += y(i, j);
    }
    for (Eigen::Index j = 0; j < n; ++j) y(i, j) /= sum;
    for (Eigen::Index j = n; j < x.cols(); ++j) y(i, j) = 0.0;
  }
  const int ia = a.id();
  Tape& t = *a.tape();
  const int io = static_cast<int>(t.size());  // id of the node recorded below
  return t.record(std::move(y), {a}, [ia, io](Tape& t, const Matrix& g) {
    const Matrix& yv = t.value(io);
    Matrix gy = g.cwiseProduct(yv);
    for (Eigen::Index i = 0; i < gy.rows(); ++i) gy.row(i) -= yv.row(i) * gy.row(i).sum();
    t.accumulate(ia, gy);
  });
}

Var sparse_softmax_rows(Var a, const std::vector<std::vector<int>>& selected) {
  const Matrix& x = a.value();
  if (static_cast<Eigen::Index>(selected.size()) != x.rows()) {
    throw ShapeError("sparse_softmax_rows: selection count != rows");
  }
  Matrix y = Matrix::Zero(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto& sel = selected[i];
    if (sel.empty()) throw ShapeError("sparse_softmax_rows: empty selection");
    double mx = -std::numeric_limits<double>::infinity();
    for (int j : sel) mx = std::max(mx, x(i, j));
    double sum = 0.0;
    for (int j : sel) {
      y(i, j) = std::exp(x(i, j) - mx);
      sum += y(i, j);
    }
    for (int j : sel) y(i, j) /= sum;
  }
  const int ia = a.id();
  Tape& t = *a.tape();
  const int io = static_cast<int>(t.size());
  return t.record(std::move(y), {a}, [ia, io](Tape& t, const Matrix& g) {
    // Off-support entries of y are zero, so the dense softmax jacobian
    // restricted to the support is exact.
    const Matrix& yv = t.value(io);
    Matrix gy = g.cwiseProduct(yv);
    for (Eigen::Index i = 0; i < gy.rows(); ++i) gy.row(i) -= yv.row(i) * gy.row(i).sum();
    t.accumulate(ia, gy);
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Matrix& xv = x.value();
  const Eigen::Index n = xv.cols();
  if (gamma.cols() != n || beta.cols() != n || gamma.rows() != 1 || beta.rows() != 1) {
    throw ShapeError("layer_norm: gamma/beta must be 1x" + std::to_string(n));
  }
  Matrix xhat(xv.rows(), n);
  Eigen::VectorXd rstd(xv.rows());
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    const double mu = xv.row(i).mean();
    const double var = (xv.row(i).array() - mu).square().mean();
    rstd(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (xv.row(i).array() - mu) * rstd(i);
  }
  Matrix y = xhat;
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    y.row(i) = y.row(i).cwiseProduct(gamma.value().row(0)) + beta.value().row(0);
  }
  const int ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape()->record(
      std::move(y), {x, gamma, beta},
      [ix, ig, ib, xhat = std::move(xhat), rstd = std::move(rstd)](Tape& t, const Matrix& g) {
        const Matrix& gm = t.value(ig);
        if (t.requires_grad(ig)) t.accumulate(ig, g.cwiseProduct(xhat).colwise().sum());
        if (t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum());
        if (t.requires_grad(ix)) {
          Matrix gx(g.rows(), g.cols());
          for (Eigen::Index i = 0; i < g.rows(); ++i) {
            const RowVector dxhat = g.row(i).cwiseProduct(gm.row(0));
            const double m1 = dxhat.mean();
            const double m2 = dxhat.cwiseProduct(xhat.row(i)).mean();
            gx.row(i) = rstd(i) * (dxhat.array() - m1 - xhat.row(i).array() * m2).matrix();
          }
          t.accumulate(ix, gx);
        }
      });
}

Var cross_entropy(Var logits, std::span<const int> targets, int ignore_index) {
  const Matrix& x = logits.value();
  if (static_cast<Eigen::Index>(targets.size()) != x.rows()) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(x.rows()) + " rows");
  }
  Matrix probs(x.rows(), x.cols());
  double total = 0.0;
  int count = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mx = x.row(i).maxCoeff();
    const double lse = mx + std::log((x.row(i).array() - mx).exp().sum());
    probs.row(i) = (x.row(i).array() - lse).exp();
    const int target = targets[i];
    if (target == ignore_index) continue;
    if (target < 0 || target >= x.cols()) {
      throw ShapeError("cross_entropy: target id " + std::to_string(target) + " out of range");
    }
    total += lse - x(i, target);
    ++count;
  }
  if (count == 0) throw Error("cross_entropy: every position is padding");
  Matrix out(1, 1);
  out(0, 0) = total / count;
  const int il = logits.id();
  std::vector<int> tg(targets.begin(), targets.end());
  return logits.tape()->record(
      std::move(out), {logits},
      [il, tg = std::move(tg), probs = std::move(probs), count, ignore_index](Tape& t,
                                                                            const Matrix& g) {
        Matrix gx = probs;
        for (Eigen::Index i = 0; i < gx.rows(); ++i) {
          if (tg[i] == ignore_index) {
            gx.row(i).setZero();
          } else {
            gx(i, tg[i]) -= 1.0;
          }
        }
        t.accumulate(il, gx * (g(0, 0) / count));
      });
}

// ---------------------------------------------------------------------------
// Structure

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix v(rows, cols);
  std::vector<int> ids;
  std::vector<Eigen::Index> offsets;
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    v.middleRows(r, p.rows()) = p.value();
    ids.push_back(p.id());
    offsets.push_back(r);
    r += p.rows();
  }
  return parts[0].tape()->record(std::move(v), parts,
                                 [ids = std::move(ids), offsets = std::move(offsets)](
                                     Tape& t, const Matrix& g) {
                                   for (std::size_t k = 0; k < ids.size(); ++k) {
                                     if (!t.requires_grad(ids[k])) continue;
                                     t.accumulate(ids[k], g.middleRows(offsets[k],
                                                                       t.value(ids[k]).rows()));
                                   }
                                 });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix v(rows, cols);
  std::vector<int> ids;
  std::vector<Eigen::Index> offsets;
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    v.middleCols(c, p.cols()) = p.value();
    ids.push_back(p.id());
    offsets.push_back(c);
    c += p.cols();
  }
  return parts[0].tape()->record(std::move(v), parts,
                                 [ids = std::move(ids), offsets = std::move(offsets)](
                                     Tape& t, const Matrix& g) {
                                   for (std::size_t k = 0; k < ids.size(); ++k) {
                                     if (!t.requires_grad(ids[k])) continue;
                                     t.accumulate(ids[k], g.middleCols(offsets[k],
                                                                       t.value(ids[k]).cols()));
                                   }
                                 });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw ShapeError("slice_rows: range out of bounds");
  }
  const int ia = a.id();
  const Eigen::Index total = a.rows(), cols = a.cols();
  return a.tape()->record(a.value().middleRows(start, count), {a},
                          [ia, start, count, total, cols](Tape& t, const Matrix& g) {
                            Matrix ga = Matrix::Zero(total, cols);
                            ga.middleRows(start, count) = g;
                            t.accumulate(ia, ga);
                          });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw ShapeError("slice_cols: range out of bounds");
  }
  const int ia = a.id();
  const Eigen::Index rows = a.rows(), total = a.cols();
  return a.tape()->record(a.value().middleCols(start, count), {a},
                          [ia, start, count, rows, total](Tape& t, const Matrix& g) {
                            Matrix ga = Matrix::Zero(rows, total);
                            ga.middleCols(start, count) = g;
                            t.accumulate(ia, ga);
                          });
}

Var gather_rows(Var a, std::span<const int> rows) {
  const Matrix& x = a.value();
  Matrix v(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= x.rows()) throw ShapeError("gather_rows: index out of range");
    v.row(static_cast<Eigen::Index>(i)) = x.row(rows[i]);
  }
  const int ia = a.id();
  const Eigen::Index total = x.rows();
  std::vector<int> idx(rows.begin(), rows.end());
  return a.tape()->record(std::move(v), {a},
                          [ia, total, idx = std::move(idx)](Tape& t, const Matrix& g) {
                            Matrix ga = Matrix::Zero(total, g.cols());
                            for (std::size_t i = 0; i < idx.size(); ++i) {
                              ga.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
                            }
                            t.accumulate(ia, ga);
                          });
}

Var scatter_rows(Var a, std::span<const int> rows, Eigen::Index out_rows) {
  const Matrix& x = a.value();
  if (static_cast<Eigen::Index>(rows.size()) != x.rows()) {
    throw ShapeError("scatter_rows: index count != rows");
  }
  Matrix v = Matrix::Zero(out_rows, x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= out_rows) throw ShapeError("scatter_rows: index out of range");
    v.row(rows[i]) += x.row(static_cast<Eigen::Index>(i));
  }
  const int ia = a.id();
  std::vector<int> idx(rows.begin(), rows.end());
  return a.tape()->record(std::move(v), {a}, [ia, idx = std::move(idx)](Tape& t, const Matrix& g) {
    Matrix ga(static_cast<Eigen::Index>(idx.size()), g.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) ga.row(static_cast<Eigen::Index>(i)) = g.row(idx[i]);
    t.accumulate(ia, ga);
  });
}

Var mean_rows(Var a) {
  const int ia = a.id();
  const Eigen::Index n = a.rows();
  if (n == 0) throw ShapeError("mean_rows: no rows");
  return a.tape()->record(a.value().colwise().mean(), {a}, [ia, n](Tape& t, const Matrix& g) {
    Matrix ga(n, g.cols());
    ga.rowwise() = g.row(0) / static_cast<double>(n);
    t.accumulate(ia, ga);
  });
}

Var sum_all(Var a) {
  const int ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  Matrix v(1, 1);
  v(0, 0) = a.value().sum();
  return a.tape()->record(std::move(v), {a}, [ia, r, c](Tape& t, const Matrix& g) {
    t.accumulate(ia, Matrix::Constant(r, c, g(0, 0)));
  });
}

Var dot_const(Var a, const Matrix& c) {
  if (a.rows() != c.rows() || a.cols() != c.cols()) throw ShapeError("dot_const: shape mismatch");
  const int ia = a.id();
  Matrix v(1, 1);
  v(0, 0) = a.value().cwiseProduct(c).sum();
  return a.tape()->record(std::move(v), {a},
                          [ia, c](Tape& t, const Matrix& g) { t.accumulate(ia, c * g(0, 0)); });
}

}  // namespace rrmoe::ad
