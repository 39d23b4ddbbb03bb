// Copyright 2026 The rrmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "rrmoe/condense.hpp"

#include <cmath>

#include "rrmoe/errors.hpp"

namespace rrmoe::condense {

using ad::Var;

Parameter fan_in_param(std::string name, int rows, int cols, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(-bound, bound);
  return Parameter{std::move(name), std::move(m), Matrix()};
}

Parameter constant_param(std::string name, int rows, int cols, double value) {
  return Parameter{std::move(name), Matrix::Constant(rows, cols, value), Matrix()};
}

// ---------------------------------------------------------------------------

LayerNormParams LayerNormParams::make(const std::string& prefix, int dim) {
  return {constant_param(prefix + ".gamma", 1, dim, 1.0),
          constant_param(prefix + ".beta", 1, dim, 0.0)};
}

Var LayerNormParams::apply(ad::Tape& tape, Var x) const {
  return ad::layer_norm(x, tape.param(gamma), tape.param(beta));
}

void LayerNormParams::visit(const MutableParamVisitor& f) {
  f(gamma);
  f(beta);
}

AttentionParams AttentionParams::make(const std::string& prefix, int dim, int heads, Rng& rng) {
  if (heads < 1 || dim % heads != 0) {
    throw ShapeError("attention: dim " + std::to_string(dim) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  AttentionParams p;
  p.heads = heads;
  p.wq = fan_in_param(prefix + ".wq", dim, dim, rng);
  p.bq = constant_param(prefix + ".bq", 1, dim, 0.0);
  p.wk = fan_in_param(prefix + ".wk", dim, dim, rng);
  p.bk = constant_param(prefix + ".bk", 1, dim, 0.0);
  p.wv = fan_in_param(prefix + ".wv", dim, dim, rng);
  p.bv = constant_param(prefix + ".bv", 1, dim, 0.0);
  p.wo = fan_in_param(prefix + ".wo", dim, dim, rng);
  p.bo = constant_param(prefix + ".bo", 1, dim, 0.0);
  return p;
}

AttentionParams AttentionParams::identity(const std::string& prefix, int dim, int heads) {
  if (heads < 1 || dim % heads != 0) throw ShapeError("attention: dim not divisible by heads");
  AttentionParams p;
  p.heads = heads;
  const Matrix eye = Matrix::Identity(dim, dim);
  p.wq = {prefix + ".wq", eye, {}};
  p.bq = constant_param(prefix + ".bq", 1, dim, 0.0);
  p.wk = {prefix + ".wk", eye, {}};
  p.bk = constant_param(prefix + ".bk", 1, dim, 0.0);
  p.wv = {prefix + ".wv", eye, {}};
  p.bv = constant_param(prefix + ".bv", 1, dim, 0.0);
  p.wo = {prefix + ".wo", eye, {}};
  p.bo = constant_param(prefix + ".bo", 1, dim, 0.0);
  return p;
}

void AttentionParams::visit(const MutableParamVisitor& f) {
  for (Parameter* p : {&wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo}) f(*p);
}

FeedForward FeedForward::make(const std::string& prefix, int dim, int hidden, Rng& rng) {
  FeedForward f;
  f.norm = LayerNormParams::make(prefix + ".ln", dim);
  f.w1 = fan_in_param(prefix + ".w1", dim, hidden, rng);
  f.b1 = constant_param(prefix + ".b1", 1, hidden, 0.0);
  f.w2 = fan_in_param(prefix + ".w2", hidden, dim, rng);
  f.b2 = constant_param(prefix + ".b2", 1, dim, 0.0);
  return f;
}

Var FeedForward::apply(ad::Tape& tape, Var x) const {
  Var h = ad::gelu(ad::linear(norm.apply(tape, x), tape.param(w1), tape.param(b1)));
  return ad::linear(h, tape.param(w2), tape.param(b2));
}

void FeedForward::visit(const MutableParamVisitor& f) {
  norm.visit(f);
  for (Parameter* p : {&w1, &b1, &w2, &b2}) f(*p);
}

// ---------------------------------------------------------------------------

RowVector AttentionTrace::mean_weights(int q) const {
  if (head_weights.empty()) throw std::logic_error("empty attention trace");
  RowVector m = head_weights[0].row(q);
  for (std::size_t h = 1; h < head_weights.size(); ++h) m += head_weights[h].row(q);
  return m / static_cast<double>(head_weights.size());
}

Var attend(ad::Tape& tape, Var query, Var keys, Var values, const AttentionParams& params,
           bool causal, AttentionTrace* trace) {
  const int d = params.dim();
  if (query.cols() != d || keys.cols() != d || values.cols() != d) {
    throw ShapeError("attend: inputs must have " + std::to_string(d) + " columns");
  }
  if (keys.rows() < 1) throw ShapeError("attend: empty key set");
  if (keys.rows() != values.rows()) throw ShapeError("attend: key/value count mismatch");

  Var q = ad::linear(query, tape.param(params.wq), tape.param(params.bq));
  Var k = ad::linear(keys, tape.param(params.wk), tape.param(params.bk));
  Var v = ad::linear(values, tape.param(params.wv), tape.param(params.bv));
  const int dh = d / params.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  if (trace) trace->head_weights.clear();

  std::vector<Var> heads;
  heads.reserve(params.heads);
  for (int h = 0; h < params.heads; ++h) {
    Var qh = params.heads == 1 ? q : ad::slice_cols(q, h * dh, dh);
    Var kh = params.heads == 1 ? k : ad::slice_cols(k, h * dh, dh);
    Var vh = params.heads == 1 ? v : ad::slice_cols(v, h * dh, dh);
    Var w = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt), causal);
    if (trace) trace->head_weights.push_back(w.value());
    heads.push_back(ad::matmul(w, vh));
  }
  Var o = params.heads == 1 ? heads[0] : ad::concat_cols(heads);
  return ad::linear(o, tape.param(params.wo), tape.param(params.bo));
}

Matrix cross_attend(const Matrix& query, const Matrix& keys, const Matrix& values,
                    const AttentionParams& params, AttentionTrace* trace) {
  ad::Tape tape(false);
  return attend(tape, tape.constant(query), tape.constant(keys), tape.constant(values), params,
                false, trace)
      .value();
}

// ---------------------------------------------------------------------------

TCLayer TCLayer::make(const std::string& prefix, int dim, int heads, int ffn_hidden, Rng& rng) {
  TCLayer l;
  Matrix tok(1, dim);
  for (int j = 0; j < dim; ++j) tok(0, j) = rng.normal();
  l.token = Parameter{prefix + ".token", std::move(tok), {}};
  l.attention = AttentionParams::make(prefix + ".attn", dim, heads, rng);
  l.ffn = FeedForward::make(prefix + ".ffn", dim, ffn_hidden, rng);
  return l;
}

void TCLayer::visit(const MutableParamVisitor& f) {
  f(token);
  attention.visit(f);
  ffn.visit(f);
}

CondenseOutput condense(ad::Tape& tape, const TCLayer& layer, Var embeddings) {
  if (embeddings.rows() < 1) throw ShapeError("condense: empty embedding set");
  CondenseOutput out;
  out.h = attend(tape, tape.param(layer.token), embeddings, embeddings, layer.attention, false,
                 &out.trace);
  out.z = ad::add(layer.ffn.apply(tape, out.h), out.h);
  return out;
}

RowVector condense(const TCLayer& layer, const Matrix& embeddings, AttentionTrace* trace) {
  if (embeddings.rows() < 1) throw ShapeError("condense: empty embedding set");
  ad::Tape tape(false);
  CondenseOutput out = condense(tape, layer, tape.constant(embeddings));
  if (trace) *trace = std::move(out.trace);
  return out.z.value().row(0);
}

}  // namespace rrmoe::condense
