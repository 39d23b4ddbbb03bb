// Copyright 2026 The rrmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Attention building blocks and the token-condensation layer: one learnable
// query token cross-attends over a set of embeddings, followed by a residual
// feed-forward block.

#include <functional>
#include <string>
#include <vector>

#include "rrmoe/autodiff.hpp"
#include "rrmoe/rng.hpp"

namespace rrmoe::condense {

using ParamVisitor = std::function<void(const Parameter&)>;
using MutableParamVisitor = std::function<void(Parameter&)>;

/// Weight matrix with entries uniform in +-1/sqrt(rows) (fan-in init).
Parameter fan_in_param(std::string name, int rows, int cols, Rng& rng);
Parameter constant_param(std::string name, int rows, int cols, double value);

struct LayerNormParams {
  Parameter gamma;
  Parameter beta;

  static LayerNormParams make(const std::string& prefix, int dim);
  ad::Var apply(ad::Tape& tape, ad::Var x) const;
  void visit(const MutableParamVisitor& f);
};

/// Multi-head attention projections: y = x W + b for q, k, v and output.
struct AttentionParams {
  int heads = 1;
  Parameter wq, bq, wk, bk, wv, bv, wo, bo;

  int dim() const { return static_cast<int>(wq.value.rows()); }
  static AttentionParams make(const std::string& prefix, int dim, int heads, Rng& rng);
  /// Identity projections, zero biases.
  static AttentionParams identity(const std::string& prefix, int dim, int heads);
  void visit(const MutableParamVisitor& f);
};

/// Pre-normalized two-layer feed-forward block: W2 gelu(W1 LN(x) + b1) + b2.
/// The residual add is left to the caller.
struct FeedForward {
  LayerNormParams norm;
  Parameter w1, b1, w2, b2;

  static FeedForward make(const std::string& prefix, int dim, int hidden, Rng& rng);
  ad::Var apply(ad::Tape& tape, ad::Var x) const;
  void visit(const MutableParamVisitor& f);
};

/// Per-head softmax weights of the last attention call (rows = queries).
struct AttentionTrace {
  std::vector<Matrix> head_weights;

  /// Mean over heads of the weights of query row `q`.
  RowVector mean_weights(int q = 0) const;
};

/// Scaled dot-product multi-head attention (scale 1/sqrt(dim/heads)).
/// With `causal`, query i only sees keys 0..i.
ad::Var attend(ad::Tape& tape, ad::Var query, ad::Var keys, ad::Var values,
               const AttentionParams& params, bool causal = false,
               AttentionTrace* trace = nullptr);

/// Plain-matrix cross attention. Throws ShapeError on dimension mismatch or
/// an empty key set.
Matrix cross_attend(const Matrix& query, const Matrix& keys, const Matrix& values,
                    const AttentionParams& params, AttentionTrace* trace = nullptr);

struct TCLayer {
  Parameter token;  // 1 x d learnable query
  AttentionParams attention;
  FeedForward ffn;

  int dim() const { return static_cast<int>(token.value.cols()); }
  static TCLayer make(const std::string& prefix, int dim, int heads, int ffn_hidden, Rng& rng);
  void visit(const MutableParamVisitor& f);
};

struct CondenseOutput {
  ad::Var z;  // 1 x d
  ad::Var h;  // attention output before the feed-forward block
  AttentionTrace trace;
};

/// z = FFN(h) + h with h = CrossAttn(token, X, X).
CondenseOutput condense(ad::Tape& tape, const TCLayer& layer, ad::Var embeddings);
RowVector condense(const TCLayer& layer, const Matrix& embeddings,
                   AttentionTrace* trace = nullptr);

}  // namespace rrmoe::condense
