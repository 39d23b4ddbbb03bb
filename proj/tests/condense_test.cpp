// Copyright 2026 The rrmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "rrmoe/condense.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rrmoe/errors.hpp"
#include "test_util.hpp"

namespace rrmoe::condense {
namespace {

using testing::random_matrix;

RowVector linear_row(const RowVector& x, const Parameter& w, const Parameter& b) {
  RowVector y(w.value.cols());
  for (Eigen::Index j = 0; j < y.size(); ++j) {
    double s = b.value(0, j);
    for (Eigen::Index a = 0; a < x.size(); ++a) s += x(a) * w.value(a, j);
    y(j) = s;
  }
  return y;
}

RowVector norm_row(const RowVector& x, const LayerNormParams& ln) {
  const double mu = x.sum() / x.size();
  double var = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) var += (x(i) - mu) * (x(i) - mu);
  var /= x.size();
  RowVector y(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    y(i) = (x(i) - mu) / std::sqrt(var + 1e-5) * ln.gamma.value(0, i) + ln.beta.value(0, i);
  }
  return y;
}

// Single-query multi-head attention pooling followed by the residual
// feed-forward block, written out entry by entry.
RowVector oracle_condense(const TCLayer& l, const Matrix& e) {
  const AttentionParams& p = l.attention;
  const int d = p.dim(), dh = d / p.heads;
  const RowVector q = linear_row(l.token.value.row(0), p.wq, p.bq);
  std::vector<RowVector> k, v;
  for (Eigen::Index i = 0; i < e.rows(); ++i) {
    k.push_back(linear_row(e.row(i), p.wk, p.bk));
    v.push_back(linear_row(e.row(i), p.wv, p.bv));
  }
  RowVector o = RowVector::Zero(d);
  for (int h = 0; h < p.heads; ++h) {
    std::vector<double> s(e.rows());
    for (std::size_t i = 0; i < s.size(); ++i) {
      s[i] = 0;
      for (int a = h * dh; a < (h + 1) * dh; ++a) s[i] += q(a) * k[i](a);
      s[i] /= std::sqrt(static_cast<double>(dh));
    }
    const double mx = *std::max_element(s.begin(), s.end());
    double z = 0;
    for (double& x : s) z += (x = std::exp(x - mx));
    for (std::size_t i = 0; i < s.size(); ++i)
      for (int a = h * dh; a < (h + 1) * dh; ++a) o(a) += s[i] / z * v[i](a);
  }
  const RowVector hvec = linear_row(o, p.wo, p.bo);
  RowVector f = linear_row(norm_row(hvec, l.ffn.norm), l.ffn.w1, l.ffn.b1);
  for (Eigen::Index i = 0; i < f.size(); ++i) f(i) = 0.5 * f(i) * (1 + std::erf(f(i) / std::sqrt(2.0)));
  return linear_row(f, l.ffn.w2, l.ffn.b2) + hvec;
}

TEST(Condense, MatchesReferencePooling) {
  Rng rng(1);
  const TCLayer l = TCLayer::make("tc", 8, 2, 16, rng);
  for (int n : {1, 3, 17}) {
    const Matrix e = random_matrix(n, 8, rng);
    const RowVector z = condense(l, e);
    EXPECT_EQ(z.size(), 8);
    EXPECT_LT((z - oracle_condense(l, e)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Condense, PermutationInvarianceProperty) {
  Rng rng(2);
  const TCLayer l = TCLayer::make("tc", 8, 4, 16, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = rng.uniform_int(2, 12);
    const Matrix e = random_matrix(n, 8, rng);
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    const Matrix shuffled = e(perm, Eigen::all);
    EXPECT_LT((condense(l, e) - condense(l, shuffled)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Condense, AttentionTraceIsADistributionPerHead) {
  Rng rng(3);
  const TCLayer l = TCLayer::make("tc", 8, 2, 16, rng);
  AttentionTrace trace;
  condense(l, random_matrix(6, 8, rng), &trace);
  ASSERT_EQ(trace.head_weights.size(), 2u);
  for (const Matrix& w : trace.head_weights) {
    EXPECT_EQ(w.rows(), 1);
    EXPECT_EQ(w.cols(), 6);
    EXPECT_NEAR(w.sum(), 1.0, 1e-12);
  }
  const RowVector mean = trace.mean_weights();
  EXPECT_NEAR(mean.sum(), 1.0, 1e-12);
  EXPECT_LT((mean - 0.5 * (trace.head_weights[0].row(0) + trace.head_weights[1].row(0))).cwiseAbs().maxCoeff(),
            1e-15);
}

TEST(Condense, IdentityAttentionPassesValuesThrough) {
  const AttentionParams p = AttentionParams::identity("id", 4, 1);
  Matrix kv(1, 4);
  kv << 1, -2, 3, 0.5;
  const Matrix out = cross_attend(Matrix::Zero(1, 4), kv, kv, p);
  EXPECT_LT((out - kv).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Condense, GradientsMatchFiniteDifferences) {
  Rng rng(4);
  TCLayer l = TCLayer::make("tc", 8, 2, 16, rng);
  const Matrix e = random_matrix(5, 8, rng);
  const Matrix c = random_matrix(1, 8, rng);
  std::vector<Parameter*> params;
  l.visit([&](Parameter& p) { params.push_back(&p); });
  const double err = testing::gradient_error(
      [&](ad::Tape& t) { return ad::dot_const(condense(t, l, t.constant(e)).z, c); }, params);
  EXPECT_LT(err, 1e-6);
}

TEST(Condense, RejectsEmptySetsAndBadShapes) {
  Rng rng(5);
  const TCLayer l = TCLayer::make("tc", 8, 2, 16, rng);
  EXPECT_THROW(condense(l, Matrix::Zero(0, 8)), ShapeError);
  EXPECT_THROW(condense(l, Matrix::Zero(3, 7)), ShapeError);
}

}  // namespace
}  // namespace rrmoe::condense
