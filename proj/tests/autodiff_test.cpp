// Copyright 2026 The rrmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "rrmoe/autodiff.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "rrmoe/errors.hpp"
#include "test_util.hpp"

namespace rrmoe {
namespace {

using testing::gradient_error;
using testing::random_matrix;
using testing::random_param;

// Weighted sum so every output entry carries a distinct gradient.
ad::Var reduce(ad::Tape&, ad::Var x, std::uint64_t seed = 99) {
  Rng rng(seed);
  return ad::dot_const(x, random_matrix(x.rows(), x.cols(), rng));
}

TEST(Autodiff, MatmulFamilyGradients) {
  Rng rng(1);
  Parameter a = random_param("a", 3, 4, rng), b = random_param("b", 4, 5, rng);
  Parameter c = random_param("c", 5, 4, rng), r = random_param("r", 1, 5, rng);
  EXPECT_LT(gradient_error([&](ad::Tape& t) { return reduce(t, ad::matmul(t.param(a), t.param(b))); },
                           {&a, &b}), 1e-7);
  EXPECT_LT(gradient_error([&](ad::Tape& t) { return reduce(t, ad::matmul_nt(t.param(a), t.param(c))); },
                           {&a, &c}), 1e-7);
  EXPECT_LT(gradient_error([&](ad::Tape& t) {
              return reduce(t, ad::add_row(ad::matmul(t.param(a), t.param(b)), t.param(r)));
            }, {&a, &b, &r}), 1e-7);
  EXPECT_LT(gradient_error([&](ad::Tape& t) { return reduce(t, ad::transpose(t.param(a))); }, {&a}), 1e-7);
}

TEST(Autodiff, ElementwiseGradients) {
  Rng rng(2);
  Parameter a = random_param("a", 3, 4, rng), b = random_param("b", 3, 4, rng);
  Parameter w = random_param("w", 3, 1, rng);
  for (auto f : {+[](ad::Var x, ad::Var y) { return ad::add(x, y); },
                 +[](ad::Var x, ad::Var y) { return ad::sub(x, y); },
                 +[](ad::Var x, ad::Var y) { return ad::hadamard(x, y); }}) {
    EXPECT_LT(gradient_error([&](ad::Tape& t) { return reduce(t, f(t.param(a), t.param(b))); }, {&a, &b}), 1e-7);
  }
  EXPECT_LT(gradient_error([&](ad::Tape& t) { return reduce(t, ad::gelu(t.param(a))); }, {&a}), 1e-7);
  EXPECT_LT(gradient_error([&](ad::Tape& t) { return reduce(t, ad::softplus(t.param(a))); }, {&a}), 1e-7);
  EXPECT_LT(gradient_error([&](ad::Tape& t) { return reduce(t, ad::scale(t.param(a), -2.5)); }, {&a}), 1e-7);
  EXPECT_LT(gradient_error([&](ad::Tape& t) { return reduce(t, ad::mul_col(t.param(a), t.param(w))); },
                           {&a, &w}), 1e-7);
}

TEST(Autodiff, SoftmaxAndNormGradients) {
  Rng rng(3);
  Parameter a = random_param("a", 4, 4, rng);
  Parameter g = random_param("g", 1, 4, rng), b = random_param("b", 1, 4, rng);
  EXPECT_LT(gradient_error([&](ad::Tape& t) { return reduce(t, ad::softmax_rows(t.param(a))); }, {&a}), 1e-6);
  EXPECT_LT(gradient_error([&](ad::Tape& t) { return reduce(t, ad::softmax_rows(t.param(a), true)); }, {&a}),
            1e-6);
  const std::vector<std::vector<int>> sel{{0, 2}, {1}, {3, 0, 1}, {2}};
  EXPECT_LT(gradient_error([&](ad::Tape& t) { return reduce(t, ad::sparse_softmax_rows(t.param(a), sel)); },
                           {&a}), 1e-6);
  EXPECT_LT(gradient_error([&](ad::Tape& t) {
              return reduce(t, ad::layer_norm(t.param(a), t.param(g), t.param(b)));
            }, {&a, &g, &b}), 1e-6);
  const std::vector<int> targets{1, 0, 3, 2};
  EXPECT_LT(gradient_error([&](ad::Tape& t) { return ad::cross_entropy(t.param(a), targets, 0); }, {&a}),
            1e-6);
}

TEST(Autodiff, StructuralGradients) {
  Rng rng(4);
  Parameter a = random_param("a", 4, 3, rng), b = random_param("b", 2, 3, rng);
  const std::vector<int> rows{3, 1, 1, 0};
  EXPECT_LT(gradient_error([&](ad::Tape& t) { return reduce(t, ad::gather_rows(t.param(a), rows)); }, {&a}),
            1e-7);
  EXPECT_LT(gradient_error([&](ad::Tape& t) {
              return reduce(t, ad::scatter_rows(t.param(b), std::vector<int>{3, 0}, 5));
            }, {&b}), 1e-7);
  EXPECT_LT(gradient_error([&](ad::Tape& t) {
              const ad::Var parts[] = {t.param(a), t.param(b)};
              return reduce(t, ad::concat_rows(parts));
            }, {&a, &b}), 1e-7);
  EXPECT_LT(gradient_error([&](ad::Tape& t) {
              const ad::Var parts[] = {t.param(a), ad::gather_rows(t.param(b), std::vector<int>{0, 1, 0, 1})};
              return reduce(t, ad::concat_cols(parts));
            }, {&a, &b}), 1e-7);
  EXPECT_LT(gradient_error([&](ad::Tape& t) { return reduce(t, ad::slice_rows(t.param(a), 1, 2)); }, {&a}),
            1e-7);
  EXPECT_LT(gradient_error([&](ad::Tape& t) { return reduce(t, ad::slice_cols(t.param(a), 1, 2)); }, {&a}),
            1e-7);
  EXPECT_LT(gradient_error([&](ad::Tape& t) { return reduce(t, ad::mean_rows(t.param(a))); }, {&a}), 1e-7);
  EXPECT_LT(gradient_error([&](ad::Tape& t) { return ad::sum_all(t.param(a)); }, {&a}), 1e-7);
}

TEST(Autodiff, SoftmaxRowsSumToOneProperty) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    ad::Tape t(false);
    const Matrix x = random_matrix(rng.uniform_int(1, 6), rng.uniform_int(1, 6), rng, 10.0);
    const Matrix s = ad::softmax_rows(t.constant(x)).value();
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      EXPECT_NEAR(s.row(i).sum(), 1.0, 1e-12);
      EXPECT_GE(s.row(i).minCoeff(), 0.0);
    }
  }
}

TEST(Autodiff, CausalSoftmaxMasksFuture) {
  Rng rng(6);
  ad::Tape t(false);
  const Matrix s = ad::softmax_rows(t.constant(random_matrix(4, 4, rng)), true).value();
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j) EXPECT_EQ(s(i, j), 0.0);
}

TEST(Autodiff, SparseSoftmaxZeroOutsideSelection) {
  ad::Tape t(false);
  Matrix x(1, 4);
  x << 1.0, 2.0, 3.0, 4.0;
  const Matrix s = ad::sparse_softmax_rows(t.constant(x), {{3, 1}}).value();
  EXPECT_EQ(s(0, 0), 0.0);
  EXPECT_EQ(s(0, 2), 0.0);
  EXPECT_NEAR(s(0, 3), std::exp(4.0) / (std::exp(4.0) + std::exp(2.0)), 1e-15);
}

TEST(Autodiff, CrossEntropyIgnoresPadding) {
  Rng rng(7);
  ad::Tape t(false);
  const Matrix logits = random_matrix(3, 5, rng);
  const double with_pad = ad::cross_entropy(t.constant(logits), std::vector<int>{2, 0, 4}, 0).scalar();
  const Matrix two = logits({0, 2}, Eigen::all);
  const double without = ad::cross_entropy(t.constant(two), std::vector<int>{2, 4}, 0).scalar();
  EXPECT_NEAR(with_pad, without, 1e-14);
}

TEST(Autodiff, ParameterGradientsAccumulateAcrossUses) {
  Parameter p{"p", Matrix::Constant(1, 1, 3.0), {}};
  p.zero_grad();
  ad::Tape t;
  ad::Var x = t.param(p);
  t.backward(ad::hadamard(x, x));
  EXPECT_DOUBLE_EQ(p.grad(0, 0), 6.0);
}

TEST(Autodiff, ShapeMismatchThrows) {
  ad::Tape t;
  EXPECT_THROW(ad::matmul(t.constant(Matrix::Zero(2, 3)), t.constant(Matrix::Zero(2, 3))), ShapeError);
  EXPECT_THROW(t.backward(t.variable(Matrix::Zero(2, 2))), ShapeError);
}

}  // namespace
}  // namespace rrmoe
