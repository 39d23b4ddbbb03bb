// Copyright 2026 The rrmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "rrmoe/memory.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rrmoe/binio.hpp"
#include "rrmoe/errors.hpp"
#include "test_util.hpp"

namespace rrmoe::memory {
namespace {

using testing::random_matrix;

MemoryBank random_bank(int m, int d, Rng& rng) {
  std::vector<std::string> s;
  for (int i = 0; i < m; ++i) s.push_back("s" + std::to_string(i));
  return MemoryBank(std::move(s), random_matrix(m, d, rng));
}

TEST(Memory, SalientCountIsTheCeilingOfTheRatio) {
  const std::vector<double> scores{0.1, 0.5, 0.2, 0.9, 0.3, 0.05, 0.7, 0.4, 0.6, 0.8};
  EXPECT_EQ(select_salient_patches(scores, 0.4), (std::vector<int>{3, 9, 6, 8}));
  EXPECT_EQ(select_salient_patches(scores, 0.7).size(), 7u);
  EXPECT_EQ(select_salient_patches(scores, 0.01).size(), 1u);
  EXPECT_EQ(select_salient_patches(scores, 1.0).size(), 10u);
  EXPECT_EQ(select_salient_patches(std::vector<double>(7, 1.0), 0.5), (std::vector<int>{0, 1, 2, 3}));
  EXPECT_THROW(select_salient_patches(scores, 0.0), ConfigError);
  EXPECT_THROW(select_salient_patches(std::vector<double>{}, 0.4), ShapeError);
}

TEST(Memory, SalientSelectionPicksTheLargestScoresProperty) {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = rng.uniform_int(1, 40);
    std::vector<double> s(n);
    for (double& x : s) x = rng.uniform();
    const double ratio = rng.uniform(0.05, 1.0);
    const auto sel = select_salient_patches(s, ratio);
    ASSERT_EQ(static_cast<int>(sel.size()), std::max(1, static_cast<int>(std::ceil(ratio * n - 1e-9))));
    const double cutoff = s[sel.back()];
    for (int i = 0; i < n; ++i) {
      if (std::find(sel.begin(), sel.end(), i) == sel.end()) {
        EXPECT_LE(s[i], cutoff);
      }
    }
  }
}

TEST(Memory, RegionsAverageConsecutiveGroups) {
  Matrix sel(5, 2);
  sel << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10;
  const std::vector<int> ids{40, 41, 42, 43, 44};
  const auto regions = pool_regions(sel, 2, ids);
  ASSERT_EQ(regions.size(), 3u);
  EXPECT_DOUBLE_EQ(regions[0].embedding(0), 2.0);
  EXPECT_DOUBLE_EQ(regions[1].embedding(1), 7.0);
  EXPECT_DOUBLE_EQ(regions[2].embedding(0), 9.0);
  EXPECT_EQ(regions[2].members, (std::vector<int>{44}));
  EXPECT_EQ(pool_regions(sel, 10).size(), 1u);
  EXPECT_THROW(pool_regions(sel, 0), ConfigError);
}

TEST(Memory, CosineSimilarityProperties) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const RowVector a = random_matrix(1, 6, rng).row(0), b = random_matrix(1, 6, rng).row(0);
    const double c = cosine_similarity(a, b);
    EXPECT_LE(std::abs(c), 1.0 + 1e-12);
    EXPECT_NEAR(c, cosine_similarity(b, a), 1e-15);
    EXPECT_NEAR(cosine_similarity(a, 3.0 * a), 1.0, 1e-12);
    EXPECT_NEAR(cosine_similarity(a, 2.5 * b), c, 1e-12);
  }
  EXPECT_THROW(cosine_similarity(RowVector::Zero(3), RowVector::Ones(3)), DataError);
  EXPECT_THROW(cosine_similarity(RowVector::Ones(2), RowVector::Ones(3)), ShapeError);
}

TEST(Memory, RecallReturnsTheMostSimilarSentences) {
  Matrix emb(4, 2);
  emb << 1, 0, 0, 1, 1, 1, -1, 0;
  const MemoryBank bank({"east", "north", "diagonal", "west"}, emb);
  RowVector q(2);
  q << 1, 0.1;
  EXPECT_EQ(coarse_recall(q, bank, 2), (std::vector<int>{0, 2}));
  EXPECT_EQ(coarse_recall(q, bank, 4), (std::vector<int>{0, 2, 1, 3}));
  EXPECT_THROW(coarse_recall(q, bank, 5), ConfigError);
  EXPECT_THROW(coarse_recall(q, bank, 0), ConfigError);
}

TEST(Memory, AggregationWeightsAreASoftmaxOverTheTopK) {
  Matrix cands(4, 2);
  cands << 1, 0, 0, 1, 2, 2, 5, 5;
  const std::vector<double> scores{0.5, 2.0, 1.0, -3.0};
  Aggregate info;
  const RowVector out = aggregate_topk(cands, scores, 2, &info);
  EXPECT_EQ(info.selected, (std::vector<int>{1, 2}));
  const double w1 = std::exp(2.0) / (std::exp(2.0) + std::exp(1.0));
  EXPECT_NEAR(info.weights(0), w1, 1e-15);
  EXPECT_NEAR(out(0), (1 - w1) * 2.0, 1e-14);
  EXPECT_NEAR(out(1), w1 + (1 - w1) * 2.0, 1e-14);
  EXPECT_THROW(aggregate_topk(cands, scores, 5), ConfigError);
}

TEST(Memory, RetrievalWithoutRerankerUsesCosineScores) {
  Rng rng(3);
  const MemoryBank bank = random_bank(40, 6, rng);
  std::vector<RegionToken> regions(3);
  for (auto& r : regions) r.embedding = random_matrix(1, 6, rng).row(0);
  const RetrievalResult res = retrieve(regions, bank, 10, 3, nullptr);
  ASSERT_EQ(res.regions.size(), 3u);
  for (std::size_t q = 0; q < 3; ++q) {
    const auto& r = res.regions[q];
    EXPECT_EQ(r.candidates, coarse_recall(regions[q].embedding, bank, 10));
    // Cosine scores keep the recall order, so the first three candidates win.
    EXPECT_EQ(r.selected, std::vector<int>(r.candidates.begin(), r.candidates.begin() + 3));
    EXPECT_NEAR(r.weights.sum(), 1.0, 1e-12);
  }
  EXPECT_THROW(retrieve(regions, bank, 2, 3, nullptr), ConfigError);
}

TEST(Memory, RerankerGradientsMatchFiniteDifferences) {
  Rng rng(4);
  Reranker r = Reranker::make("reranker", 5, 7, rng);
  const Matrix region = random_matrix(1, 5, rng), cands = random_matrix(6, 5, rng);
  const Matrix c = random_matrix(1, 5, rng);
  std::vector<Parameter*> params;
  r.visit([&](Parameter& p) { params.push_back(&p); });
  const double err = testing::gradient_error(
      [&](ad::Tape& t) {
        ad::Var cv = t.constant(cands);
        return ad::dot_const(aggregate_topk(cv, r.score(t, t.constant(region), cv), 3), c);
      },
      params);
  EXPECT_LT(err, 1e-6);
}

TEST(Memory, ZeroRerankerScoresEverythingEqually) {
  const Reranker r = Reranker::zeros("reranker", 3, 4);
  EXPECT_EQ(rerank_score(r, RowVector::Ones(3), RowVector::Constant(3, -2.0)), 0.0);
}

TEST(Memory, BankRoundTripsAtSinglePrecision) {
  Rng rng(5);
  const auto dir = testing::scratch_dir("bank-io");
  Matrix emb = random_matrix(7, 4, rng);
  emb = emb.unaryExpr([](double x) { return static_cast<double>(static_cast<float>(x)); });
  const MemoryBank bank({"a", "b", "c", "d", "e", "f", "\xc3\xa9t\xc3\xa9"}, emb);
  bank.save(dir / "bank.bin");
  const MemoryBank back = MemoryBank::load(dir / "bank.bin");
  EXPECT_EQ(back.sentences(), bank.sentences());
  EXPECT_TRUE((back.embeddings().array() == emb.array()).all());
  binio::write_text(dir / "junk.bin", "not a bank");
  EXPECT_THROW(MemoryBank::load(dir / "junk.bin"), DataError);
}

TEST(Memory, BankOnlyAcceptsTrainingCases) {
  corpus::CorpusSpec spec;
  spec.n_cases = 10;
  spec.dim = 6;
  const auto cases = corpus::generate_synthetic_corpus(spec);
  const auto train = corpus::select_split(cases, corpus::Split::kTrain);
  const MemoryBank bank = build_memory_bank(std::span<const corpus::Case* const>(train));
  std::size_t sentences = 0;
  for (const auto* c : train) sentences += c->sentences.size();
  EXPECT_EQ(bank.size(), static_cast<int>(sentences));
  EXPECT_THROW(build_memory_bank(std::span<const corpus::Case>(cases)), DataError);
}

TEST(Memory, BankConstructorValidates) {
  EXPECT_THROW(MemoryBank({"a"}, Matrix::Zero(2, 3)), Error);
}

}  // namespace
}  // namespace rrmoe::memory
