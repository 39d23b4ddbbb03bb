// Copyright 2026 The rrmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "rrmoe/corpus.hpp"

#include <gtest/gtest.h>

#include <set>

#include "rrmoe/errors.hpp"
#include "test_util.hpp"

namespace rrmoe::corpus {
namespace {

CorpusSpec small_spec() {
  CorpusSpec s;
  s.n_cases = 20;
  s.dim = 8;
  s.patches_min = 4;
  s.patches_max = 9;
  return s;
}

TEST(Corpus, GenerationIsAPureFunctionOfItsParameters) {
  const auto a = generate_synthetic_corpus(small_spec());
  const auto b = generate_synthetic_corpus(small_spec());
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].id, b[i].id);
    EXPECT_EQ(a[i].report, b[i].report);
    EXPECT_TRUE((a[i].embeddings.patches.array() == b[i].embeddings.patches.array()).all());
  }
  CorpusSpec other = small_spec();
  other.rng_seed = 8;
  EXPECT_NE(generate_synthetic_corpus(other)[0].report, a[0].report);
}

TEST(Corpus, CasesRespectTheSpecBounds) {
  const CorpusSpec s = small_spec();
  std::set<std::string> ids;
  for (const Case& c : generate_synthetic_corpus(s)) {
    ids.insert(c.id);
    EXPECT_GE(c.embeddings.size(), s.patches_min);
    EXPECT_LE(c.embeddings.size(), s.patches_max);
    EXPECT_EQ(c.embeddings.dim(), s.dim);
    EXPECT_GE(static_cast<int>(c.report.size()), s.report_length_min);
    EXPECT_LE(static_cast<int>(c.report.size()), s.report_length_max);
    EXPECT_FALSE(c.sentences.empty());
    for (const Sentence& sent : c.sentences) EXPECT_EQ(sent.embedding.size(), s.dim);
    EXPECT_NO_THROW(c.embeddings.validate());
  }
  EXPECT_EQ(ids.size(), static_cast<std::size_t>(s.n_cases));
}

TEST(Corpus, SplitsFollowTheFractions) {
  const auto cases = generate_synthetic_corpus(small_spec());
  const auto train = select_split(cases, Split::kTrain);
  const auto val = select_split(cases, Split::kVal);
  const auto test = select_split(cases, Split::kTest);
  EXPECT_EQ(train.size() + val.size() + test.size(), cases.size());
  EXPECT_EQ(train.size(), 16u);
  EXPECT_EQ(val.size(), 2u);
  EXPECT_EQ(parse_split("val"), Split::kVal);
  EXPECT_THROW(parse_split("dev"), Error);
}

TEST(Corpus, FillerRatioShapesReports) {
  CorpusSpec s = small_spec();
  s.filler_ratio = 0.9;
  s.report_length_min = 40;
  s.report_length_max = 40;
  std::map<std::string, int> freq;
  int total = 0;
  for (const Case& c : generate_synthetic_corpus(s)) {
    for (const auto& t : c.report) {
      ++freq[t];
      ++total;
    }
  }
  int top = 0;
  for (const auto& [t, n] : freq) top = std::max(top, n);
  EXPECT_GT(static_cast<double>(top) / total, 0.8);
}

TEST(Corpus, VocabularyOrdersByFrequencyThenLexically) {
  const std::vector<std::vector<std::string>> reports{{"b", "a", "c", "a"}, {"c", "d", "rare"}};
  const Vocabulary v = build_vocab(reports, 1);
  EXPECT_EQ(v.token(kNumReserved), "a");
  EXPECT_EQ(v.token(kNumReserved + 1), "c");
  EXPECT_EQ(v.token(kNumReserved + 2), "b");
  EXPECT_EQ(v.id("nowhere"), kUnk);
  const Vocabulary pruned = build_vocab(reports, 2);
  EXPECT_FALSE(pruned.contains("rare"));
  EXPECT_EQ(pruned.size(), kNumReserved + 2);
  EXPECT_THROW(v.token(v.size()), DataError);
}

TEST(Corpus, VocabularyTextRoundTrip) {
  const Vocabulary v = build_vocab(std::vector<std::vector<std::string>>{{"x", "y", "y"}}, 1);
  const Vocabulary back = Vocabulary::from_text(v.to_text());
  EXPECT_EQ(back.tokens(), v.tokens());
}

TEST(Corpus, EncodeDecodeRoundTripProperty) {
  const auto cases = generate_synthetic_corpus(small_spec());
  std::vector<std::vector<std::string>> reports;
  for (const auto& c : cases) reports.push_back(c.report);
  const Vocabulary v = build_vocab(reports, 1);
  for (const auto& r : reports) {
    const ReportSequence s = encode_report(v, r);
    EXPECT_EQ(s.length(), static_cast<int>(r.size()));
    EXPECT_EQ(decode_tokens(v, s.tokens), r);
  }
  EXPECT_THROW(encode_report(v, std::vector<std::string>{}), DataError);
}

TEST(Corpus, DatasetRoundTripsThroughDisk) {
  const auto dir = testing::scratch_dir("corpus-io");
  const CorpusSpec s = small_spec();
  const auto cases = generate_synthetic_corpus(s);
  save_dataset(dir / "data", s, cases);
  const auto back = load_dataset(dir / "data");
  ASSERT_EQ(back.size(), cases.size());
  for (std::size_t i = 0; i < cases.size(); ++i) {
    EXPECT_EQ(back[i].id, cases[i].id);
    EXPECT_EQ(back[i].split, cases[i].split);
    EXPECT_EQ(back[i].report, cases[i].report);
    EXPECT_TRUE((back[i].embeddings.patches.array() == cases[i].embeddings.patches.array()).all());
    ASSERT_EQ(back[i].sentences.size(), cases[i].sentences.size());
    EXPECT_EQ(back[i].sentences[0].text, cases[i].sentences[0].text);
  }
}

TEST(Corpus, InvalidSpecsNameTheField) {
  CorpusSpec s = small_spec();
  s.patches_max = 2;
  try {
    s.validate();
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "corpus.patches_max");
  }
  s = small_spec();
  s.filler_ratio = 1.0;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Corpus, EmbeddingSetValidation) {
  EmbeddingSet e{"x", Matrix::Zero(0, 4)};
  EXPECT_THROW(e.validate(), DataError);
  e.patches = Matrix::Zero(2, 4);
  e.patches(1, 2) = std::nan("");
  EXPECT_THROW(e.validate(), DataError);
}

}  // namespace
}  // namespace rrmoe::corpus
