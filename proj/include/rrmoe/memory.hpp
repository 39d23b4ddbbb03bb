// Copyright 2026 The rrmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Sentence memory bank and the two-stage retrieval pipeline: salient patch
// selection, region pooling, cosine recall, learned re-ranking and softmax
// aggregation of the top-k re-ranked candidates.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rrmoe/autodiff.hpp"
#include "rrmoe/condense.hpp"
#include "rrmoe/corpus.hpp"

namespace rrmoe::memory {

/// Frozen store of sentence embeddings. Immutable after construction.
class MemoryBank {
 public:
  MemoryBank(std::vector<std::string> sentences, Matrix embeddings);

  int size() const { return static_cast<int>(embeddings_.rows()); }
  int dim() const { return static_cast<int>(embeddings_.cols()); }
  const Matrix& embeddings() const { return embeddings_; }
  const std::string& sentence(int i) const { return sentences_.at(i); }
  const std::vector<std::string>& sentences() const { return sentences_; }

  /// header (magic, version, M, d), float32 embeddings, length-prefixed
  /// UTF-8 sentences.
  void save(const std::filesystem::path& path) const;
  static MemoryBank load(const std::filesystem::path& path);

 private:
  std::vector<std::string> sentences_;
  Matrix embeddings_;
};

/// One entry per sentence, in case order then sentence order. Only
/// training-split cases are admitted.
MemoryBank build_memory_bank(std::span<const corpus::Case> cases);
MemoryBank build_memory_bank(std::span<const corpus::Case* const> cases);

struct RegionToken {
  RowVector embedding;
  std::vector<int> members;  // patch indices
};

/// The ceil(ratio * N) highest-scoring indices, ordered by descending score
/// then ascending index.
std::vector<int> select_salient_patches(std::span<const double> scores, double ratio);

/// Groups consecutive rows of `selected` into regions of `group_size`; a
/// trailing remainder forms a smaller final region. `member_ids` labels the
/// rows (defaults to 0..K-1).
std::vector<RegionToken> pool_regions(const Matrix& selected, int group_size,
                                      std::span<const int> member_ids = {});

double cosine_similarity(const RowVector& a, const RowVector& b);

/// Indices of the `recall_size` most cosine-similar bank entries,
/// descending similarity, ties by lower index.
std::vector<int> coarse_recall(const RowVector& region, const MemoryBank& bank, int recall_size);

/// Scoring MLP over [region || candidate]: 2d -> hidden -> 1 with GELU.
struct Reranker {
  Parameter w1, b1, w2, b2;

  int dim() const { return static_cast<int>(w1.value.rows() / 2); }
  static Reranker make(const std::string& prefix, int dim, int hidden, Rng& rng);
  static Reranker zeros(const std::string& prefix, int dim, int hidden);
  /// Scores every row of `candidates` (C x d) against `region` (1 x d); C x 1.
  ad::Var score(ad::Tape& tape, ad::Var region, ad::Var candidates) const;
  void visit(const condense::MutableParamVisitor& f);
};

double rerank_score(const Reranker& reranker, const RowVector& region, const RowVector& candidate);

struct Aggregate {
  std::vector<int> selected;  // positions into the candidate list
  RowVector weights;          // softmax over the selected scores
};

/// Softmax-weighted sum of the top-k candidates by score (ties by lower
/// position). Gradients flow through the selected scores only.
ad::Var aggregate_topk(ad::Var candidates, ad::Var scores, int k, Aggregate* info = nullptr);
RowVector aggregate_topk(const Matrix& candidates, std::span<const double> scores, int k,
                         Aggregate* info = nullptr);

struct RegionRetrieval {
  std::vector<int> candidates;  // bank indices, C_r
  std::vector<double> scores;   // stage-2 score per candidate
  std::vector<int> selected;    // bank indices, I_r
  RowVector weights;
  RowVector embedding;          // aggregated f~_r
};

struct RetrievalResult {
  std::vector<RegionRetrieval> regions;
};

/// Per region: cosine recall, scoring, top-k aggregation. With a null
/// reranker the stage-2 scores are the cosine similarities themselves.
/// Returns the aggregated embeddings as an R x d graph value.
ad::Var retrieve(ad::Tape& tape, const std::vector<RegionToken>& regions, const MemoryBank& bank,
                 int recall_size, int k, const Reranker* reranker, RetrievalResult* result);
RetrievalResult retrieve(const std::vector<RegionToken>& regions, const MemoryBank& bank,
                         int recall_size, int k, const Reranker* reranker);

}  // namespace rrmoe::memory
