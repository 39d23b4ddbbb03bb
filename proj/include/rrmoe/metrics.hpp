// Copyright 2026 The rrmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Corpus-level text generation metrics: BLEU-1..4, METEOR (exact unigram
// matches) and ROUGE-L.

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace rrmoe::metrics {

using Tokens = std::vector<std::string>;

struct BleuDetail {
  std::vector<double> precisions;  // modified precision per order
  double brevity_penalty = 0.0;
  long candidate_length = 0;
  long reference_length = 0;
  double score = 0.0;
};

/// Corpus BLEU-n without smoothing: any zero precision gives 0.
/// BP = min(1, exp(1 - r / c)) over summed lengths.
BleuDetail bleu_detail(std::span<const Tokens> candidates, std::span<const Tokens> references, int n);
double bleu_n(std::span<const Tokens> candidates, std::span<const Tokens> references, int n);

/// LCS-based F-measure, (1 + b^2) P R / (R + b^2 P); b = 1 is the harmonic F1.
double rouge_l(const Tokens& candidate, const Tokens& reference, double beta = 1.0);
int lcs_length(const Tokens& a, const Tokens& b);

struct Alignment {
  std::vector<std::pair<int, int>> pairs;  // (candidate, reference), by candidate position
  int chunks = 0;
};

/// Exact-match unigram alignment. Repeatedly aligns the longest run of
/// consecutive unaligned matches (ties: leftmost candidate position, then
/// leftmost reference position).
Alignment align_unigrams(const Tokens& candidate, const Tokens& reference);

struct MeteorDetail {
  int matches = 0;
  int chunks = 0;
  double precision = 0.0;
  double recall = 0.0;
  double fmean = 0.0;
  double penalty = 0.0;
  double score = 0.0;
};

/// F_mean = 10 P R / (R + 9 P), penalty = 0.5 (chunks / m)^3.
MeteorDetail meteor_detail(const Tokens& candidate, const Tokens& reference);
double meteor(const Tokens& candidate, const Tokens& reference);

struct CaseScores {
  std::string id;
  std::array<double, 4> bleu{};  // sentence-level BLEU-1..4
  double meteor = 0.0;
  double rouge_l = 0.0;
};

struct MetricsReport {
  std::array<double, 4> bleu{};
  double meteor = 0.0;
  double rouge_l = 0.0;
  std::vector<CaseScores> cases;

  /// `key = value` lines for the six corpus metrics followed by a
  /// tab-separated per-case table.
  std::string to_text() const;
  static MetricsReport from_text(const std::string& text);
};

inline constexpr const char* kMetricNames[6] = {"bleu1", "bleu2", "bleu3", "bleu4", "meteor",
                                                "rouge_l"};

/// All six metrics. An empty candidate scores 0 on the per-case metrics.
/// `ids` may be empty (cases are then numbered).
MetricsReport evaluate_corpus(std::span<const Tokens> candidates, std::span<const Tokens> references,
                              std::span<const std::string> ids = {}, double rouge_beta = 1.0);
void write_report(const std::filesystem::path& path, const MetricsReport& report);
MetricsReport read_report(const std::filesystem::path& path);

}  // namespace rrmoe::metrics
