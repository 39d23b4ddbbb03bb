// Copyright 2026 The rrmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Synthetic desk-scale corpora: patch embedding sets, topic-conditioned
// reports and the sentence embeddings that seed the memory bank.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "rrmoe/autodiff.hpp"

namespace rrmoe {
class ConfigTree;
}

namespace rrmoe::corpus {

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr int kNumReserved = 4;

/// Unordered set of patch vectors for one case; one row per patch.
struct EmbeddingSet {
  std::string case_id;
  Matrix patches;

  int dim() const { return static_cast<int>(patches.cols()); }
  int size() const { return static_cast<int>(patches.rows()); }
  /// Throws DataError unless non-empty and finite.
  void validate() const;
};

class Vocabulary {
 public:
  Vocabulary();
  /// `tokens` are the non-reserved entries in id order (ids 4, 5, ...).
  explicit Vocabulary(std::vector<std::string> tokens);

  int size() const { return static_cast<int>(id_to_token_.size()); }
  /// Id of `token`, or kUnk.
  int id(const std::string& token) const;
  /// Throws DataError for ids outside the table.
  const std::string& token(int id) const;
  bool contains(const std::string& token) const { return token_to_id_.count(token) != 0; }
  const std::vector<std::string>& tokens() const { return id_to_token_; }

  std::string to_text() const;
  static Vocabulary from_text(const std::string& text);

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

struct ReportSequence {
  std::vector<int> tokens;
  int length() const { return static_cast<int>(tokens.size()); }
};

struct Sentence {
  std::string text;
  RowVector embedding;
};

enum class Split { kTrain, kVal, kTest };
const char* split_name(Split s);
Split parse_split(const std::string& name);

struct Case {
  std::string id;
  Split split = Split::kTrain;
  int topic = 0;
  EmbeddingSet embeddings;
  std::vector<std::string> report;  // whitespace tokens
  std::vector<Sentence> sentences;
};

struct CorpusSpec {
  int n_cases = 96;
  int dim = 64;
  int patches_min = 16;
  int patches_max = 32;
  int vocab_size = 196;
  int report_length_min = 8;
  int report_length_max = 24;
  int n_latent_topics = 4;
  int phrases_per_topic = 8;
  int phrase_length_min = 3;
  int phrase_length_max = 5;
  double patch_noise = 0.35;
  /// Fraction of report positions occupied by a single filler token.
  double filler_ratio = 0.0;
  double train_fraction = 0.8;
  double val_fraction = 0.1;
  std::uint64_t rng_seed = 7;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  static CorpusSpec from_config(const ConfigTree& tree);
};

/// Pure function of `spec`.
std::vector<Case> generate_synthetic_corpus(const CorpusSpec& spec);

/// Ids 4.. in descending frequency, ties lexicographic; tokens below
/// `min_freq` are left out and encode to kUnk.
Vocabulary build_vocab(std::span<const std::vector<std::string>> reports, int min_freq);
ReportSequence encode_report(const Vocabulary& vocab, std::span<const std::string> tokens);
std::vector<std::string> decode_tokens(const Vocabulary& vocab, std::span<const int> ids);

std::vector<const Case*> select_split(const std::vector<Case>& cases, Split split);

/// Dataset directory: manifest.json plus cases/<id>.bin per case.
void save_dataset(const std::filesystem::path& dir, const CorpusSpec& spec,
                  const std::vector<Case>& cases);
std::vector<Case> load_dataset(const std::filesystem::path& dir);

}  // namespace rrmoe::corpus
