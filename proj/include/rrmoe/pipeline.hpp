// Copyright 2026 The rrmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Run directories and the commands behind the CLI: data generation, bank
// building, training, generation, evaluation and ablation sweeps.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rrmoe/config.hpp"
#include "rrmoe/corpus.hpp"
#include "rrmoe/errors.hpp"
#include "rrmoe/metrics.hpp"

namespace rrmoe::pipeline {

namespace fs = std::filesystem;

/// Raised when a run directory already holds a manifest and --force is off.
class RunExists : public Error {
 public:
  explicit RunExists(const fs::path& dir)
      : Error("run directory " + dir.string() + " already holds a run (use --force to replace it)") {}
};

const std::set<std::string>& known_config_keys();
/// Parses the file and rejects unknown keys and unknown profiles.
ConfigTree load_config(const fs::path& path);
void validate_config(const ConfigTree& tree);

struct DecodeConfig {
  int beam = 3;
  bool length_norm = true;
  int max_len = 0;  // 0 means model.max_len
  double rouge_beta = 1.0;

  static DecodeConfig from_config(const ConfigTree& tree);
};

struct RunManifest {
  std::string command;
  std::string config_path;
  std::string config_snapshot;
  std::uint64_t seed = 0;
  std::string input_hash;
  std::vector<std::string> outputs;  // relative to the run directory
  std::vector<std::pair<std::string, std::string>> inputs;  // role -> path
  double wall_ms = 0.0;
};

/// Creates `dir`, or empties it under `force`; throws RunExists when it
/// already carries a manifest.
void prepare_run_dir(const fs::path& dir, bool force);
void write_manifest(const fs::path& dir, const RunManifest& manifest);
RunManifest read_manifest(const fs::path& dir);
/// FNV-1a over relative paths and contents, in path order; hex string.
std::string content_hash(const std::vector<fs::path>& inputs, const std::string& extra = {});

struct CommandOptions {
  bool force = false;
  std::ostream* log = nullptr;  // progress lines, optional
};

void gen_data(const fs::path& config_path, const fs::path& out_dir, const CommandOptions& opts);
void build_bank(const fs::path& data_dir, const fs::path& out_dir, const CommandOptions& opts);
/// `bank_path` may be empty: the bank is then built from the training split.
void train(const fs::path& config_path, const fs::path& data_dir, const fs::path& bank_path,
           const fs::path& out_dir, const CommandOptions& opts);
/// Decodes `split` of the dataset with a trained run; writes generations.tsv.
/// `data_dir` may be empty to reuse the training run's dataset.
void generate(const fs::path& run_dir, const fs::path& data_dir, corpus::Split split,
              std::optional<int> beam, const fs::path& out_dir, const CommandOptions& opts);
/// Scores a generations.tsv (or the directory holding one); writes metrics.txt.
metrics::MetricsReport evaluate(const fs::path& generations, const fs::path& out_dir,
                                double rouge_beta, const CommandOptions& opts);

// ---------------------------------------------------------------------------
// Ablation

struct AblationRow {
  std::string label;
  std::vector<std::pair<std::string, std::string>> overrides;  // config key -> value
};

/// Child runs for an axis. Axes: table2 (cumulative module toggles),
/// reranker, moe, noisy_routing, load_balance, E, routing_k, lambda,
/// recall_size, final_topk. Empty `values` selects the standard grid.
std::vector<AblationRow> ablation_grid(const std::string& axis, const std::vector<std::string>& values);

struct SummaryRow {
  std::string label;
  bool reranker = false, moe = false, noisy = false, load_balance = false;
  std::string setting;  // e.g. "model.aux_weight=0.01"
  double metrics[6] = {};
};

struct AblationSummary {
  std::vector<SummaryRow> rows;
  std::vector<std::string> missing;
};

/// Reads each run's manifest and metrics.txt; unreadable runs are listed in
/// `missing` and reported on `warn`.
AblationSummary summarize_ablation(const std::vector<fs::path>& run_dirs, std::ostream* warn);
/// Markdown table with toggle marks and the six metrics to 4 decimals.
std::string format_summary(const AblationSummary& summary);

/// Trains, decodes the test split and scores every grid row under
/// `out_dir/<label>/`, then writes summary.md. Returns the summary.
AblationSummary ablate(const fs::path& config_path, const fs::path& data_dir,
                       const std::string& axis, const std::vector<std::string>& values,
                       const fs::path& out_dir, const CommandOptions& opts);

}  // namespace rrmoe::pipeline
