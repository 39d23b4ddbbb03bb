// Copyright 2026 The rrmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Optimizer, training loop and checkpoint files.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rrmoe/model.hpp"

namespace rrmoe {
class ConfigTree;
}

namespace rrmoe::train {

struct TrainConfig {
  int epochs = 100;
  int batch_size = 4;
  double lr = 1e-4;
  double weight_decay = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Stop once the monitored NLL falls below this; 0 disables.
  double target_nll = 0.0;
  int eval_every = 1;

  void validate() const;
  static TrainConfig from_config(const ConfigTree& tree);
};

/// Adam with L2 weight decay folded into the gradient.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, const TrainConfig& config);
  void step();
  int steps() const { return t_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Matrix> m_, v_;
  TrainConfig config_;
  int t_ = 0;
};

struct TrainingCase {
  std::string id;
  const Matrix* patches = nullptr;
  std::vector<int> report;  // token ids, no BOS/EOS
};

struct StepRecord {
  std::int64_t step = 0;
  int epoch = 0;
  double nll = 0.0;
  double aux = 0.0;
  double total = 0.0;
  double lr = 0.0;
  std::vector<RowVector> f_usage;  // per MoE layer, mean over the batch
  std::vector<RowVector> p_mean;
  double wall_ms = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  double train_nll = 0.0;              // evaluation mode
  std::optional<double> val_nll;
  bool best = false;
};

struct TrainResult {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_nll = 0.0;  // monitored NLL of the retained weights
  bool reached_target = false;
};

struct TrainCallbacks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Token-weighted mean NLL in evaluation mode.
double evaluate_nll(const model::Model& model, const memory::MemoryBank& bank,
                    std::span<const TrainingCase> cases);

/// Minibatch Adam over `train_set`. The monitored NLL is the validation NLL
/// when `val_set` is non-empty, the training NLL otherwise; the weights with
/// the best monitored NLL are restored on return. Throws TrainingDiverged on
/// a non-finite loss.
TrainResult train(model::Model& model, const memory::MemoryBank& bank,
                  std::span<const TrainingCase> train_set, std::span<const TrainingCase> val_set,
                  const TrainConfig& config, const TrainCallbacks& callbacks = {});

struct Checkpoint {
  std::string config_text;
  std::uint64_t config_hash = 0;
  int vocab_size = 0;
  int input_dim = 0;
  std::vector<std::pair<std::string, Matrix>> tensors;
};

/// magic, version, config snapshot and hash, vocab size, input width, then
/// (name, rows, cols, little-endian f64 values) per tensor.
void save_checkpoint(const std::filesystem::path& path, const model::Model& model,
                     const ConfigTree& config);
Checkpoint read_checkpoint(const std::filesystem::path& path);
/// Copies tensors into `model`; every model parameter must be present with a
/// matching shape.
void load_weights(model::Model& model, const Checkpoint& checkpoint);

}  // namespace rrmoe::train
