// Copyright 2026 The rrmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Encoder-decoder report generator: patch encoder, token condensation,
// two-stage sentence retrieval, fused cross-attention memory and a causal
// decoder whose feed-forward blocks are mixtures of experts.

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rrmoe/autodiff.hpp"
#include "rrmoe/condense.hpp"
#include "rrmoe/corpus.hpp"
#include "rrmoe/memory.hpp"
#include "rrmoe/moe.hpp"
#include "rrmoe/rng.hpp"

namespace rrmoe {
class ConfigTree;
}

namespace rrmoe::model {

struct ModelConfig {
  int dim = 64;
  int heads = 4;
  int enc_layers = 3;
  int dec_layers = 3;
  int experts = 4;
  int top_k = 2;
  int ffn_dim = 256;
  int vocab_size = 0;   // taken from the vocabulary
  int input_dim = 64;   // patch and sentence embedding width
  int max_len = 64;     // decoder positions, BOS included
  double aux_weight = 0.01;
  int recall_size = 20;
  int final_topk = 3;
  double patch_ratio = 0.4;
  int group_size = 20;
  double dropout = 0.1;
  int reranker_hidden = 0;  // 0 means input_dim
  double router_init_scale = 1.0;
  bool use_reranker = true;
  bool use_moe = true;
  bool noisy_routing = true;
  bool load_balance = true;
  std::uint64_t seed = 7;

  /// Aux-loss weight actually applied (0 when load balancing is off).
  double effective_aux_weight() const { return load_balance && use_moe ? aux_weight : 0.0; }
  /// Throws ConfigError naming the `model.*` key at fault.
  void validate() const;

  static ModelConfig desk();
  static ModelConfig paper();
  /// Profile defaults overridden by `model.*` keys.
  static ModelConfig from_config(const ConfigTree& tree, int vocab_size, int input_dim);
};

enum class TokenType { kVisual = 0, kVisualSummary = 1, kTextSummary = 2, kRegionText = 3 };

struct DecoderLayer {
  condense::LayerNormParams ln_self, ln_cross, ln_ffn;
  condense::AttentionParams self_attn, cross_attn;
  std::optional<moe::MoELayer> moe;
  std::optional<moe::ExpertFFN> dense;
};

struct EncoderLayer {
  condense::LayerNormParams ln_attn;
  condense::AttentionParams attn;
  condense::FeedForward ffn;
};

/// How a forward pass runs. Evaluation mode ignores `noise` and `dropout`.
struct ForwardMode {
  bool training = false;
  moe::NoiseSource* noise = nullptr;  // routing noise when training with noisy routing
  Rng* dropout = nullptr;             // mask stream when training with dropout > 0
};

struct EncoderState {
  ad::Var memory;                 // L x d cross-attention memory
  std::vector<TokenType> types;   // one per memory row
  RowVector visual_attention;     // head-mean weights of the visual condensation
  std::vector<int> salient;       // selected patch indices
  std::vector<memory::RegionToken> regions;
  memory::RetrievalResult retrieval;
};

struct DecoderOutput {
  ad::Var logits;                   // T x V
  std::vector<ad::Var> aux;         // one per MoE layer
  std::vector<moe::LoadStats> stats;
  std::vector<std::vector<moe::GateDecision>> gates;
};

class Model {
 public:
  /// Weights are drawn from streams derived from `config.seed`.
  explicit Model(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }

  EncoderState encode(ad::Tape& tape, const Matrix& patches, const memory::MemoryBank& bank,
                      const ForwardMode& mode) const;
  /// `prefix` starts with BOS; position t of the logits predicts token t+1.
  DecoderOutput decode(ad::Tape& tape, ad::Var memory, std::span<const int> prefix,
                       const ForwardMode& mode) const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  Parameter& parameter(const std::string& name);
  std::size_t parameter_count() const;
  void zero_grad() const;

  // Components are public so tests can inspect and rewire them.
  Parameter in_w, in_b;
  std::vector<EncoderLayer> encoder;
  condense::LayerNormParams enc_norm;
  condense::TCLayer visual_tc;
  std::optional<memory::Reranker> reranker;
  Parameter text_w, text_b;
  condense::TCLayer text_tc;
  Parameter type_emb;  // 4 x d
  Parameter tok_emb;   // V x d
  std::vector<DecoderLayer> decoder;
  condense::LayerNormParams dec_norm;
  Parameter out_w, out_b;

 private:
  void visit(const condense::MutableParamVisitor& f);

  ModelConfig config_;
  Matrix positions_;  // sinusoidal table, max_len x d
};

/// Mean over non-pad positions of -log softmax(logits)[target]. Throws Error
/// when every target is padding.
ad::Var nll_loss(ad::Var logits, std::span<const int> targets);
double nll_loss(const Matrix& logits, std::span<const int> targets);

/// nll + lambda * mean(aux); plain nll when there are no MoE layers.
ad::Var total_loss(ad::Var nll, std::span<const ad::Var> aux, double lambda);
double total_loss(double nll, std::span<const double> aux, double lambda);

/// Decoder input [BOS, y...] and targets [y..., EOS] for one report.
struct TeacherForcing {
  std::vector<int> inputs;
  std::vector<int> targets;
};
TeacherForcing teacher_forcing(std::span<const int> report);

struct CaseLoss {
  ad::Var nll;
  ad::Var aux_mean;  // 1 x 1, zero without MoE layers
  ad::Var total;
  std::vector<moe::LoadStats> stats;
};

/// Full teacher-forced forward pass for one case.
CaseLoss case_loss(ad::Tape& tape, const Model& model, const Matrix& patches,
                   const memory::MemoryBank& bank, std::span<const int> report,
                   const ForwardMode& mode);

// ---------------------------------------------------------------------------
// Decoding

/// Next-token log-probabilities for a generated prefix (BOS excluded).
using StepScorer = std::function<RowVector(std::span<const int> generated)>;

struct Hypothesis {
  std::vector<int> tokens;  // EOS included when finished
  double score = 0.0;       // sum of log-probabilities
  bool finished = false;
};

/// Argmax per step (lowest id on ties) until EOS or `max_len` tokens.
Hypothesis greedy_search(const StepScorer& scorer, int eos, int max_len);
/// Keeps the `beam` best expansions per step; expansions ending in EOS move
/// to the finished pool. Final ranking uses score / length with
/// `length_norm`, the raw score otherwise; ties go to the lexicographically
/// smaller token sequence.
Hypothesis beam_search(const StepScorer& scorer, int eos, int beam, int max_len,
                       bool length_norm);

/// Scorer over a model for one case. The encoder runs once.
StepScorer model_scorer(const Model& model, const Matrix& patches,
                        const memory::MemoryBank& bank);

corpus::ReportSequence greedy_decode(const Model& model, const Matrix& patches,
                                     const memory::MemoryBank& bank, int max_len);
corpus::ReportSequence beam_decode(const Model& model, const Matrix& patches,
                                   const memory::MemoryBank& bank, int beam, int max_len,
                                   bool length_norm);

/// Tokens before the first EOS.
corpus::ReportSequence strip_eos(const Hypothesis& h, int eos = corpus::kEos);

}  // namespace rrmoe::model
