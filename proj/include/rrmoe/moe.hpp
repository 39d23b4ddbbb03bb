// Copyright 2026 The rrmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Sparsely gated mixture-of-experts feed-forward layer with noisy top-k
// routing and the load-balance auxiliary loss.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rrmoe/autodiff.hpp"
#include "rrmoe/condense.hpp"
#include "rrmoe/rng.hpp"

namespace rrmoe::moe {

/// W2 gelu(W1 x + b1) + b2. Normalization is applied by the caller.
struct ExpertFFN {
  Parameter w1, b1, w2, b2;

  int dim() const { return static_cast<int>(w1.value.rows()); }
  int hidden() const { return static_cast<int>(w1.value.cols()); }
  static ExpertFFN make(const std::string& prefix, int dim, int hidden, Rng& rng);
  ad::Var apply(ad::Tape& tape, ad::Var x) const;
  void visit(const condense::MutableParamVisitor& f);
};

/// Clean and noise projections, both stored d x E so that logits = h W.
struct Router {
  Parameter w_clean;
  Parameter w_noise;
  int k = 1;

  int experts() const { return static_cast<int>(w_clean.value.cols()); }
  int dim() const { return static_cast<int>(w_clean.value.rows()); }
  /// Fan-in init scaled by `init_scale`.
  static Router make(const std::string& prefix, int dim, int experts, int k, Rng& rng,
                     double init_scale = 1.0);
  void visit(const condense::MutableParamVisitor& f);
};

/// Source of the standard-normal routing noise.
///  - random: fresh draws from a seeded stream on every call
///  - zero: epsilon = 0 (training-mode code path without noise)
///  - recording: random, and every draw is kept
///  - replay: returns the kept draws in order (after rewind())
class NoiseSource {
 public:
  enum class Mode { kRandom, kZero, kRecord, kReplay };

  static NoiseSource random(std::uint64_t seed) { return NoiseSource(Mode::kRandom, seed); }
  static NoiseSource zero() { return NoiseSource(Mode::kZero, 0); }
  static NoiseSource recording(std::uint64_t seed) { return NoiseSource(Mode::kRecord, seed); }

  Matrix draw(Eigen::Index rows, Eigen::Index cols);
  /// Switches a recording source to replay from the first draw.
  void rewind();
  Mode mode() const { return mode_; }

 private:
  NoiseSource(Mode mode, std::uint64_t seed) : mode_(mode), rng_(seed) {}

  Mode mode_;
  Rng rng_;
  std::vector<Matrix> records_;
  std::size_t cursor_ = 0;
};

struct GateDecision {
  RowVector logits;            // g, E entries
  RowVector noise;             // epsilon used (zeros in eval mode)
  std::vector<int> experts;    // k selected, by descending logit
  std::vector<double> weights; // aligned with `experts`
};

struct LoadStats {
  RowVector f_usage;  // share of (token, slot) dispatches
  RowVector p_mean;   // mean full-softmax probability
};

struct RouterLogits {
  ad::Var logits;     // N x E
  Matrix noise;       // epsilon, N x E (zeros in eval mode)
  Matrix noise_scale; // softplus(h W_n), empty in eval mode
};

/// g = h W_r + eps * softplus(h W_n) with `noise`, g = h W_r without it.
RouterLogits router_logits(ad::Tape& tape, ad::Var h, const Router& router, NoiseSource* noise);

/// k largest logits (ties to the lower index); weights are the softmax over
/// the selected logits only.
GateDecision topk_gate(std::span<const double> logits, int k);
std::vector<int> topk_indices(std::span<const double> logits, int k);

struct MoELayer {
  Router router;
  std::vector<ExpertFFN> experts;

  static MoELayer make(const std::string& prefix, int dim, int hidden, int experts, int k,
                       Rng& rng, double router_init_scale = 1.0);
  void visit(const condense::MutableParamVisitor& f);
};

struct MoEOutput {
  ad::Var output;  // N x d
  ad::Var aux;     // 1 x 1 load-balance loss
  LoadStats stats;
  std::vector<GateDecision> gates;
};

/// Routes each row of `h` to its top-k experts and mixes their outputs.
/// Experts only run on the rows dispatched to them. A null `noise` means
/// evaluation mode.
MoEOutput moe_forward(ad::Tape& tape, ad::Var h, const MoELayer& layer, NoiseSource* noise);
Matrix moe_forward(const Matrix& h, const MoELayer& layer, NoiseSource* noise,
                   LoadStats* stats = nullptr, std::vector<GateDecision>* gates = nullptr);

/// E * sum_e f_usage[e] * p_mean[e].
double load_balance_loss(const LoadStats& stats);

}  // namespace rrmoe::moe
