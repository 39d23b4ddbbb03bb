// Copyright 2026 The rrmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "rrmoe/moe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rrmoe/errors.hpp"

namespace rrmoe::moe {

using ad::Var;

ExpertFFN ExpertFFN::make(const std::string& prefix, int dim, int hidden, Rng& rng) {
  return {condense::fan_in_param(prefix + ".w1", dim, hidden, rng),
          condense::constant_param(prefix + ".b1", 1, hidden, 0.0),
          condense::fan_in_param(prefix + ".w2", hidden, dim, rng),
          condense::constant_param(prefix + ".b2", 1, dim, 0.0)};
}

Var ExpertFFN::apply(ad::Tape& tape, Var x) const {
  Var h = ad::gelu(ad::linear(x, tape.param(w1), tape.param(b1)));
  return ad::linear(h, tape.param(w2), tape.param(b2));
}

void ExpertFFN::visit(const condense::MutableParamVisitor& f) {
  for (Parameter* p : {&w1, &b1, &w2, &b2}) f(*p);
}

Router Router::make(const std::string& prefix, int dim, int experts, int k, Rng& rng,
                    double init_scale) {
  if (experts < 1) throw ConfigError("experts", "must be >= 1, got " + std::to_string(experts));
  if (k < 1 || k > experts) {
    throw ConfigError("top_k", "must be in [1, " + std::to_string(experts) + "], got " +
                                   std::to_string(k));
  }
  Router r;
  r.w_clean = condense::fan_in_param(prefix + ".w_clean", dim, experts, rng);
  r.w_noise = condense::fan_in_param(prefix + ".w_noise", dim, experts, rng);
  r.w_clean.value *= init_scale;
  r.w_noise.value *= init_scale;
  r.k = k;
  return r;
}

void Router::visit(const condense::MutableParamVisitor& f) {
  f(w_clean);
  f(w_noise);
}

// ---------------------------------------------------------------------------

Matrix NoiseSource::draw(Eigen::Index rows, Eigen::Index cols) {
  switch (mode_) {
    case Mode::kZero:
      return Matrix::Zero(rows, cols);
    case Mode::kReplay: {
      if (cursor_ >= records_.size()) throw std::logic_error("noise replay exhausted");
      const Matrix& m = records_[cursor_++];
      if (m.rows() != rows || m.cols() != cols) throw ShapeError("noise replay shape mismatch");
      return m;
    }
    case Mode::kRandom:
    case Mode::kRecord:
      break;
  }
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng_.normal();
  if (mode_ == Mode::kRecord) records_.push_back(m);
  return m;
}

void NoiseSource::rewind() {
  if (mode_ != Mode::kRecord && mode_ != Mode::kReplay) {
    throw std::logic_error("rewind on a non-recording noise source");
  }
  mode_ = Mode::kReplay;
  cursor_ = 0;
}

// ---------------------------------------------------------------------------

RouterLogits router_logits(ad::Tape& tape, Var h, const Router& router, NoiseSource* noise) {
  if (h.cols() != router.dim()) {
    throw ShapeError("router: expected " + std::to_string(router.dim()) + " input columns");
  }
  RouterLogits out;
  Var clean = ad::matmul(h, tape.param(router.w_clean));
  if (!noise) {
    out.logits = clean;
    out.noise = Matrix::Zero(h.rows(), router.experts());
    return out;
  }
  Var scale = ad::softplus(ad::matmul(h, tape.param(router.w_noise)));
  out.noise = noise->draw(h.rows(), router.experts());
  out.noise_scale = scale.value();
  out.logits = ad::add(clean, ad::hadamard(tape.constant(out.noise), scale));
  return out;
}

std::vector<int> topk_indices(std::span<const double> logits, int k) {
  const int e = static_cast<int>(logits.size());
  if (k < 1 || k > e) {
    throw ConfigError("top_k", "must be in [1, " + std::to_string(e) + "], got " + std::to_string(k));
  }
  std::vector<int> idx(e);
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
    return logits[a] > logits[b] || (logits[a] == logits[b] && a < b);
  });
  idx.resize(k);
  return idx;
}

GateDecision topk_gate(std::span<const double> logits, int k) {
  GateDecision g;
  g.logits = Eigen::Map<const RowVector>(logits.data(), static_cast<Eigen::Index>(logits.size()));
  g.noise = RowVector::Zero(g.logits.size());
  g.experts = topk_indices(logits, k);
  const double top = logits[g.experts[0]];
  double sum = 0.0;
  for (int e : g.experts) {
    g.weights.push_back(std::exp(logits[e] - top));
    sum += g.weights.back();
  }
  for (double& w : g.weights) w /= sum;
  return g;
}

// ---------------------------------------------------------------------------

MoELayer MoELayer::make(const std::string& prefix, int dim, int hidden, int experts, int k,
                        Rng& rng, double router_init_scale) {
  MoELayer l;
  l.router = Router::make(prefix + ".router", dim, experts, k, rng, router_init_scale);
  for (int e = 0; e < experts; ++e) {
    l.experts.push_back(ExpertFFN::make(prefix + ".expert" + std::to_string(e), dim, hidden, rng));
  }
  return l;
}

void MoELayer::visit(const condense::MutableParamVisitor& f) {
  router.visit(f);
  for (auto& e : experts) e.visit(f);
}

MoEOutput moe_forward(ad::Tape& tape, Var h, const MoELayer& layer, NoiseSource* noise) {
  const int n_exp = layer.router.experts();
  const int k = layer.router.k;
  if (layer.experts.empty() || static_cast<int>(layer.experts.size()) != n_exp) {
    throw ShapeError("moe: router expects " + std::to_string(n_exp) + " experts, layer has " +
                     std::to_string(layer.experts.size()));
  }
  const Eigen::Index n = h.rows();
  if (n < 1) throw ShapeError("moe: empty token batch");

  RouterLogits rl = router_logits(tape, h, layer.router, noise);
  const Matrix& g = rl.logits.value();

  MoEOutput out;
  std::vector<std::vector<int>> selected(n);
  std::vector<std::vector<int>> routed(n_exp);
  RowVector counts = RowVector::Zero(n_exp);
  for (Eigen::Index i = 0; i < n; ++i) {
    selected[i] = topk_indices(std::span<const double>(g.row(i).data(), n_exp), k);
    for (int e : selected[i]) {
      routed[e].push_back(static_cast<int>(i));
      counts(e) += 1.0;
    }
  }

  Var weights = ad::sparse_softmax_rows(rl.logits, selected);
  Var p_mean = ad::mean_rows(ad::softmax_rows(rl.logits));
  out.stats.f_usage = counts / static_cast<double>(n * k);
  out.stats.p_mean = p_mean.value().row(0);
  out.aux = ad::scale(ad::dot_const(p_mean, out.stats.f_usage), static_cast<double>(n_exp));

  out.gates.resize(n);
  const Matrix& wv = weights.value();
  for (Eigen::Index i = 0; i < n; ++i) {
    GateDecision& gd = out.gates[i];
    gd.logits = g.row(i);
    gd.noise = rl.noise.row(i);
    gd.experts = selected[i];
    for (int e : selected[i]) gd.weights.push_back(wv(i, e));
  }

  if (n_exp == 1) {
    // Single expert: its weight is exactly 1, so skip the mixing arithmetic.
    out.output = layer.experts[0].apply(tape, h);
    return out;
  }
  Var acc;
  for (int e = 0; e < n_exp; ++e) {
    if (routed[e].empty()) continue;
    const std::vector<int>& rows = routed[e];
    Var y = layer.experts[e].apply(tape, ad::gather_rows(h, rows));
    Var w = ad::gather_rows(ad::slice_cols(weights, e, 1), rows);
    Var contrib = ad::scatter_rows(ad::mul_col(y, w), rows, n);
    acc = acc.valid() ? ad::add(acc, contrib) : contrib;
  }
  out.output = acc;
  return out;
}

Matrix moe_forward(const Matrix& h, const MoELayer& layer, NoiseSource* noise, LoadStats* stats,
                   std::vector<GateDecision>* gates) {
  ad::Tape tape(false);
  MoEOutput out = moe_forward(tape, tape.constant(h), layer, noise);
  if (stats) *stats = out.stats;
  if (gates) *gates = std::move(out.gates);
  return out.output.value();
}

double load_balance_loss(const LoadStats& stats) {
  if (stats.f_usage.size() != stats.p_mean.size() || stats.f_usage.size() == 0) {
    throw ShapeError("load_balance_loss: f_usage and p_mean must have E > 0 matching entries");
  }
  return static_cast<double>(stats.f_usage.size()) * stats.f_usage.dot(stats.p_mean);
}

}  // namespace rrmoe::moe
