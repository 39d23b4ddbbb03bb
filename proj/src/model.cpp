// Copyright 2026 The rrmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "rrmoe/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "rrmoe/config.hpp"
#include "rrmoe/errors.hpp"

namespace rrmoe::model {

using ad::Var;
using condense::AttentionParams;
using condense::LayerNormParams;

namespace {

constexpr int kTokenTypes = 4;

Parameter normal_param(std::string name, int rows, int cols, double stddev, Rng& rng) {
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.normal(0.0, stddev);
  return Parameter{std::move(name), std::move(m), Matrix()};
}

Matrix sinusoidal_table(int positions, int dim) {
  Matrix pe(positions, dim);
  for (int p = 0; p < positions; ++p) {
    for (int i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / dim);
      pe(p, i) = (i % 2 == 0) ? std::sin(p * rate) : std::cos(p * rate);
    }
  }
  return pe;
}

/// Inverted dropout with a mask drawn from `rng`; identity outside training.
Var dropout(ad::Tape& tape, Var x, double p, const ForwardMode& mode) {
  if (!mode.training || p <= 0.0) return x;
  if (!mode.dropout) throw std::logic_error("training with dropout needs a mask stream");
  Matrix mask(x.rows(), x.cols());
  const double keep = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < mask.rows(); ++i)
    for (Eigen::Index j = 0; j < mask.cols(); ++j) mask(i, j) = mode.dropout->uniform() < p ? 0.0 : keep;
  return ad::hadamard(x, tape.constant(std::move(mask)));
}

RowVector log_softmax(const RowVector& z) {
  const double m = z.maxCoeff();
  const double lse = m + std::log((z.array() - m).exp().sum());
  return (z.array() - lse).matrix();
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void ModelConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& what) {
    throw ConfigError("model." + key, what);
  };
  if (dim < 1) fail("dim", "must be >= 1");
  if (heads < 1 || dim % heads != 0) {
    fail("heads", "must divide model.dim (" + std::to_string(dim) + "), got " + std::to_string(heads));
  }
  if (enc_layers < 0) fail("enc_layers", "must be >= 0");
  if (dec_layers < 1) fail("dec_layers", "must be >= 1");
  if (experts < 1) fail("experts", "must be >= 1, got " + std::to_string(experts));
  if (top_k < 1 || top_k > experts) {
    fail("top_k", "must be in [1, model.experts=" + std::to_string(experts) + "], got " +
                      std::to_string(top_k));
  }
  if (ffn_dim < 1) fail("ffn_dim", "must be >= 1");
  if (vocab_size <= corpus::kNumReserved) fail("vocab_size", "must exceed the reserved tokens");
  if (input_dim < 1) fail("input_dim", "must be >= 1");
  if (max_len < 2) fail("max_len", "must be >= 2");
  if (!(aux_weight >= 0.0) || !std::isfinite(aux_weight)) fail("aux_weight", "must be >= 0");
  if (recall_size < 1) fail("recall_size", "must be >= 1");
  if (final_topk < 1 || final_topk > recall_size) {
    fail("final_topk", "must be in [1, model.recall_size=" + std::to_string(recall_size) + "]");
  }
  if (!(patch_ratio > 0.0 && patch_ratio <= 1.0)) fail("patch_ratio", "must be in (0, 1]");
  if (group_size < 1) fail("group_size", "must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout", "must be in [0, 1)");
  if (reranker_hidden < 0) fail("reranker_hidden", "must be >= 0");
  if (!(router_init_scale > 0.0)) fail("router_init_scale", "must be > 0");
}

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.group_size = 4;
  return c;
}

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.dim = 512;
  c.ffn_dim = 2048;
  c.max_len = 128;
  c.group_size = 20;
  return c;
}

ModelConfig ModelConfig::from_config(const ConfigTree& t, int vocab_size, int input_dim) {
  const std::string profile = t.get_string("profile", "desk");
  ModelConfig c;
  if (profile == "desk") {
    c = desk();
  } else if (profile == "paper") {
    c = paper();
  } else {
    throw ConfigError("profile", "expected 'desk' or 'paper', got '" + profile + "'");
  }
  auto gi = [&](const char* key, int fallback) {
    return static_cast<int>(t.get_int(std::string("model.") + key, fallback));
  };
  auto gd = [&](const char* key, double fallback) {
    return t.get_double(std::string("model.") + key, fallback);
  };
  auto gb = [&](const char* key, bool fallback) {
    return t.get_bool(std::string("model.") + key, fallback);
  };
  c.dim = gi("dim", c.dim);
  c.heads = gi("heads", c.heads);
  c.enc_layers = gi("enc_layers", c.enc_layers);
  c.dec_layers = gi("dec_layers", c.dec_layers);
  c.experts = gi("experts", c.experts);
  c.top_k = gi("top_k", c.top_k);
  c.ffn_dim = gi("ffn_dim", c.ffn_dim);
  c.max_len = gi("max_len", c.max_len);
  c.aux_weight = gd("aux_weight", c.aux_weight);
  c.recall_size = gi("recall_size", c.recall_size);
  c.final_topk = gi("final_topk", c.final_topk);
  c.patch_ratio = gd("patch_ratio", c.patch_ratio);
  c.group_size = gi("group_size", c.group_size);
  c.dropout = gd("dropout", c.dropout);
  c.reranker_hidden = gi("reranker_hidden", c.reranker_hidden);
  c.router_init_scale = gd("router_init_scale", c.router_init_scale);
  c.use_reranker = gb("use_reranker", c.use_reranker);
  c.use_moe = gb("use_moe", c.use_moe);
  c.noisy_routing = gb("noisy_routing", c.noisy_routing);
  c.load_balance = gb("load_balance", c.load_balance);
  c.seed = static_cast<std::uint64_t>(t.get_int("seed", static_cast<std::int64_t>(c.seed)));
  c.vocab_size = vocab_size;
  c.input_dim = input_dim;
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Model

Model::Model(const ModelConfig& config) : config_(config) {
  config_.validate();
  // One init stream per component, so toggling a module leaves the others'
  // initial weights unchanged.
  auto stream = [&](const std::string& label) { return Rng(config_.seed, "model.init." + label); };
  const int d = config_.dim;
  const int din = config_.input_dim;
  Rng rng = stream("input");
  in_w = condense::fan_in_param("input.w", din, d, rng);
  in_b = condense::constant_param("input.b", 1, d, 0.0);
  for (int l = 0; l < config_.enc_layers; ++l) {
    const std::string p = "enc" + std::to_string(l);
    rng = stream(p);
    encoder.push_back({LayerNormParams::make(p + ".ln_attn", d),
                       AttentionParams::make(p + ".attn", d, config_.heads, rng),
                       condense::FeedForward::make(p + ".ffn", d, config_.ffn_dim, rng)});
  }
  enc_norm = LayerNormParams::make("enc_norm", d);
  rng = stream("visual_tc");
  visual_tc = condense::TCLayer::make("visual_tc", d, config_.heads, config_.ffn_dim, rng);
  if (config_.use_reranker) {
    const int hidden = config_.reranker_hidden > 0 ? config_.reranker_hidden : din;
    rng = stream("reranker");
    reranker = memory::Reranker::make("reranker", din, hidden, rng);
  }
  rng = stream("text");
  text_w = condense::fan_in_param("text.w", din, d, rng);
  text_b = condense::constant_param("text.b", 1, d, 0.0);
  text_tc = condense::TCLayer::make("text_tc", d, config_.heads, config_.ffn_dim, rng);
  rng = stream("embeddings");
  type_emb = normal_param("type_emb", kTokenTypes, d, 0.1, rng);
  tok_emb = normal_param("tok_emb", config_.vocab_size, d, 1.0, rng);
  for (int l = 0; l < config_.dec_layers; ++l) {
    const std::string p = "dec" + std::to_string(l);
    rng = stream(p);
    DecoderLayer layer;
    layer.ln_self = LayerNormParams::make(p + ".ln_self", d);
    layer.self_attn = AttentionParams::make(p + ".self_attn", d, config_.heads, rng);
    layer.ln_cross = LayerNormParams::make(p + ".ln_cross", d);
    layer.cross_attn = AttentionParams::make(p + ".cross_attn", d, config_.heads, rng);
    layer.ln_ffn = LayerNormParams::make(p + ".ln_ffn", d);
    if (config_.use_moe) {
      layer.moe = moe::MoELayer::make(p + ".moe", d, config_.ffn_dim, config_.experts, config_.top_k,
                                      rng, config_.router_init_scale);
    } else {
      layer.dense = moe::ExpertFFN::make(p + ".ffn", d, config_.ffn_dim, rng);
    }
    decoder.push_back(std::move(layer));
  }
  dec_norm = LayerNormParams::make("dec_norm", d);
  rng = stream("output");
  out_w = condense::fan_in_param("output.w", d, config_.vocab_size, rng);
  out_b = condense::constant_param("output.b", 1, config_.vocab_size, 0.0);
  positions_ = sinusoidal_table(config_.max_len, d);
}

void Model::visit(const condense::MutableParamVisitor& f) {
  f(in_w);
  f(in_b);
  for (auto& l : encoder) {
    l.ln_attn.visit(f);
    l.attn.visit(f);
    l.ffn.visit(f);
  }
  enc_norm.visit(f);
  visual_tc.visit(f);
  if (reranker) reranker->visit(f);
  f(text_w);
  f(text_b);
  text_tc.visit(f);
  f(type_emb);
  f(tok_emb);
  for (auto& l : decoder) {
    l.ln_self.visit(f);
    l.self_attn.visit(f);
    l.ln_cross.visit(f);
    l.cross_attn.visit(f);
    l.ln_ffn.visit(f);
    if (l.moe) l.moe->visit(f);
    if (l.dense) l.dense->visit(f);
  }
  dec_norm.visit(f);
  f(out_w);
  f(out_b);
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out;
  visit([&](Parameter& p) { out.push_back(&p); });
  return out;
}

std::vector<const Parameter*> Model::parameters() const {
  std::vector<const Parameter*> out;
  for (Parameter* p : const_cast<Model*>(this)->parameters()) out.push_back(p);
  return out;
}

Parameter& Model::parameter(const std::string& name) {
  for (Parameter* p : parameters()) {
    if (p->name == name) return *p;
  }
  throw Error("no parameter named '" + name + "'");
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += static_cast<std::size_t>(p->value.size());
  return n;
}

void Model::zero_grad() const {
  for (const Parameter* p : parameters()) p->zero_grad();
}

EncoderState Model::encode(ad::Tape& tape, const Matrix& patches, const memory::MemoryBank& bank,
                           const ForwardMode& mode) const {
  if (patches.rows() < 1) throw ShapeError("encode: empty patch set");
  if (patches.cols() != config_.input_dim) {
    throw ShapeError("encode: patches have " + std::to_string(patches.cols()) +
                     " columns, model expects " + std::to_string(config_.input_dim));
  }
  if (bank.dim() != config_.input_dim) {
    throw ShapeError("encode: bank dimension " + std::to_string(bank.dim()) +
                     " != patch dimension " + std::to_string(config_.input_dim));
  }
  const double p = config_.dropout;
  EncoderState st;

  Var x = ad::linear(tape.constant(patches), tape.param(in_w), tape.param(in_b));
  for (const EncoderLayer& l : encoder) {
    Var u = l.ln_attn.apply(tape, x);
    x = ad::add(x, dropout(tape, condense::attend(tape, u, u, u, l.attn), p, mode));
    x = ad::add(x, dropout(tape, l.ffn.apply(tape, x), p, mode));
  }
  Var enc = enc_norm.apply(tape, x);

  condense::CondenseOutput zv = condense::condense(tape, visual_tc, enc);
  st.visual_attention = zv.trace.mean_weights(0);

  // Salient patches are picked by the visual condensation attention; regions
  // pool the raw patch embeddings so they live in the bank's space.
  st.salient = memory::select_salient_patches(
      std::span<const double>(st.visual_attention.data(), st.visual_attention.size()),
      config_.patch_ratio);
  Matrix selected(static_cast<Eigen::Index>(st.salient.size()), patches.cols());
  for (std::size_t i = 0; i < st.salient.size(); ++i) {
    selected.row(static_cast<Eigen::Index>(i)) = patches.row(st.salient[i]);
  }
  st.regions = memory::pool_regions(selected, config_.group_size, st.salient);
  const int recall = std::min(config_.recall_size, bank.size());
  const int topk = std::min(config_.final_topk, recall);
  Var retrieved = memory::retrieve(tape, st.regions, bank, recall, topk,
                                   reranker ? &*reranker : nullptr, &st.retrieval);
  Var regions_text = ad::linear(retrieved, tape.param(text_w), tape.param(text_b));
  condense::CondenseOutput zt = condense::condense(tape, text_tc, regions_text);

  const Var parts[] = {enc, zv.z, zt.z, regions_text};
  Var fused = ad::concat_rows(parts);
  const Eigen::Index n = patches.rows();
  Matrix onehot = Matrix::Zero(fused.rows(), kTokenTypes);
  for (Eigen::Index i = 0; i < fused.rows(); ++i) {
    TokenType t = i < n            ? TokenType::kVisual
                  : i == n         ? TokenType::kVisualSummary
                  : i == n + 1     ? TokenType::kTextSummary
                                   : TokenType::kRegionText;
    st.types.push_back(t);
    onehot(i, static_cast<int>(t)) = 1.0;
  }
  st.memory = ad::add(fused, ad::matmul(tape.constant(std::move(onehot)), tape.param(type_emb)));
  return st;
}

DecoderOutput Model::decode(ad::Tape& tape, Var memory, std::span<const int> prefix,
                            const ForwardMode& mode) const {
  const int t_len = static_cast<int>(prefix.size());
  if (t_len < 1) throw ShapeError("decode: empty prefix");
  if (t_len > config_.max_len) {
    throw ShapeError("decode: prefix of " + std::to_string(t_len) + " tokens exceeds max_len " +
                     std::to_string(config_.max_len));
  }
  for (int tok : prefix) {
    if (tok < 0 || tok >= config_.vocab_size) {
      throw DataError("decode: token id " + std::to_string(tok) + " outside the vocabulary");
    }
  }
  if (memory.cols() != config_.dim) throw ShapeError("decode: memory width != model.dim");
  const double p = config_.dropout;
  DecoderOutput out;

  Var x = ad::add(ad::gather_rows(tape.param(tok_emb), prefix),
                  tape.constant(positions_.topRows(t_len)));
  moe::NoiseSource* noise = mode.training && config_.noisy_routing ? mode.noise : nullptr;
  if (mode.training && config_.noisy_routing && config_.use_moe && !noise) {
    throw std::logic_error("training with noisy routing needs a noise source");
  }
  for (const DecoderLayer& l : decoder) {
    Var u = l.ln_self.apply(tape, x);
    x = ad::add(x, dropout(tape, condense::attend(tape, u, u, u, l.self_attn, true), p, mode));
    Var c = l.ln_cross.apply(tape, x);
    x = ad::add(x, dropout(tape, condense::attend(tape, c, memory, memory, l.cross_attn), p, mode));
    Var f = l.ln_ffn.apply(tape, x);
    if (l.moe) {
      moe::MoEOutput mo = moe::moe_forward(tape, f, *l.moe, noise);
      x = ad::add(x, dropout(tape, mo.output, p, mode));
      out.aux.push_back(mo.aux);
      out.stats.push_back(std::move(mo.stats));
      out.gates.push_back(std::move(mo.gates));
    } else {
      x = ad::add(x, dropout(tape, l.dense->apply(tape, f), p, mode));
    }
  }
  out.logits = ad::linear(dec_norm.apply(tape, x), tape.param(out_w), tape.param(out_b));
  return out;
}

// ---------------------------------------------------------------------------
// Losses

Var nll_loss(Var logits, std::span<const int> targets) {
  return ad::cross_entropy(logits, targets, corpus::kPad);
}

double nll_loss(const Matrix& logits, std::span<const int> targets) {
  if (static_cast<Eigen::Index>(targets.size()) != logits.rows()) {
    throw ShapeError("nll_loss: one target per logit row required");
  }
  double sum = 0.0;
  int count = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    if (targets[i] == corpus::kPad) continue;
    sum -= log_softmax(logits.row(i))(targets[i]);
    ++count;
  }
  if (count == 0) throw Error("nll_loss: every target is padding");
  return sum / count;
}

Var total_loss(Var nll, std::span<const Var> aux, double lambda) {
  if (lambda < 0.0) throw ConfigError("model.aux_weight", "must be >= 0");
  if (aux.empty()) return nll;
  Var sum = aux[0];
  for (std::size_t i = 1; i < aux.size(); ++i) sum = ad::add(sum, aux[i]);
  return ad::add(nll, ad::scale(sum, lambda / static_cast<double>(aux.size())));
}

double total_loss(double nll, std::span<const double> aux, double lambda) {
  if (lambda < 0.0) throw ConfigError("model.aux_weight", "must be >= 0");
  if (aux.empty()) return nll;
  double sum = 0.0;
  for (double a : aux) sum += a;
  return nll + sum * (lambda / static_cast<double>(aux.size()));
}

TeacherForcing teacher_forcing(std::span<const int> report) {
  TeacherForcing tf;
  tf.inputs.push_back(corpus::kBos);
  tf.inputs.insert(tf.inputs.end(), report.begin(), report.end());
  tf.targets.assign(report.begin(), report.end());
  tf.targets.push_back(corpus::kEos);
  return tf;
}

CaseLoss case_loss(ad::Tape& tape, const Model& model, const Matrix& patches,
                   const memory::MemoryBank& bank, std::span<const int> report,
                   const ForwardMode& mode) {
  TeacherForcing tf = teacher_forcing(report);
  EncoderState st = model.encode(tape, patches, bank, mode);
  DecoderOutput dec = model.decode(tape, st.memory, tf.inputs, mode);
  CaseLoss out;
  out.nll = nll_loss(dec.logits, tf.targets);
  out.total = total_loss(out.nll, dec.aux, model.config().effective_aux_weight());
  if (dec.aux.empty()) {
    out.aux_mean = tape.constant(Matrix::Zero(1, 1));
  } else {
    out.aux_mean = total_loss(tape.constant(Matrix::Zero(1, 1)), dec.aux, 1.0);
  }
  out.stats = std::move(dec.stats);
  return out;
}

// ---------------------------------------------------------------------------
// Decoding

namespace {

bool lex_less(const std::vector<int>& a, const std::vector<int>& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

double rank_score(const Hypothesis& h, bool length_norm) {
  return length_norm ? h.score / static_cast<double>(std::max<std::size_t>(1, h.tokens.size()))
                     : h.score;
}

}  // namespace

Hypothesis greedy_search(const StepScorer& scorer, int eos, int max_len) {
  if (max_len < 1) throw ConfigError("decode.max_len", "must be >= 1");
  Hypothesis h;
  while (static_cast<int>(h.tokens.size()) < max_len) {
    RowVector lp = scorer(h.tokens);
    Eigen::Index best = 0;
    for (Eigen::Index v = 1; v < lp.size(); ++v) {
      if (lp(v) > lp(best)) best = v;
    }
    h.tokens.push_back(static_cast<int>(best));
    h.score += lp(best);
    if (best == eos) {
      h.finished = true;
      break;
    }
  }
  return h;
}

Hypothesis beam_search(const StepScorer& scorer, int eos, int beam, int max_len,
                       bool length_norm) {
  if (beam < 1) throw ConfigError("decode.beam", "must be >= 1");
  if (max_len < 1) throw ConfigError("decode.max_len", "must be >= 1");
  std::vector<Hypothesis> live{Hypothesis{}};
  std::vector<Hypothesis> finished;
  auto better = [](const Hypothesis& a, const Hypothesis& b) {
    return a.score > b.score || (a.score == b.score && lex_less(a.tokens, b.tokens));
  };

  for (int step = 0; step < max_len && !live.empty(); ++step) {
    std::vector<Hypothesis> expansions;
    for (const Hypothesis& h : live) {
      RowVector lp = scorer(h.tokens);
      for (Eigen::Index v = 0; v < lp.size(); ++v) {
        if (!std::isfinite(lp(v))) continue;
        Hypothesis e = h;
        e.tokens.push_back(static_cast<int>(v));
        e.score += lp(v);
        e.finished = v == eos;
        expansions.push_back(std::move(e));
      }
    }
    const std::size_t keep = std::min<std::size_t>(beam, expansions.size());
    std::partial_sort(expansions.begin(), expansions.begin() + keep, expansions.end(), better);
    live.clear();
    for (std::size_t i = 0; i < keep; ++i) {
      (expansions[i].finished ? finished : live).push_back(std::move(expansions[i]));
    }
    // Raw scores only decrease, so no live hypothesis can overtake a better
    // finished one.
    if (!length_norm && !finished.empty() && !live.empty()) {
      double best_done = -std::numeric_limits<double>::infinity();
      for (const auto& f : finished) best_done = std::max(best_done, f.score);
      if (best_done >= live.front().score) break;
    }
  }
  for (Hypothesis& h : live) finished.push_back(std::move(h));

  const Hypothesis* best = nullptr;
  for (const Hypothesis& h : finished) {
    if (!best) {
      best = &h;
      continue;
    }
    const double sh = rank_score(h, length_norm);
    const double sb = rank_score(*best, length_norm);
    if (sh > sb || (sh == sb && lex_less(h.tokens, best->tokens))) best = &h;
  }
  return best ? *best : Hypothesis{};
}

StepScorer model_scorer(const Model& model, const Matrix& patches, const memory::MemoryBank& bank) {
  auto memory = std::make_shared<Matrix>();
  {
    ad::Tape tape(false);
    *memory = model.encode(tape, patches, bank, ForwardMode{}).memory.value();
  }
  return [&model, memory](std::span<const int> generated) {
    std::vector<int> prefix{corpus::kBos};
    prefix.insert(prefix.end(), generated.begin(), generated.end());
    ad::Tape tape(false);
    DecoderOutput out = model.decode(tape, tape.constant(*memory), prefix, ForwardMode{});
    const Matrix& logits = out.logits.value();
    return log_softmax(logits.row(logits.rows() - 1));
  };
}

corpus::ReportSequence strip_eos(const Hypothesis& h, int eos) {
  corpus::ReportSequence r;
  for (int t : h.tokens) {
    if (t == eos) break;
    r.tokens.push_back(t);
  }
  return r;
}

corpus::ReportSequence greedy_decode(const Model& model, const Matrix& patches,
                                     const memory::MemoryBank& bank, int max_len) {
  return strip_eos(greedy_search(model_scorer(model, patches, bank), corpus::kEos, max_len));
}

corpus::ReportSequence beam_decode(const Model& model, const Matrix& patches,
                                   const memory::MemoryBank& bank, int beam, int max_len,
                                   bool length_norm) {
  return strip_eos(
      beam_search(model_scorer(model, patches, bank), corpus::kEos, beam, max_len, length_norm));
}

}  // namespace rrmoe::model
