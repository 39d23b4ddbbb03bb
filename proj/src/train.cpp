// Copyright 2026 The rrmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "rrmoe/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "rrmoe/binio.hpp"
#include "rrmoe/config.hpp"
#include "rrmoe/errors.hpp"

namespace rrmoe::train {

namespace {

constexpr const char* kCheckpointMagic = "RRMCKPT1";
constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<Matrix> snapshot(const model::Model& model) {
  std::vector<Matrix> out;
  for (const Parameter* p : model.parameters()) out.push_back(p->value);
  return out;
}

void restore(model::Model& model, const std::vector<Matrix>& values) {
  auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs", "must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size", "must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("train.lr", "must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay", "must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("train.beta1", "must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train.beta2", "must be in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("train.eps", "must be > 0");
  if (!(target_nll >= 0.0)) throw ConfigError("train.target_nll", "must be >= 0");
  if (eval_every < 1) throw ConfigError("train.eval_every", "must be >= 1");
}

TrainConfig TrainConfig::from_config(const ConfigTree& t) {
  TrainConfig c;
  c.epochs = static_cast<int>(t.get_int("train.epochs", c.epochs));
  c.batch_size = static_cast<int>(t.get_int("train.batch_size", c.batch_size));
  c.lr = t.get_double("train.lr", c.lr);
  c.weight_decay = t.get_double("train.weight_decay", c.weight_decay);
  c.beta1 = t.get_double("train.beta1", c.beta1);
  c.beta2 = t.get_double("train.beta2", c.beta2);
  c.eps = t.get_double("train.eps", c.eps);
  c.target_nll = t.get_double("train.target_nll", c.target_nll);
  c.eval_every = static_cast<int>(t.get_int("train.eval_every", c.eval_every));
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

Adam::Adam(std::vector<Parameter*> params, const TrainConfig& config)
    : params_(std::move(params)), config_(config) {
  for (const Parameter* p : params_) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, t_);
  const double c2 = 1.0 - std::pow(config_.beta2, t_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    if (p.grad.size() == 0) p.zero_grad();
    const Matrix g = p.grad + config_.weight_decay * p.value;
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.cwiseProduct(g);
    p.value.array() -= config_.lr * (m_[i].array() / c1) /
                       ((v_[i].array() / c2).sqrt() + config_.eps);
  }
}

// ---------------------------------------------------------------------------

double evaluate_nll(const model::Model& model, const memory::MemoryBank& bank,
                    std::span<const TrainingCase> cases) {
  if (cases.empty()) throw DataError("evaluate_nll: no cases");
  double sum = 0.0;
  std::size_t tokens = 0;
  for (const TrainingCase& c : cases) {
    ad::Tape tape(false);
    model::CaseLoss loss = model::case_loss(tape, model, *c.patches, bank, c.report, {});
    const std::size_t n = c.report.size() + 1;
    sum += loss.nll.scalar() * static_cast<double>(n);
    tokens += n;
  }
  return sum / static_cast<double>(tokens);
}

TrainResult train(model::Model& model, const memory::MemoryBank& bank,
                  std::span<const TrainingCase> train_set, std::span<const TrainingCase> val_set,
                  const TrainConfig& config, const TrainCallbacks& callbacks) {
  config.validate();
  if (train_set.empty()) throw DataError("train: empty training split");
  const std::uint64_t seed = model.config().seed;
  Adam opt(model.parameters(), config);
  TrainResult result;
  std::vector<Matrix> best_weights;
  bool have_best = false;

  std::vector<int> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::int64_t step = 0;
  const auto t0 = std::chrono::steady_clock::now();

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng shuffle_rng(seed, "train.shuffle", {static_cast<std::uint64_t>(epoch)});
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());

    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      ++step;
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const double inv_b = 1.0 / static_cast<double>(end - start);
      model.zero_grad();
      StepRecord rec;
      rec.step = step;
      rec.epoch = epoch;
      rec.lr = config.lr;
      for (std::size_t b = start; b < end; ++b) {
        const TrainingCase& c = train_set[order[b]];
        const auto slot = static_cast<std::uint64_t>(b - start);
        moe::NoiseSource noise =
            moe::NoiseSource::random(derive_seed(seed, "train.noise", {static_cast<std::uint64_t>(step), slot}));
        Rng drop(seed, "train.dropout", {static_cast<std::uint64_t>(step), slot});
        model::ForwardMode mode{true, &noise, &drop};
        ad::Tape tape(true);
        model::CaseLoss loss = model::case_loss(tape, model, *c.patches, bank, c.report, mode);
        if (!std::isfinite(loss.total.scalar())) throw TrainingDiverged(step);
        tape.backward(ad::scale(loss.total, inv_b));
        rec.nll += loss.nll.scalar() * inv_b;
        rec.aux += loss.aux_mean.scalar() * inv_b;
        rec.total += loss.total.scalar() * inv_b;
        if (rec.f_usage.empty()) {
          for (const auto& s : loss.stats) {
            rec.f_usage.push_back(RowVector::Zero(s.f_usage.size()));
            rec.p_mean.push_back(RowVector::Zero(s.p_mean.size()));
          }
        }
        for (std::size_t l = 0; l < loss.stats.size(); ++l) {
          rec.f_usage[l] += loss.stats[l].f_usage * inv_b;
          rec.p_mean[l] += loss.stats[l].p_mean * inv_b;
        }
      }
      opt.step();
      rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      if (callbacks.on_step) callbacks.on_step(rec);
      result.steps.push_back(std::move(rec));
    }

    if (epoch % config.eval_every != 0 && epoch != config.epochs) continue;
    EpochRecord er;
    er.epoch = epoch;
    er.train_nll = evaluate_nll(model, bank, train_set);
    if (!val_set.empty()) er.val_nll = evaluate_nll(model, bank, val_set);
    if (!std::isfinite(er.train_nll)) throw TrainingDiverged(step);
    const double monitored = er.val_nll.value_or(er.train_nll);
    if (!have_best || monitored < result.best_nll) {
      have_best = true;
      result.best_nll = monitored;
      result.best_epoch = epoch;
      best_weights = snapshot(model);
      er.best = true;
    }
    if (callbacks.on_epoch) callbacks.on_epoch(er);
    result.epochs.push_back(er);
    if (config.target_nll > 0.0 && monitored < config.target_nll) {
      result.reached_target = true;
      break;
    }
  }
  restore(model, best_weights);
  return result;
}

// ---------------------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const model::Model& model,
                     const ConfigTree& config) {
  binio::Writer w;
  w.magic(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.str(config.canonical());
  w.u64(config.hash());
  w.u32(static_cast<std::uint32_t>(model.config().vocab_size));
  w.u32(static_cast<std::uint32_t>(model.config().input_dim));
  const auto params = model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    w.str(p->name);
    w.u32(static_cast<std::uint32_t>(p->value.rows()));
    w.u32(static_cast<std::uint32_t>(p->value.cols()));
    for (Eigen::Index i = 0; i < p->value.size(); ++i) w.f64(p->value.data()[i]);
  }
  w.save(path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  auto r = binio::Reader::open(path);
  r.expect_magic(kCheckpointMagic);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw DataError(r.source() + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint c;
  c.config_text = r.str();
  c.config_hash = r.u64();
  c.vocab_size = static_cast<int>(r.u32());
  c.input_dim = static_cast<int>(r.u32());
  const std::uint32_t n = r.u32();
  for (std::uint32_t k = 0; k < n; ++k) {
    std::string name = r.str();
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.f64();
    c.tensors.emplace_back(std::move(name), std::move(m));
  }
  if (!r.at_end()) throw DataError(r.source() + ": trailing bytes");
  if (ConfigTree::parse(c.config_text).hash() != c.config_hash) {
    throw DataError(r.source() + ": config snapshot does not match its hash");
  }
  return c;
}

void load_weights(model::Model& model, const Checkpoint& checkpoint) {
  for (Parameter* p : model.parameters()) {
    auto it = std::find_if(checkpoint.tensors.begin(), checkpoint.tensors.end(),
                           [&](const auto& t) { return t.first == p->name; });
    if (it == checkpoint.tensors.end()) throw DataError("checkpoint lacks tensor '" + p->name + "'");
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols()) {
      throw ShapeError("checkpoint tensor '" + p->name + "' has the wrong shape");
    }
    p->value = it->second;
  }
  if (checkpoint.tensors.size() != model.parameters().size()) {
    throw DataError("checkpoint has tensors the model does not use");
  }
}

}  // namespace rrmoe::train
