// Copyright 2026 The rrmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "rrmoe/train.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <iterator>
#include <map>

#include "rrmoe/config.hpp"
#include "rrmoe/errors.hpp"
#include "test_util.hpp"

namespace rrmoe::train {
namespace {

using testing::random_matrix;

model::ModelConfig tiny_model() {
  model::ModelConfig c;
  c.dim = 8;
  c.heads = 2;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.experts = 2;
  c.top_k = 1;
  c.ffn_dim = 16;
  c.vocab_size = 9;
  c.input_dim = 6;
  c.max_len = 8;
  c.recall_size = 4;
  c.final_topk = 2;
  c.patch_ratio = 0.5;
  c.group_size = 2;
  c.dropout = 0.0;
  c.seed = 5;
  return c;
}

struct Fixture {
  std::vector<Matrix> patches;
  std::vector<TrainingCase> cases;
  memory::MemoryBank bank;
};

Fixture make_fixture(int n, Rng& rng) {
  std::vector<std::string> s;
  for (int i = 0; i < 8; ++i) s.push_back("s" + std::to_string(i));
  Fixture f{{}, {}, memory::MemoryBank(std::move(s), random_matrix(8, 6, rng))};
  for (int i = 0; i < n; ++i) f.patches.push_back(random_matrix(5, 6, rng));
  for (int i = 0; i < n; ++i) {
    TrainingCase c;
    c.id = "c" + std::to_string(i);
    c.patches = &f.patches[i];
    for (int t = 0; t < 4; ++t) c.report.push_back(3 + (i + t) % 6);
    f.cases.push_back(std::move(c));
  }
  return f;
}

TEST(Train, ConfigValidationNamesKeys) {
  EXPECT_NO_THROW(TrainConfig{}.validate());
  try {
    TrainConfig::from_config(ConfigTree::parse("train.batch_size = 0\n"));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("train.batch_size"), std::string::npos);
  }
  EXPECT_THROW(TrainConfig::from_config(ConfigTree::parse("train.lr = 0\n")), ConfigError);
  EXPECT_THROW(TrainConfig::from_config(ConfigTree::parse("train.beta2 = 1\n")), ConfigError);
  EXPECT_EQ(TrainConfig::from_config(ConfigTree::parse("train.epochs = 7\n")).epochs, 7);
}

TEST(Train, AdamMatchesScalarOracle) {
  Rng rng(1);
  Parameter p = testing::random_param("p", 2, 3, rng);
  TrainConfig c;
  c.lr = 0.05;
  c.weight_decay = 0.01;
  Adam opt({&p}, c);
  Matrix x = p.value, m = Matrix::Zero(2, 3), v = Matrix::Zero(2, 3);
  for (int t = 1; t <= 5; ++t) {
    const Matrix grad = random_matrix(2, 3, rng);
    p.grad = grad;
    opt.step();
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double g = grad.data()[i] + c.weight_decay * x.data()[i];
      m.data()[i] = c.beta1 * m.data()[i] + (1 - c.beta1) * g;
      v.data()[i] = c.beta2 * v.data()[i] + (1 - c.beta2) * g * g;
      const double mh = m.data()[i] / (1 - std::pow(c.beta1, t));
      const double vh = v.data()[i] / (1 - std::pow(c.beta2, t));
      x.data()[i] -= c.lr * mh / (std::sqrt(vh) + c.eps);
    }
    EXPECT_LT((p.value - x).cwiseAbs().maxCoeff(), 1e-14);
  }
  EXPECT_EQ(opt.steps(), 5);
}

TEST(Train, OneStepMovesRerankerAndRouter) {
  Rng rng(6);
  const Fixture f = make_fixture(2, rng);
  model::ModelConfig cfg = tiny_model();
  cfg.experts = 3;
  cfg.top_k = 2;
  model::Model m(cfg);
  std::map<std::string, Matrix> before;
  for (const Parameter* p : m.parameters()) before[p->name] = p->value;
  moe::NoiseSource noise = moe::NoiseSource::random(1);
  m.zero_grad();
  {
    ad::Tape t;
    const model::CaseLoss l = model::case_loss(t, m, *f.cases[0].patches, f.bank, f.cases[0].report,
                                               {true, &noise, nullptr});
    t.backward(l.total);
  }
  TrainConfig c;
  c.lr = 1e-3;
  Adam(m.parameters(), c).step();
  double reranker = 0, router = 0;
  for (const Parameter* p : m.parameters()) {
    const double delta = (p->value - before[p->name]).norm();
    if (p->name.find("reranker") != std::string::npos) reranker += delta;
    if (p->name.find("router") != std::string::npos) router += delta;
  }
  EXPECT_GT(reranker, 0.0);
  EXPECT_GT(router, 0.0);
}

TEST(Train, TrainingLowersLossAndIsDeterministic) {
  Rng rng(2);
  const Fixture f = make_fixture(6, rng);
  TrainConfig c;
  c.lr = 3e-3;
  c.epochs = 15;
  c.batch_size = 2;
  model::Model a(tiny_model()), b(tiny_model());
  const double before = evaluate_nll(a, f.bank, f.cases);
  const TrainResult ra = train(a, f.bank, f.cases, {}, c);
  const TrainResult rb = train(b, f.bank, f.cases, {}, c);
  EXPECT_LT(ra.best_nll, before);
  EXPECT_NEAR(evaluate_nll(a, f.bank, f.cases), ra.best_nll, 1e-12);
  ASSERT_EQ(ra.steps.size(), rb.steps.size());
  EXPECT_EQ(ra.steps.size(), 45u);
  for (std::size_t i = 0; i < ra.steps.size(); ++i) EXPECT_EQ(ra.steps[i].total, rb.steps[i].total);
  for (const auto& s : ra.steps) {
    ASSERT_EQ(s.f_usage.size(), 1u);
    EXPECT_NEAR(s.f_usage[0].sum(), 1.0, 1e-9);
    EXPECT_NEAR(s.p_mean[0].sum(), 1.0, 1e-9);
  }
  int best = 0;
  for (const auto& e : ra.epochs) best += e.best;
  EXPECT_GE(best, 1);
}

TEST(Train, TargetStopsEarly) {
  Rng rng(3);
  const Fixture f = make_fixture(4, rng);
  TrainConfig c;
  c.epochs = 50;
  c.target_nll = 1e6;
  model::Model m(tiny_model());
  const TrainResult r = train(m, f.bank, f.cases, {}, c);
  EXPECT_TRUE(r.reached_target);
  EXPECT_EQ(r.epochs.size(), 1u);
}

TEST(Train, NonFiniteLossThrows) {
  Rng rng(4);
  const Fixture f = make_fixture(4, rng);
  model::Model m(tiny_model());
  m.out_b.value(0, 3) = std::nan("");
  EXPECT_THROW(train(m, f.bank, f.cases, {}, TrainConfig{}), TrainingDiverged);
  EXPECT_THROW(train(m, f.bank, {}, {}, TrainConfig{}), DataError);
}

TEST(Train, CheckpointRoundTrip) {
  const auto dir = testing::scratch_dir("checkpoint");
  const ConfigTree cfg = ConfigTree::parse("model.experts = 2\nseed = 5\n");
  const model::Model a(tiny_model());
  save_checkpoint(dir / "ckpt.bin", a, cfg);
  const Checkpoint c = read_checkpoint(dir / "ckpt.bin");
  EXPECT_EQ(c.config_text, cfg.canonical());
  EXPECT_EQ(c.config_hash, cfg.hash());
  EXPECT_EQ(c.vocab_size, 9);
  EXPECT_EQ(c.input_dim, 6);
  model::ModelConfig other = tiny_model();
  other.seed = 99;
  model::Model b(other);
  load_weights(b, c);
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_TRUE((pa[i]->value.array() == pb[i]->value.array()).all()) << pa[i]->name;
  }
}

TEST(Train, CheckpointTamperingIsDetected) {
  const auto dir = testing::scratch_dir("checkpoint-tamper");
  const ConfigTree cfg = ConfigTree::parse("model.experts = 2\n");
  const model::Model a(tiny_model());
  save_checkpoint(dir / "ckpt.bin", a, cfg);
  std::ifstream in(dir / "ckpt.bin", std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), {});
  auto write = [&](const std::string& data) {
    std::ofstream(dir / "bad.bin", std::ios::binary) << data;
  };

  std::string edited = bytes;
  edited[edited.find("experts = 2") + 10] = '3';
  write(edited);
  EXPECT_THROW(read_checkpoint(dir / "bad.bin"), DataError);
  write(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_checkpoint(dir / "bad.bin"), DataError);
  write(bytes + "x");
  EXPECT_THROW(read_checkpoint(dir / "bad.bin"), DataError);
  write("XXXX" + bytes.substr(4));
  EXPECT_THROW(read_checkpoint(dir / "bad.bin"), DataError);

  model::ModelConfig wider = tiny_model();
  wider.ffn_dim = 32;
  model::Model b(wider);
  EXPECT_THROW(load_weights(b, read_checkpoint(dir / "ckpt.bin")), ShapeError);
  model::ModelConfig dense = tiny_model();
  dense.use_moe = false;
  model::Model d(dense);
  EXPECT_THROW(load_weights(d, read_checkpoint(dir / "ckpt.bin")), DataError);
}

}  // namespace
}  // namespace rrmoe::train
