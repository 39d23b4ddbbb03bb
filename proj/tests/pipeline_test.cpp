// Copyright 2026 The rrmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "rrmoe/pipeline.hpp"

#include <gtest/gtest.h>

#include <regex>
#include <sstream>

#include "rrmoe/binio.hpp"
#include "test_util.hpp"

namespace rrmoe::pipeline {
namespace {

const char* kSmallConfig =
    "seed = 5\n"
    "profile = desk\n"
    "corpus.n_cases = 10\n"
    "corpus.dim = 8\n"
    "corpus.patches_min = 6\n"
    "corpus.patches_max = 8\n"
    "corpus.report_length_min = 4\n"
    "corpus.report_length_max = 6\n"
    "corpus.train_fraction = 0.6\n"
    "corpus.val_fraction = 0.2\n"
    "model.dim = 8\n"
    "model.heads = 2\n"
    "model.enc_layers = 1\n"
    "model.dec_layers = 1\n"
    "model.ffn_dim = 16\n"
    "model.experts = 2\n"
    "model.top_k = 1\n"
    "model.max_len = 12\n"
    "model.group_size = 2\n"
    "train.epochs = 1\n"
    "train.batch_size = 2\n"
    "decode.beam = 2\n";

fs::path write_config(const fs::path& dir, const std::string& text) {
  binio::write_text(dir / "config.txt", text);
  return dir / "config.txt";
}

TEST(Pipeline, ConfigRejectsUnknownKeysAndProfiles) {
  const auto dir = testing::scratch_dir("pipeline-config");
  EXPECT_NO_THROW(load_config(write_config(dir, kSmallConfig)));
  EXPECT_THROW(load_config(write_config(dir, "model.expert = 4\n")), ConfigError);
  EXPECT_THROW(load_config(write_config(dir, "profile = huge\n")), ConfigError);
  EXPECT_THROW(load_config(write_config(dir, "model.experts = 0\n")), ConfigError);
  EXPECT_TRUE(known_config_keys().count("model.aux_weight"));
  const DecodeConfig d = DecodeConfig::from_config(ConfigTree::parse("decode.beam = 5\n"));
  EXPECT_EQ(d.beam, 5);
}

TEST(Pipeline, RunDirectoriesRefuseToOverwrite) {
  const auto dir = testing::scratch_dir("pipeline-rundir") / "run";
  prepare_run_dir(dir, false);
  RunManifest m;
  m.command = "test";
  m.seed = 3;
  m.outputs = {"a.txt"};
  m.inputs = {{"data", "/tmp/x"}};
  write_manifest(dir, m);
  binio::write_text(dir / "a.txt", "x");
  EXPECT_THROW(prepare_run_dir(dir, false), RunExists);
  const RunManifest back = read_manifest(dir);
  EXPECT_EQ(back.command, "test");
  EXPECT_EQ(back.seed, 3u);
  EXPECT_EQ(back.outputs, m.outputs);
  EXPECT_EQ(back.inputs, m.inputs);
  prepare_run_dir(dir, true);
  EXPECT_FALSE(fs::exists(dir / "a.txt"));
  EXPECT_THROW(read_manifest(dir), Error);
}

TEST(Pipeline, ContentHashTracksBytes) {
  const auto dir = testing::scratch_dir("pipeline-hash");
  binio::write_text(dir / "a", "one");
  const std::string h1 = content_hash({dir});
  EXPECT_EQ(h1, content_hash({dir}));
  EXPECT_NE(h1, content_hash({dir}, "extra"));
  binio::write_text(dir / "a", "two");
  EXPECT_NE(h1, content_hash({dir}));
}

TEST(Pipeline, AblationGrids) {
  const auto t2 = ablation_grid("table2", {});
  ASSERT_EQ(t2.size(), 5u);
  for (std::size_t r = 0; r < t2.size(); ++r) {
    ASSERT_EQ(t2[r].overrides.size(), 4u);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(t2[r].overrides[k].second, k < r ? "true" : "false");
  }
  EXPECT_EQ(ablation_grid("E", {}).size(), 3u);
  EXPECT_EQ(ablation_grid("lambda", {}).size(), 4u);
  const auto custom = ablation_grid("routing_k", {"1", "4"});
  ASSERT_EQ(custom.size(), 2u);
  EXPECT_EQ(custom[1].label, "k_4");
  EXPECT_EQ(custom[1].overrides, (std::vector<std::pair<std::string, std::string>>{{"model.top_k", "4"}}));
  EXPECT_THROW(ablation_grid("depth", {}), ConfigError);
  EXPECT_THROW(ablation_grid("table2", {"1"}), ConfigError);
}

TEST(Pipeline, SummaryFormatsFourDecimals) {
  AblationSummary s;
  SummaryRow r;
  r.label = "E_2";
  r.moe = true;
  r.setting = "model.experts=2";
  for (int i = 0; i < 6; ++i) r.metrics[i] = 0.123456 * (i + 1);
  s.rows.push_back(r);
  const std::string text = format_summary(s);
  EXPECT_NE(text.find("| E_2 | model.experts=2 | × | ✓ | × | × | 0.1235 | 0.2469 |"), std::string::npos);
  const auto dir = testing::scratch_dir("pipeline-summary");
  std::ostringstream warn;
  const AblationSummary missing = summarize_ablation({dir / "nope"}, &warn);
  EXPECT_TRUE(missing.rows.empty());
  EXPECT_EQ(missing.missing.size(), 1u);
  EXPECT_FALSE(warn.str().empty());
}

TEST(Pipeline, EndToEnd) {
  const auto root = testing::scratch_dir("pipeline-e2e");
  const fs::path cfg = write_config(root, kSmallConfig);
  gen_data(cfg, root / "data", {});
  EXPECT_THROW(gen_data(cfg, root / "data", {}), RunExists);
  const auto cases = corpus::load_dataset(root / "data");
  ASSERT_EQ(cases.size(), 10u);
  int test_cases = 0;
  for (const auto& c : cases) test_cases += c.split == corpus::Split::kTest;

  build_bank(root / "data", root / "bank", {});
  EXPECT_TRUE(fs::exists(root / "bank" / "bank.bin"));
  train(cfg, root / "data", root / "bank" / "bank.bin", root / "run", {});
  for (const char* f : {"checkpoint.bin", "vocab.txt", "bank.bin", "loadstats.jsonl", "run.json"}) {
    EXPECT_TRUE(fs::exists(root / "run" / f)) << f;
  }
  generate(root / "run", {}, corpus::Split::kTest, std::nullopt, root / "gen", {});
  const metrics::MetricsReport rep = evaluate(root / "gen", root / "eval", 1.0, {});
  EXPECT_EQ(static_cast<int>(rep.cases.size()), test_cases);
  EXPECT_EQ(metrics::read_report(root / "eval" / "metrics.txt").to_text(), rep.to_text());
  EXPECT_EQ(read_manifest(root / "eval").command, "evaluate");
  EXPECT_THROW(generate(root / "missing", {}, corpus::Split::kTest, std::nullopt, root / "gen2", {}),
               Error);
}

TEST(Pipeline, AblationWritesSummary) {
  const auto root = testing::scratch_dir("pipeline-ablate");
  const fs::path cfg = write_config(root, kSmallConfig);
  gen_data(cfg, root / "data", {});
  const AblationSummary s = ablate(cfg, root / "data", "E", {"1", "2"}, root / "sweep", {});
  ASSERT_EQ(s.rows.size(), 2u);
  const std::string md = binio::read_text(root / "sweep" / "summary.md");
  const std::regex row(R"(\| E_2 \| [^|]+ \| ✓ \| ✓ \| ✓ \| ✓ \|( \d+\.\d{4} \|){6})");
  EXPECT_TRUE(std::regex_search(md, row)) << md;
  EXPECT_THROW(ablate(cfg, root / "data", "E", {"2"}, root / "sweep", {}), RunExists);
}

}  // namespace
}  // namespace rrmoe::pipeline
