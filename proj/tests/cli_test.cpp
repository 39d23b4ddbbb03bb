// Copyright 2026 The rrmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "rrmoe/binio.hpp"
#include "test_util.hpp"

#ifndef RRMOE_CLI
#define RRMOE_CLI "rrmoe"
#endif

namespace rrmoe {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code = -1;
  std::string output;
};

Result run(const std::string& args, const fs::path& scratch) {
  const fs::path log = scratch / "cli.log";
  const std::string cmd = std::string("\"") + RRMOE_CLI + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.output = binio::read_text(log);
  return r;
}

const char* kConfig =
    "seed = 2\n"
    "corpus.n_cases = 8\n"
    "corpus.dim = 8\n"
    "corpus.patches_min = 6\n"
    "corpus.patches_max = 8\n"
    "corpus.report_length_min = 4\n"
    "corpus.report_length_max = 6\n"
    "corpus.train_fraction = 0.5\n"
    "corpus.val_fraction = 0.25\n"
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

TEST(Cli, UsageErrorsExitTwo) {
  const auto dir = testing::scratch_dir("cli-usage");
  EXPECT_EQ(run("", dir).code, 2);
  EXPECT_EQ(run("frobnicate", dir).code, 2);
  EXPECT_EQ(run("gen-data --out x", dir).code, 2);
  EXPECT_EQ(run("generate --run r --out o --split holdout", dir).code, 2);
  EXPECT_EQ(run("--help", dir).code, 0);
}

TEST(Cli, DomainErrorsExitOneWithTheKey) {
  const auto dir = testing::scratch_dir("cli-domain");
  binio::write_text(dir / "bad.txt", std::string(kConfig) + "model.experts = 0\n");
  const Result bad = run("-q gen-data --config \"" + (dir / "bad.txt").string() + "\" --out \"" +
                             (dir / "data").string() + "\"",
                         dir);
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.output.find("model.experts"), std::string::npos) << bad.output;
  binio::write_text(dir / "typo.txt", "model.expertz = 2\n");
  const Result typo = run("-q gen-data --config \"" + (dir / "typo.txt").string() + "\" --out \"" +
                              (dir / "data").string() + "\"",
                          dir);
  EXPECT_EQ(typo.code, 1);
  EXPECT_NE(typo.output.find("model.expertz"), std::string::npos) << typo.output;
  EXPECT_EQ(run("-q evaluate --generations \"" + (dir / "none").string() + "\" --out \"" +
                    (dir / "eval").string() + "\"",
                dir)
                .code,
            1);
}

TEST(Cli, FullPipeline) {
  const auto dir = testing::scratch_dir("cli-pipeline");
  binio::write_text(dir / "config.txt", kConfig);
  const std::string cfg = "\"" + (dir / "config.txt").string() + "\"";
  auto p = [&](const char* name) { return "\"" + (dir / name).string() + "\""; };

  EXPECT_EQ(run("-q gen-data --config " + cfg + " --out " + p("data"), dir).code, 0);
  const Result again = run("-q gen-data --config " + cfg + " --out " + p("data"), dir);
  EXPECT_EQ(again.code, 1);
  EXPECT_NE(again.output.find("--force"), std::string::npos);
  EXPECT_EQ(run("-q gen-data --force --config " + cfg + " --out " + p("data"), dir).code, 0);
  EXPECT_EQ(run("-q build-bank --data " + p("data") + " --out " + p("bank"), dir).code, 0);
  EXPECT_EQ(run("-q train --config " + cfg + " --data " + p("data") + " --out " + p("run"), dir).code, 0);
  EXPECT_EQ(run("-q generate --run " + p("run") + " --beam 1 --out " + p("gen"), dir).code, 0);
  const Result ev = run("-q evaluate --generations " + p("gen") + " --out " + p("eval"), dir);
  EXPECT_EQ(ev.code, 0);
  EXPECT_EQ(ev.output.rfind("bleu1 = ", 0), 0u) << ev.output;
  EXPECT_NE(ev.output.find("rouge_l = "), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "eval" / "metrics.txt"));

  const Result ab = run("-q ablate --config " + cfg + " --data " + p("data") +
                            " --axis routing_k --values 1,2 --out " + p("sweep"),
                        dir);
  EXPECT_EQ(ab.code, 0) << ab.output;
  EXPECT_NE(ab.output.find("| k_2 |"), std::string::npos) << ab.output;
  fs::remove_all(dir / "sweep" / "k_1");
  const Result resum = run("-q ablate --summarize-only --out " + p("sweep"), dir);
  EXPECT_EQ(resum.code, 0);
  EXPECT_EQ(resum.output.find("| k_1 |"), std::string::npos);
  EXPECT_NE(resum.output.find("| k_2 |"), std::string::npos);
}

}  // namespace
}  // namespace rrmoe
