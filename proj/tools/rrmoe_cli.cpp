// Copyright 2026 The rrmoe Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end. Exit codes: 0 success, 1 domain error (bad
// config, data or run state), 2 usage error.

#include <CLI11.hpp>

#include <algorithm>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rrmoe/acceptance.hpp"
#include "rrmoe/binio.hpp"
#include "rrmoe/errors.hpp"
#include "rrmoe/pipeline.hpp"

#ifndef RRMOE_TEST_DATA_DIR
#define RRMOE_TEST_DATA_DIR "tests/data"
#endif

namespace fs = std::filesystem;
namespace pl = rrmoe::pipeline;

namespace {

int run_selftest(const std::vector<int>& only, const fs::path& data_dir, const fs::path& work_dir,
                 bool verbose) {
  rrmoe::acceptance::Options o;
  o.data_dir = data_dir;
  o.work_dir = work_dir;
  if (verbose) o.log = &std::cerr;
  std::vector<int> ids = only;
  if (ids.empty()) {
    for (int i = 1; i <= rrmoe::acceptance::kCriteria; ++i) ids.push_back(i);
  }
  int failed = 0;
  for (int id : ids) {
    const auto r = rrmoe::acceptance::run_criterion(id, o);
    std::cout << rrmoe::acceptance::format_result(r) << std::endl;
    failed += !r.passed;
  }
  std::cout << (ids.size() - failed) << "/" << ids.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}

// Rebuilds summary.md from whichever child runs still carry a manifest.
void resummarize(const fs::path& out, std::ostream& warn) {
  std::vector<fs::path> children;
  for (const auto& e : fs::directory_iterator(out)) {
    if (e.is_directory()) children.push_back(e.path());
  }
  std::sort(children.begin(), children.end());
  const auto summary = pl::summarize_ablation(children, &warn);
  rrmoe::binio::write_text(out / "summary.md", pl::format_summary(summary));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rrmoe: retrieval-augmented mixture-of-experts report generation"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress progress output");

  pl::CommandOptions opts;
  std::string config, data, out, bank, run, generations, split = "test", axis, values;
  std::optional<int> beam;
  double beta = 1.0;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic corpus");
  gen->add_option("--config", config, "Config file")->required();
  gen->add_option("--out", out, "Dataset directory")->required();
  gen->add_flag("--force", opts.force, "Replace an existing run directory");

  auto* bb = app.add_subcommand("build-bank", "Build the sentence memory bank from a training split");
  bb->add_option("--data", data, "Dataset directory")->required();
  bb->add_option("--out", out, "Output directory")->required();
  bb->add_flag("--force", opts.force, "Replace an existing run directory");

  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--config", config, "Config file")->required();
  tr->add_option("--data", data, "Dataset directory")->required();
  tr->add_option("--bank", bank, "Prebuilt bank.bin (default: built from the training split)");
  tr->add_option("--out", out, "Run directory")->required();
  tr->add_flag("--force", opts.force, "Replace an existing run directory");

  auto* ge = app.add_subcommand("generate", "Decode a dataset split with a trained run");
  ge->add_option("--run", run, "Training run directory")->required();
  ge->add_option("--data", data, "Dataset directory (default: the training dataset)");
  ge->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  ge->add_option("--beam", beam, "Beam size (default: decode.beam)")->check(CLI::PositiveNumber);
  ge->add_option("--out", out, "Output directory")->required();
  ge->add_flag("--force", opts.force, "Replace an existing run directory");

  auto* ev = app.add_subcommand("evaluate", "Score generations against references");
  ev->add_option("--generations", generations, "generations.tsv or its directory")->required();
  ev->add_option("--beta", beta, "ROUGE-L recall weight")->check(CLI::PositiveNumber);
  ev->add_option("--out", out, "Output directory")->required();
  ev->add_flag("--force", opts.force, "Replace an existing run directory");

  bool summarize_only = false;
  auto* ab = app.add_subcommand("ablate", "Run an ablation sweep and write summary.md");
  ab->add_option("--config", config, "Base config file");
  ab->add_option("--data", data, "Dataset directory");
  ab->add_option("--axis", axis,
                 "table2, reranker, moe, noisy_routing, load_balance, E, routing_k, lambda, "
                 "recall_size or final_topk");
  ab->add_option("--values", values, "Comma-separated values (default: the standard grid)");
  ab->add_option("--out", out, "Sweep directory")->required();
  ab->add_flag("--force", opts.force, "Replace an existing sweep directory");
  ab->add_flag("--summarize-only", summarize_only, "Rebuild summary.md from existing child runs");

  std::vector<int> criteria;
  std::string data_dir = RRMOE_TEST_DATA_DIR, work_dir;
  auto* st = app.add_subcommand("selftest", "Run the acceptance suite");
  st->add_option("--criterion", criteria, "Criterion ids to run (default: all)")
      ->check(CLI::Range(1, rrmoe::acceptance::kCriteria));
  st->add_option("--data-dir", data_dir, "Directory with the metric fixtures");
  st->add_option("--work-dir", work_dir, "Scratch directory for runs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (!quiet) opts.log = &std::cerr;

  try {
    if (*gen) {
      pl::gen_data(config, out, opts);
    } else if (*bb) {
      pl::build_bank(data, out, opts);
    } else if (*tr) {
      pl::train(config, data, bank, out, opts);
    } else if (*ge) {
      pl::generate(run, data, rrmoe::corpus::parse_split(split), beam, out, opts);
    } else if (*ev) {
      const auto rep = pl::evaluate(generations, out, beta, opts);
      std::cout << rep.to_text().substr(0, rep.to_text().find("\ncases"));
      std::cout << std::endl;
    } else if (*ab) {
      if (summarize_only) {
        resummarize(out, std::cerr);
      } else {
        if (config.empty() || data.empty() || axis.empty()) {
          std::cerr << "ablate: --config, --data and --axis are required unless --summarize-only\n";
          return 2;
        }
        std::vector<std::string> vals;
        std::stringstream ss(values);
        for (std::string v; std::getline(ss, v, ',');) {
          if (!v.empty()) vals.push_back(v);
        }
        pl::ablate(config, data, axis, vals, out, opts);
      }
      std::cout << rrmoe::binio::read_text(fs::path(out) / "summary.md");
    } else if (*st) {
      return run_selftest(criteria, data_dir, work_dir, !quiet);
    }
  } catch (const rrmoe::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
