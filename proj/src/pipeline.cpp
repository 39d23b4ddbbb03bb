// Copyright 2026 The rrmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "rrmoe/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "rrmoe/binio.hpp"
#include "rrmoe/memory.hpp"
#include "rrmoe/model.hpp"
#include "rrmoe/rng.hpp"
#include "rrmoe/train.hpp"

namespace rrmoe::pipeline {

using json = nlohmann::json;

namespace {

constexpr const char* kManifest = "run.json";
constexpr const char* kGenerations = "generations.tsv";
constexpr const char* kMetrics = "metrics.txt";

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string t;
  while (is >> t) out.push_back(t);
  return out;
}

std::vector<std::vector<std::string>> reports_of(const std::vector<const corpus::Case*>& cases) {
  std::vector<std::vector<std::string>> out;
  for (const corpus::Case* c : cases) out.push_back(c->report);
  return out;
}

std::vector<train::TrainingCase> training_cases(const std::vector<const corpus::Case*>& cases,
                                                const corpus::Vocabulary& vocab) {
  std::vector<train::TrainingCase> out;
  for (const corpus::Case* c : cases) {
    out.push_back({c->id, &c->embeddings.patches, corpus::encode_report(vocab, c->report).tokens});
  }
  return out;
}

/// Everything `generate` needs from a finished training run.
struct TrainedRun {
  ConfigTree config;
  corpus::Vocabulary vocab;
  std::optional<memory::MemoryBank> bank;
  std::optional<model::Model> model;
  fs::path data_dir;
};

// Checkpoint, vocabulary and bank only; the manifest may not exist yet.
TrainedRun load_run_artifacts(const fs::path& run_dir) {
  TrainedRun run;
  const train::Checkpoint ck = train::read_checkpoint(run_dir / "checkpoint.bin");
  run.config = ConfigTree::parse(ck.config_text);
  run.vocab = corpus::Vocabulary::from_text(binio::read_text(run_dir / "vocab.txt"));
  if (run.vocab.size() != ck.vocab_size) throw DataError("vocab.txt disagrees with the checkpoint");
  run.bank = memory::MemoryBank::load(run_dir / "bank.bin");
  run.model.emplace(model::ModelConfig::from_config(run.config, ck.vocab_size, ck.input_dim));
  train::load_weights(*run.model, ck);
  return run;
}

TrainedRun load_trained_run(const fs::path& run_dir) {
  const RunManifest m = read_manifest(run_dir);
  TrainedRun run = load_run_artifacts(run_dir);
  for (const auto& [role, path] : m.inputs) {
    if (role == "data") run.data_dir = path;
  }
  return run;
}

std::vector<std::string> do_train(const ConfigTree& tree, const std::vector<corpus::Case>& cases,
                                  const fs::path& bank_path, const fs::path& out_dir,
                                  std::ostream* log) {
  const train::TrainConfig tc = train::TrainConfig::from_config(tree);
  const auto train_split = corpus::select_split(cases, corpus::Split::kTrain);
  const auto val_split = corpus::select_split(cases, corpus::Split::kVal);
  if (train_split.empty()) throw DataError("dataset has no training cases");

  const auto reports = reports_of(train_split);
  const corpus::Vocabulary vocab =
      corpus::build_vocab(reports, static_cast<int>(tree.get_int("train.min_token_freq", 1)));
  const memory::MemoryBank bank = bank_path.empty()
                                      ? memory::build_memory_bank(std::span<const corpus::Case* const>(train_split))
                                      : memory::MemoryBank::load(bank_path);
  const int input_dim = train_split.front()->embeddings.dim();
  model::Model model(model::ModelConfig::from_config(tree, vocab.size(), input_dim));

  const auto train_cases = training_cases(train_split, vocab);
  const auto val_cases = training_cases(val_split, vocab);

  std::ofstream step_log(out_dir / "train_log.jsonl");
  std::ofstream load_log(out_dir / "loadstats.jsonl");
  std::ofstream epoch_log(out_dir / "epochs.jsonl");
  train::TrainCallbacks cb;
  cb.on_step = [&](const train::StepRecord& r) {
    json usage = json::array();
    for (const auto& f : r.f_usage) usage.push_back(std::vector<double>(f.data(), f.data() + f.size()));
    step_log << json{{"step", r.step}, {"epoch", r.epoch}, {"nll", r.nll}, {"aux", r.aux},
                     {"total", r.total}, {"lr", r.lr}, {"f_usage", usage}, {"wall_ms", r.wall_ms}}
                    .dump()
             << "\n";
    for (std::size_t l = 0; l < r.f_usage.size(); ++l) {
      moe::LoadStats s{r.f_usage[l], r.p_mean[l]};
      load_log << json{{"step", r.step},
                       {"layer", l},
                       {"f_usage", std::vector<double>(s.f_usage.data(), s.f_usage.data() + s.f_usage.size())},
                       {"p_mean", std::vector<double>(s.p_mean.data(), s.p_mean.data() + s.p_mean.size())},
                       {"aux", moe::load_balance_loss(s)}}
                      .dump()
               << "\n";
    }
  };
  cb.on_epoch = [&](const train::EpochRecord& e) {
    json rec{{"epoch", e.epoch}, {"train_nll", e.train_nll}, {"best", e.best}};
    if (e.val_nll) rec["val_nll"] = *e.val_nll;
    epoch_log << rec.dump() << "\n";
    if (log) {
      *log << "epoch " << e.epoch << " train_nll " << e.train_nll;
      if (e.val_nll) *log << " val_nll " << *e.val_nll;
      *log << "\n";
    }
  };
  const train::TrainResult result = train::train(model, bank, train_cases, val_cases, tc, cb);
  if (log) *log << "retained epoch " << result.best_epoch << " (nll " << result.best_nll << ")\n";

  binio::write_text(out_dir / "vocab.txt", vocab.to_text());
  bank.save(out_dir / "bank.bin");
  train::save_checkpoint(out_dir / "checkpoint.bin", model, tree);
  return {"checkpoint.bin", "vocab.txt", "bank.bin", "train_log.jsonl", "loadstats.jsonl", "epochs.jsonl"};
}

std::vector<std::string> do_generate(const TrainedRun& run, const std::vector<corpus::Case>& cases,
                                     corpus::Split split, std::optional<int> beam,
                                     const fs::path& out_dir) {
  const DecodeConfig dc = DecodeConfig::from_config(run.config);
  const int width = beam.value_or(dc.beam);
  if (width < 1) throw ConfigError("decode.beam", "must be >= 1");
  const int max_len = dc.max_len > 0 ? dc.max_len : run.model->config().max_len;
  const auto selected = corpus::select_split(cases, split);
  if (selected.empty()) {
    throw DataError(std::string("dataset has no cases in split '") + corpus::split_name(split) + "'");
  }
  std::string out = "id\tcandidate\treference\n";
  for (const corpus::Case* c : selected) {
    const corpus::ReportSequence seq =
        width == 1 ? model::greedy_decode(*run.model, c->embeddings.patches, *run.bank, max_len)
                   : model::beam_decode(*run.model, c->embeddings.patches, *run.bank, width,
                                        max_len, dc.length_norm);
    out += c->id + "\t" + join(corpus::decode_tokens(run.vocab, seq.tokens)) + "\t" +
           join(c->report) + "\n";
  }
  binio::write_text(out_dir / kGenerations, out);
  return {kGenerations};
}

metrics::MetricsReport do_evaluate(const fs::path& generations, const fs::path& out_dir,
                                   double rouge_beta) {
  const std::string text = binio::read_text(generations);
  std::istringstream is(text);
  std::string line;
  std::vector<std::string> ids;
  std::vector<metrics::Tokens> cands, refs;
  bool header = true;
  while (std::getline(is, line)) {
    if (header) {
      header = false;
      if (line != "id\tcandidate\treference") throw DataError(generations.string() + ": bad header");
      continue;
    }
    if (line.empty()) continue;
    const auto a = line.find('\t');
    const auto b = a == std::string::npos ? a : line.find('\t', a + 1);
    if (b == std::string::npos) throw DataError(generations.string() + ": malformed row '" + line + "'");
    ids.push_back(line.substr(0, a));
    cands.push_back(split_ws(line.substr(a + 1, b - a - 1)));
    refs.push_back(split_ws(line.substr(b + 1)));
  }
  metrics::MetricsReport rep = metrics::evaluate_corpus(cands, refs, ids, rouge_beta);
  metrics::write_report(out_dir / kMetrics, rep);
  return rep;
}

fs::path resolve_generations(const fs::path& p) {
  return fs::is_directory(p) ? p / kGenerations : p;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

const std::set<std::string>& known_config_keys() {
  static const std::set<std::string> keys = [] {
    std::set<std::string> k{"seed", "profile"};
    for (const char* c : {"n_cases", "dim", "patches_min", "patches_max", "vocab_size",
                          "report_length_min", "report_length_max", "n_latent_topics",
                          "phrases_per_topic", "phrase_length_min", "phrase_length_max",
                          "patch_noise", "filler_ratio", "train_fraction", "val_fraction"}) {
      k.insert(std::string("corpus.") + c);
    }
    for (const char* m : {"dim", "heads", "enc_layers", "dec_layers", "experts", "top_k", "ffn_dim",
                          "max_len", "aux_weight", "recall_size", "final_topk", "patch_ratio",
                          "group_size", "dropout", "reranker_hidden", "router_init_scale",
                          "use_reranker", "use_moe", "noisy_routing", "load_balance"}) {
      k.insert(std::string("model.") + m);
    }
    for (const char* t : {"epochs", "batch_size", "lr", "weight_decay", "beta1", "beta2", "eps",
                          "target_nll", "eval_every", "min_token_freq"}) {
      k.insert(std::string("train.") + t);
    }
    for (const char* d : {"beam", "length_norm", "max_len"}) k.insert(std::string("decode.") + d);
    k.insert("metrics.rouge_beta");
    return k;
  }();
  return keys;
}

void validate_config(const ConfigTree& tree) {
  tree.require_known(known_config_keys());
  const corpus::CorpusSpec spec = corpus::CorpusSpec::from_config(tree);
  model::ModelConfig::from_config(tree, corpus::kNumReserved + 1 + spec.vocab_size, spec.dim);
  train::TrainConfig::from_config(tree);
  if (tree.get_int("train.min_token_freq", 1) < 1) {
    throw ConfigError("train.min_token_freq", "must be >= 1");
  }
  DecodeConfig::from_config(tree);
}

ConfigTree load_config(const fs::path& path) {
  ConfigTree tree = ConfigTree::load(path);
  validate_config(tree);
  return tree;
}

DecodeConfig DecodeConfig::from_config(const ConfigTree& t) {
  DecodeConfig d;
  d.beam = static_cast<int>(t.get_int("decode.beam", d.beam));
  d.length_norm = t.get_bool("decode.length_norm", d.length_norm);
  d.max_len = static_cast<int>(t.get_int("decode.max_len", d.max_len));
  d.rouge_beta = t.get_double("metrics.rouge_beta", d.rouge_beta);
  if (d.beam < 1) throw ConfigError("decode.beam", "must be >= 1");
  if (d.max_len < 0) throw ConfigError("decode.max_len", "must be >= 0");
  if (!(d.rouge_beta > 0.0)) throw ConfigError("metrics.rouge_beta", "must be > 0");
  return d;
}

// ---------------------------------------------------------------------------
// Run directories

void prepare_run_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir / kManifest)) {
    if (!force) throw RunExists(dir);
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

void write_manifest(const fs::path& dir, const RunManifest& m) {
  json inputs = json::object();
  for (const auto& [role, path] : m.inputs) inputs[role] = path;
  json j{{"command", m.command},
         {"config_path", m.config_path},
         {"config", m.config_snapshot},
         {"seed", m.seed},
         {"input_hash", m.input_hash},
         {"inputs", inputs},
         {"outputs", m.outputs},
         {"wall_ms", m.wall_ms}};
  binio::write_text(dir / kManifest, j.dump(2) + "\n");
}

RunManifest read_manifest(const fs::path& dir) {
  json j;
  try {
    j = json::parse(binio::read_text(dir / kManifest));
  } catch (const json::exception& e) {
    throw DataError("bad run manifest in " + dir.string() + ": " + e.what());
  }
  RunManifest m;
  try {
    m.command = j.at("command").get<std::string>();
    m.config_path = j.value("config_path", "");
    m.config_snapshot = j.value("config", "");
    m.seed = j.value("seed", std::uint64_t{0});
    m.input_hash = j.value("input_hash", "");
    m.outputs = j.value("outputs", std::vector<std::string>{});
    if (j.contains("inputs")) {
      for (const auto& [role, path] : j.at("inputs").items()) m.inputs.emplace_back(role, path.get<std::string>());
    }
    m.wall_ms = j.value("wall_ms", 0.0);
  } catch (const json::exception& e) {
    throw DataError("bad run manifest in " + dir.string() + ": " + e.what());
  }
  return m;
}

std::string content_hash(const std::vector<fs::path>& inputs, const std::string& extra) {
  std::uint64_t h = fnv1a64(extra);
  for (const fs::path& root : inputs) {
    if (root.empty()) continue;
    std::vector<fs::path> files;
    if (fs::is_directory(root)) {
      for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file() && e.path().filename() != kManifest) files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
    } else {
      files.push_back(root);
    }
    for (const fs::path& f : files) {
      h = fnv1a64(fs::relative(f, fs::is_directory(root) ? root : root.parent_path()).generic_string(), h);
      const auto bytes = binio::read_file(f);
      h = fnv1a64(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), h);
    }
  }
  return hex64(h);
}

// ---------------------------------------------------------------------------
// Commands

void gen_data(const fs::path& config_path, const fs::path& out_dir, const CommandOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  const ConfigTree tree = load_config(config_path);
  const corpus::CorpusSpec spec = corpus::CorpusSpec::from_config(tree);
  prepare_run_dir(out_dir, opts.force);
  const auto cases = corpus::generate_synthetic_corpus(spec);
  corpus::save_dataset(out_dir, spec, cases);
  if (opts.log) *opts.log << "wrote " << cases.size() << " cases to " << out_dir.string() << "\n";

  RunManifest m;
  m.command = "gen-data";
  m.config_path = config_path.string();
  m.config_snapshot = tree.canonical();
  m.seed = spec.rng_seed;
  m.input_hash = content_hash({}, tree.canonical());
  m.inputs = {{"config", config_path.string()}};
  m.outputs.push_back("manifest.json");
  for (const auto& c : cases) m.outputs.push_back("cases/" + c.id + ".bin");
  m.wall_ms = elapsed_ms(t0);
  write_manifest(out_dir, m);
}

void build_bank(const fs::path& data_dir, const fs::path& out_dir, const CommandOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cases = corpus::load_dataset(data_dir);
  const auto train_split = corpus::select_split(cases, corpus::Split::kTrain);
  const memory::MemoryBank bank =
      memory::build_memory_bank(std::span<const corpus::Case* const>(train_split));
  prepare_run_dir(out_dir, opts.force);
  bank.save(out_dir / "bank.bin");
  if (opts.log) *opts.log << "bank of " << bank.size() << " sentences\n";

  RunManifest m;
  m.command = "build-bank";
  m.input_hash = content_hash({data_dir});
  m.inputs = {{"data", data_dir.string()}};
  m.outputs = {"bank.bin"};
  m.wall_ms = elapsed_ms(t0);
  write_manifest(out_dir, m);
}

void train(const fs::path& config_path, const fs::path& data_dir, const fs::path& bank_path,
           const fs::path& out_dir, const CommandOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  const ConfigTree tree = load_config(config_path);
  const auto cases = corpus::load_dataset(data_dir);
  prepare_run_dir(out_dir, opts.force);

  RunManifest m;
  m.command = "train";
  m.config_path = config_path.string();
  m.config_snapshot = tree.canonical();
  m.seed = static_cast<std::uint64_t>(tree.get_int("seed", 7));
  m.input_hash = content_hash({data_dir, bank_path}, tree.canonical());
  m.inputs = {{"config", config_path.string()}, {"data", data_dir.string()}};
  if (!bank_path.empty()) m.inputs.emplace_back("bank", bank_path.string());
  m.outputs = do_train(tree, cases, bank_path, out_dir, opts.log);
  m.wall_ms = elapsed_ms(t0);
  write_manifest(out_dir, m);
}

void generate(const fs::path& run_dir, const fs::path& data_dir, corpus::Split split,
              std::optional<int> beam, const fs::path& out_dir, const CommandOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  TrainedRun run = load_trained_run(run_dir);
  const fs::path data = data_dir.empty() ? run.data_dir : data_dir;
  if (data.empty()) throw DataError("no dataset given and the training run records none");
  const auto cases = corpus::load_dataset(data);
  prepare_run_dir(out_dir, opts.force);

  RunManifest m;
  m.command = "generate";
  m.config_snapshot = run.config.canonical();
  m.seed = static_cast<std::uint64_t>(run.config.get_int("seed", 7));
  m.input_hash = content_hash({run_dir / "checkpoint.bin", data}, corpus::split_name(split));
  m.inputs = {{"run", run_dir.string()}, {"data", data.string()}, {"split", corpus::split_name(split)}};
  m.outputs = do_generate(run, cases, split, beam, out_dir);
  if (opts.log) *opts.log << "wrote " << (out_dir / kGenerations).string() << "\n";
  m.wall_ms = elapsed_ms(t0);
  write_manifest(out_dir, m);
}

metrics::MetricsReport evaluate(const fs::path& generations, const fs::path& out_dir,
                                double rouge_beta, const CommandOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path gen = resolve_generations(generations);
  if (!fs::exists(gen)) throw DataError("no generations file at " + gen.string());
  prepare_run_dir(out_dir, opts.force);
  metrics::MetricsReport rep = do_evaluate(gen, out_dir, rouge_beta);
  if (opts.log) *opts.log << rep.to_text().substr(0, rep.to_text().find("\n\n")) << "\n";

  RunManifest m;
  m.command = "evaluate";
  m.input_hash = content_hash({gen});
  m.inputs = {{"generations", gen.string()}};
  m.outputs = {kMetrics};
  m.wall_ms = elapsed_ms(t0);
  write_manifest(out_dir, m);
  return rep;
}

// ---------------------------------------------------------------------------
// Ablation

std::vector<AblationRow> ablation_grid(const std::string& axis, const std::vector<std::string>& values) {
  auto sweep = [&](const std::string& key, std::vector<std::string> defaults,
                   const std::string& short_name) {
    std::vector<AblationRow> rows;
    for (const std::string& v : values.empty() ? defaults : values) {
      rows.push_back({short_name + "_" + v, {{key, v}}});
    }
    return rows;
  };
  if (axis == "table2" || axis == "modules") {
    if (!values.empty()) throw ConfigError("ablate.values", "the table2 axis takes no values");
    const char* keys[4] = {"model.use_reranker", "model.use_moe", "model.noisy_routing",
                           "model.load_balance"};
    const char* labels[5] = {"1_baseline", "2_reranker", "3_moe", "4_noisy_topk", "5_load_balance"};
    std::vector<AblationRow> rows;
    for (int r = 0; r < 5; ++r) {
      AblationRow row{labels[r], {}};
      for (int k = 0; k < 4; ++k) row.overrides.emplace_back(keys[k], k < r ? "true" : "false");
      rows.push_back(std::move(row));
    }
    return rows;
  }
  if (axis == "reranker") return sweep("model.use_reranker", {"false", "true"}, "reranker");
  if (axis == "moe") return sweep("model.use_moe", {"false", "true"}, "moe");
  if (axis == "noisy_routing") return sweep("model.noisy_routing", {"false", "true"}, "noisy");
  if (axis == "load_balance") return sweep("model.load_balance", {"false", "true"}, "lb");
  if (axis == "E") return sweep("model.experts", {"2", "4", "8"}, "E");
  if (axis == "routing_k") return sweep("model.top_k", {"1", "2", "3"}, "k");
  if (axis == "lambda") return sweep("model.aux_weight", {"0", "0.001", "0.01", "0.1"}, "lambda");
  if (axis == "recall_size") return sweep("model.recall_size", {"10", "20", "50"}, "K");
  if (axis == "final_topk") return sweep("model.final_topk", {"1", "3", "5"}, "topk");
  throw ConfigError("ablate.axis", "unknown axis '" + axis + "'");
}

AblationSummary summarize_ablation(const std::vector<fs::path>& run_dirs, std::ostream* warn) {
  AblationSummary s;
  for (const fs::path& dir : run_dirs) {
    try {
      const RunManifest m = read_manifest(dir);
      const metrics::MetricsReport rep = metrics::read_report(dir / kMetrics);
      const ConfigTree tree = ConfigTree::parse(m.config_snapshot);
      SummaryRow row;
      row.label = dir.filename().string();
      row.reranker = tree.get_bool("model.use_reranker", true);
      row.moe = tree.get_bool("model.use_moe", true);
      row.noisy = row.moe && tree.get_bool("model.noisy_routing", true);
      row.load_balance = row.moe && tree.get_bool("model.load_balance", true);
      for (const auto& [role, value] : m.inputs) {
        if (role == "override") row.setting += (row.setting.empty() ? "" : " ") + value;
      }
      const double vals[6] = {rep.bleu[0], rep.bleu[1], rep.bleu[2], rep.bleu[3], rep.meteor, rep.rouge_l};
      std::copy(vals, vals + 6, row.metrics);
      s.rows.push_back(std::move(row));
    } catch (const Error& e) {
      s.missing.push_back(dir.string());
      if (warn) *warn << "warning: skipping run " << dir.string() << ": " << e.what() << "\n";
    }
  }
  return s;
}

std::string format_summary(const AblationSummary& summary) {
  std::ostringstream os;
  os << "| Run | Setting | Reranker | MoE | Noisy Top-k | Load Balance | BLEU-1 | BLEU-2 | BLEU-3 "
        "| BLEU-4 | METEOR | ROUGE-L |\n";
  os << "|---|---|:-:|:-:|:-:|:-:|--:|--:|--:|--:|--:|--:|\n";
  auto mark = [](bool on) { return on ? "✓" : "×"; };
  for (const SummaryRow& r : summary.rows) {
    os << "| " << r.label << " | " << (r.setting.empty() ? "-" : r.setting) << " | "
       << mark(r.reranker) << " | " << mark(r.moe) << " | " << mark(r.noisy) << " | "
       << mark(r.load_balance);
    for (double v : r.metrics) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.4f", v);
      os << " | " << buf;
    }
    os << " |\n";
  }
  return os.str();
}

AblationSummary ablate(const fs::path& config_path, const fs::path& data_dir, const std::string& axis,
                       const std::vector<std::string>& values, const fs::path& out_dir,
                       const CommandOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  const ConfigTree base = load_config(config_path);
  const std::vector<AblationRow> grid = ablation_grid(axis, values);
  const auto cases = corpus::load_dataset(data_dir);
  prepare_run_dir(out_dir, opts.force);

  std::vector<fs::path> children;
  for (const AblationRow& row : grid) {
    const auto tc = std::chrono::steady_clock::now();
    ConfigTree tree = base;
    for (const auto& [k, v] : row.overrides) tree.set(k, v);
    validate_config(tree);
    const fs::path child = out_dir / row.label;
    prepare_run_dir(child, true);
    if (opts.log) *opts.log << "== " << row.label << "\n";

    RunManifest m;
    m.command = "ablate-run";
    m.config_path = config_path.string();
    m.config_snapshot = tree.canonical();
    m.seed = static_cast<std::uint64_t>(tree.get_int("seed", 7));
    m.input_hash = content_hash({data_dir}, tree.canonical());
    m.inputs = {{"config", config_path.string()}, {"data", data_dir.string()}, {"axis", axis}};
    for (const auto& [k, v] : row.overrides) {
      if (axis != "table2" && axis != "modules") m.inputs.emplace_back("override", k + "=" + v);
    }
    m.outputs = do_train(tree, cases, {}, child, nullptr);
    TrainedRun run = load_run_artifacts(child);
    auto gen = do_generate(run, cases, corpus::Split::kTest, std::nullopt, child);
    m.outputs.insert(m.outputs.end(), gen.begin(), gen.end());
    do_evaluate(child / kGenerations, child, DecodeConfig::from_config(tree).rouge_beta);
    m.outputs.push_back(kMetrics);
    m.wall_ms = elapsed_ms(tc);
    write_manifest(child, m);
    children.push_back(child);
  }

  AblationSummary summary = summarize_ablation(children, opts.log);
  binio::write_text(out_dir / "summary.md", format_summary(summary));

  RunManifest m;
  m.command = "ablate";
  m.config_path = config_path.string();
  m.config_snapshot = base.canonical();
  m.seed = static_cast<std::uint64_t>(base.get_int("seed", 7));
  m.input_hash = content_hash({data_dir}, base.canonical() + axis);
  m.inputs = {{"config", config_path.string()}, {"data", data_dir.string()}, {"axis", axis}};
  m.outputs = {"summary.md"};
  for (const auto& c : children) m.outputs.push_back(c.filename().string() + "/");
  m.wall_ms = elapsed_ms(t0);
  write_manifest(out_dir, m);
  return summary;
}

}  // namespace rrmoe::pipeline
