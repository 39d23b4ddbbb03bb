// Copyright 2026 The rrmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "rrmoe/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "rrmoe/binio.hpp"
#include "rrmoe/config.hpp"
#include "rrmoe/errors.hpp"
#include "rrmoe/rng.hpp"

namespace rrmoe::corpus {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kReservedText[kNumReserved] = {"<pad>", "<bos>", "<eos>", "<unk>"};
constexpr const char* kFiller = "et";
constexpr const char* kCaseMagic = "RRMCASE1";
constexpr std::uint32_t kCaseVersion = 1;

std::string pseudo_word(int i) {
  static constexpr const char* syl[] = {"ka", "lo", "mi", "nu", "re", "sa",
                                        "ti", "vo", "ze", "pu", "da", "ho"};
  constexpr int n = 12;
  std::string w = std::string(syl[i % n]) + syl[(i / n) % n];
  if (i >= n * n) w += syl[(i / (n * n)) % n];
  if (i >= n * n * n) w += std::to_string(i / (n * n * n));
  return w;
}

RowVector random_direction(Rng& rng, int dim, double norm) {
  RowVector v(dim);
  for (int j = 0; j < dim; ++j) v(j) = rng.normal();
  return v * (norm / std::sqrt(static_cast<double>(dim)));
}

// Stored embeddings are float32 on disk; rounding at generation keeps the
// in-memory corpus identical to a reloaded one.
template <typename Derived>
void round_to_f32(Eigen::MatrixBase<Derived>& m) {
  m = m.unaryExpr([](double x) { return static_cast<double>(static_cast<float>(x)); });
}

struct Phrase {
  std::vector<std::string> words;
  RowVector visual;    // prototype in patch space
  RowVector sentence;  // sentence embedding centre
};

}  // namespace

// ---------------------------------------------------------------------------

void EmbeddingSet::validate() const {
  if (patches.rows() < 1) throw DataError("case " + case_id + ": no patches");
  if (patches.cols() < 1) throw DataError("case " + case_id + ": zero dimension");
  if (!patches.allFinite()) throw DataError("case " + case_id + ": non-finite patch value");
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) {
  for (const char* r : kReservedText) id_to_token_.emplace_back(r);
  for (auto& t : tokens) id_to_token_.push_back(std::move(t));
  for (int i = 0; i < size(); ++i) {
    if (!token_to_id_.emplace(id_to_token_[i], i).second) {
      throw DataError("duplicate vocabulary token '" + id_to_token_[i] + "'");
    }
  }
}

int Vocabulary::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) {
    throw DataError("token id " + std::to_string(id) + " outside vocabulary of size " +
                    std::to_string(size()));
  }
  return id_to_token_[id];
}

std::string Vocabulary::to_text() const {
  std::string out;
  for (int i = kNumReserved; i < size(); ++i) out += id_to_token_[i] + "\n";
  return out;
}

Vocabulary Vocabulary::from_text(const std::string& text) {
  std::vector<std::string> tokens;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw DataError("unknown split '" + name + "'");
}

// ---------------------------------------------------------------------------

void CorpusSpec::validate() const {
  auto positive = [](int v, const char* field) {
    if (v < 1) throw ConfigError(field, "must be >= 1, got " + std::to_string(v));
  };
  positive(n_cases, "corpus.n_cases");
  positive(dim, "corpus.dim");
  positive(patches_min, "corpus.patches_min");
  positive(patches_max, "corpus.patches_max");
  positive(vocab_size, "corpus.vocab_size");
  positive(report_length_min, "corpus.report_length_min");
  positive(report_length_max, "corpus.report_length_max");
  positive(n_latent_topics, "corpus.n_latent_topics");
  positive(phrases_per_topic, "corpus.phrases_per_topic");
  positive(phrase_length_min, "corpus.phrase_length_min");
  positive(phrase_length_max, "corpus.phrase_length_max");
  if (patches_max < patches_min) throw ConfigError("corpus.patches_max", "must be >= patches_min");
  if (report_length_max < report_length_min) {
    throw ConfigError("corpus.report_length_max", "must be >= report_length_min");
  }
  if (phrase_length_max < phrase_length_min) {
    throw ConfigError("corpus.phrase_length_max", "must be >= phrase_length_min");
  }
  if (vocab_size < n_latent_topics + 1) {
    throw ConfigError("corpus.vocab_size", "must be > n_latent_topics");
  }
  if (!std::isfinite(patch_noise) || patch_noise < 0) {
    throw ConfigError("corpus.patch_noise", "must be finite and >= 0");
  }
  if (!(filler_ratio >= 0 && filler_ratio < 1)) {
    throw ConfigError("corpus.filler_ratio", "must be in [0, 1)");
  }
  if (!(train_fraction >= 0 && train_fraction <= 1)) {
    throw ConfigError("corpus.train_fraction", "must be in [0, 1]");
  }
  if (!(val_fraction >= 0 && train_fraction + val_fraction <= 1 + 1e-12)) {
    throw ConfigError("corpus.val_fraction", "train_fraction + val_fraction must be <= 1");
  }
}

CorpusSpec CorpusSpec::from_config(const ConfigTree& t) {
  CorpusSpec s;
  auto gi = [&](const char* key, int fallback) { return static_cast<int>(t.get_int(key, fallback)); };
  s.n_cases = gi("corpus.n_cases", s.n_cases);
  s.dim = gi("corpus.dim", s.dim);
  s.patches_min = gi("corpus.patches_min", s.patches_min);
  s.patches_max = gi("corpus.patches_max", s.patches_max);
  s.vocab_size = gi("corpus.vocab_size", s.vocab_size);
  s.report_length_min = gi("corpus.report_length_min", s.report_length_min);
  s.report_length_max = gi("corpus.report_length_max", s.report_length_max);
  s.n_latent_topics = gi("corpus.n_latent_topics", s.n_latent_topics);
  s.phrases_per_topic = gi("corpus.phrases_per_topic", s.phrases_per_topic);
  s.phrase_length_min = gi("corpus.phrase_length_min", s.phrase_length_min);
  s.phrase_length_max = gi("corpus.phrase_length_max", s.phrase_length_max);
  s.patch_noise = t.get_double("corpus.patch_noise", s.patch_noise);
  s.filler_ratio = t.get_double("corpus.filler_ratio", s.filler_ratio);
  s.train_fraction = t.get_double("corpus.train_fraction", s.train_fraction);
  s.val_fraction = t.get_double("corpus.val_fraction", s.val_fraction);
  s.rng_seed = static_cast<std::uint64_t>(t.get_int("seed", static_cast<std::int64_t>(s.rng_seed)));
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------

std::vector<Case> generate_synthetic_corpus(const CorpusSpec& spec) {
  spec.validate();
  const int d = spec.dim;
  Rng rng(spec.rng_seed, "corpus.world");

  // Word pools: pool 0 is shared by every topic.
  const int n_pools = spec.n_latent_topics + 1;
  std::vector<std::vector<std::string>> pools(n_pools);
  for (int i = 0; i < spec.vocab_size; ++i) pools[i % n_pools].push_back(pseudo_word(i));

  std::vector<RowVector> centroids;
  std::vector<std::vector<Phrase>> phrases(spec.n_latent_topics);
  for (int t = 0; t < spec.n_latent_topics; ++t) {
    centroids.push_back(random_direction(rng, d, 1.0));
    for (int p = 0; p < spec.phrases_per_topic; ++p) {
      Phrase ph;
      const int len = rng.uniform_int(spec.phrase_length_min, spec.phrase_length_max);
      for (int w = 0; w < len; ++w) {
        const auto& pool = rng.uniform() < 0.3 ? pools[0] : pools[t + 1];
        ph.words.push_back(pool[rng.uniform_int(0, static_cast<int>(pool.size()) - 1)]);
      }
      ph.visual = centroids[t] + random_direction(rng, d, 0.8);
      ph.sentence = ph.visual + random_direction(rng, d, 0.3);
      phrases[t].push_back(std::move(ph));
    }
  }

  const int n_train = static_cast<int>(std::lround(spec.n_cases * spec.train_fraction));
  const int n_val = std::min(spec.n_cases - n_train,
                             static_cast<int>(std::lround(spec.n_cases * spec.val_fraction)));

  std::vector<Case> cases;
  cases.reserve(spec.n_cases);
  for (int c = 0; c < spec.n_cases; ++c) {
    Rng cr(spec.rng_seed, "corpus.case", {static_cast<std::uint64_t>(c)});
    Case cs;
    char id[32];
    std::snprintf(id, sizeof id, "case-%04d", c);
    cs.id = id;
    cs.split = c < n_train ? Split::kTrain : (c < n_train + n_val ? Split::kVal : Split::kTest);
    cs.topic = cr.uniform_int(0, spec.n_latent_topics - 1);
    const auto& topic_phrases = phrases[cs.topic];

    // Report: phrases in a case-specific order until the target length is
    // met, fillers interleaved, then clipped to the maximum length.
    std::vector<int> order(topic_phrases.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), cr.engine());
    const int target = cr.uniform_int(spec.report_length_min, spec.report_length_max);
    std::vector<std::string> content;
    std::vector<int> used;
    for (std::size_t k = 0; static_cast<int>(content.size()) < target; ++k) {
      const Phrase& ph = topic_phrases[order[k % order.size()]];
      if (k < order.size()) used.push_back(order[k]);
      content.insert(content.end(), ph.words.begin(), ph.words.end());
    }
    std::size_t next = 0;
    while (static_cast<int>(cs.report.size()) < target) {
      if (spec.filler_ratio > 0 && cr.uniform() < spec.filler_ratio) {
        cs.report.emplace_back(kFiller);
      } else {
        cs.report.push_back(content[next++ % content.size()]);
      }
    }

    // Patches: half near the prototypes of the phrases used, half near the
    // topic centroid, plus a small per-case offset.
    const int n_patches = cr.uniform_int(spec.patches_min, spec.patches_max);
    const RowVector offset = random_direction(cr, d, 0.25);
    Matrix patches(n_patches, d);
    for (int i = 0; i < n_patches; ++i) {
      const RowVector& centre =
          (i % 2 == 0) ? topic_phrases[used[(i / 2) % used.size()]].visual : centroids[cs.topic];
      patches.row(i) = centre + offset + random_direction(cr, d, spec.patch_noise);
    }
    std::vector<int> perm(n_patches);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), cr.engine());
    Matrix shuffled(n_patches, d);
    for (int i = 0; i < n_patches; ++i) shuffled.row(i) = patches.row(perm[i]);
    round_to_f32(shuffled);
    cs.embeddings = EmbeddingSet{cs.id, std::move(shuffled)};

    for (int p : used) {
      Sentence s;
      const Phrase& ph = topic_phrases[p];
      for (std::size_t w = 0; w < ph.words.size(); ++w) {
        if (w) s.text += ' ';
        s.text += ph.words[w];
      }
      s.embedding = ph.sentence + random_direction(cr, d, 0.05);
      round_to_f32(s.embedding);
      cs.sentences.push_back(std::move(s));
    }
    cases.push_back(std::move(cs));
  }
  return cases;
}

// ---------------------------------------------------------------------------

Vocabulary build_vocab(std::span<const std::vector<std::string>> reports, int min_freq) {
  if (min_freq < 1) throw ConfigError("min_freq", "must be >= 1");
  std::map<std::string, int> freq;
  for (const auto& r : reports) {
    for (const auto& t : r) ++freq[t];
  }
  if (freq.empty()) throw DataError("build_vocab: empty corpus");
  std::vector<std::pair<std::string, int>> items;
  for (const auto& [tok, n] : freq) {
    if (n >= min_freq) items.emplace_back(tok, n);
  }
  std::stable_sort(items.begin(), items.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  for (auto& [tok, n] : items) tokens.push_back(tok);
  return Vocabulary(std::move(tokens));
}

ReportSequence encode_report(const Vocabulary& vocab, std::span<const std::string> tokens) {
  if (tokens.empty()) throw DataError("encode_report: empty report");
  ReportSequence seq;
  seq.tokens.reserve(tokens.size());
  for (const auto& t : tokens) seq.tokens.push_back(vocab.id(t));
  return seq;
}

std::vector<std::string> decode_tokens(const Vocabulary& vocab, std::span<const int> ids) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(vocab.token(id));
  return out;
}

std::vector<const Case*> select_split(const std::vector<Case>& cases, Split split) {
  std::vector<const Case*> out;
  for (const auto& c : cases) {
    if (c.split == split) out.push_back(&c);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

json spec_to_json(const CorpusSpec& s) {
  return json{{"n_cases", s.n_cases},
              {"dim", s.dim},
              {"patches_min", s.patches_min},
              {"patches_max", s.patches_max},
              {"vocab_size", s.vocab_size},
              {"report_length_min", s.report_length_min},
              {"report_length_max", s.report_length_max},
              {"n_latent_topics", s.n_latent_topics},
              {"phrases_per_topic", s.phrases_per_topic},
              {"phrase_length_min", s.phrase_length_min},
              {"phrase_length_max", s.phrase_length_max},
              {"patch_noise", s.patch_noise},
              {"filler_ratio", s.filler_ratio},
              {"train_fraction", s.train_fraction},
              {"val_fraction", s.val_fraction},
              {"rng_seed", s.rng_seed}};
}

void write_case_file(const fs::path& path, const Case& c) {
  binio::Writer w;
  w.magic(kCaseMagic);
  w.u32(kCaseVersion);
  w.u32(static_cast<std::uint32_t>(c.embeddings.dim()));
  w.u32(static_cast<std::uint32_t>(c.embeddings.size()));
  w.u32(static_cast<std::uint32_t>(c.sentences.size()));
  const Matrix& p = c.embeddings.patches;
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (Eigen::Index j = 0; j < p.cols(); ++j) w.f32(static_cast<float>(p(i, j)));
  for (const auto& s : c.sentences) {
    if (s.embedding.size() != p.cols()) {
      throw ShapeError("case " + c.id + ": sentence embedding dimension mismatch");
    }
    for (Eigen::Index j = 0; j < s.embedding.size(); ++j) w.f32(static_cast<float>(s.embedding(j)));
  }
  w.save(path);
}

}  // namespace

void save_dataset(const fs::path& dir, const CorpusSpec& spec, const std::vector<Case>& cases) {
  fs::create_directories(dir / "cases");
  json manifest;
  manifest["format"] = "rrmoe-dataset";
  manifest["version"] = 1;
  manifest["spec"] = spec_to_json(spec);
  json entries = json::array();
  for (const auto& c : cases) {
    const std::string file = "cases/" + c.id + ".bin";
    write_case_file(dir / file, c);
    json sentences = json::array();
    for (const auto& s : c.sentences) sentences.push_back(s.text);
    entries.push_back(json{{"id", c.id},
                           {"split", split_name(c.split)},
                           {"topic", c.topic},
                           {"file", file},
                           {"report", c.report},
                           {"sentences", sentences}});
  }
  manifest["cases"] = entries;
  binio::write_text(dir / "manifest.json", manifest.dump(1) + "\n");
}

std::vector<Case> load_dataset(const fs::path& dir) {
  json manifest;
  try {
    manifest = json::parse(binio::read_text(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw DataError("bad dataset manifest in " + dir.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != "rrmoe-dataset") {
    throw DataError(dir.string() + ": not a dataset directory");
  }
  std::vector<Case> cases;
  for (const auto& e : manifest.at("cases")) {
    Case c;
    c.id = e.at("id").get<std::string>();
    c.split = parse_split(e.at("split").get<std::string>());
    c.topic = e.at("topic").get<int>();
    c.report = e.at("report").get<std::vector<std::string>>();
    const auto texts = e.at("sentences").get<std::vector<std::string>>();

    auto r = binio::Reader::open(dir / e.at("file").get<std::string>());
    r.expect_magic(kCaseMagic);
    if (r.u32() != kCaseVersion) throw DataError(r.source() + ": unsupported version");
    const int d = static_cast<int>(r.u32());
    const int n = static_cast<int>(r.u32());
    const int ns = static_cast<int>(r.u32());
    if (ns != static_cast<int>(texts.size())) {
      throw DataError(r.source() + ": sentence count disagrees with manifest");
    }
    Matrix p(n, d);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) p(i, j) = r.f32();
    c.embeddings = EmbeddingSet{c.id, std::move(p)};
    c.embeddings.validate();
    for (int s = 0; s < ns; ++s) {
      Sentence sen;
      sen.text = texts[s];
      sen.embedding.resize(d);
      for (int j = 0; j < d; ++j) sen.embedding(j) = r.f32();
      c.sentences.push_back(std::move(sen));
    }
    if (!r.at_end()) throw DataError(r.source() + ": trailing bytes");
    cases.push_back(std::move(c));
  }
  return cases;
}

}  // namespace rrmoe::corpus
