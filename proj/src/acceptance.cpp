// Copyright 2026 The rrmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "rrmoe/acceptance.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <ostream>
#include <regex>
#include <set>
#include <sstream>

#include "rrmoe/binio.hpp"
#include "rrmoe/corpus.hpp"
#include "rrmoe/errors.hpp"
#include "rrmoe/memory.hpp"
#include "rrmoe/metrics.hpp"
#include "rrmoe/model.hpp"
#include "rrmoe/moe.hpp"
#include "rrmoe/pipeline.hpp"
#include "rrmoe/rng.hpp"
#include "rrmoe/train.hpp"

namespace rrmoe::acceptance {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double v, const char* f = "%.3g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Collects failed checks; the first few end up in the result detail.
class Verdict {
 public:
  void require(bool ok, const std::string& what) {
    if (ok) return;
    ++failures_;
    if (failures_ <= 3) failed_.push_back(what);
  }
  void note(const std::string& s) { notes_.push_back(s); }
  bool ok() const { return failures_ == 0; }
  std::string detail() const {
    std::string out;
    for (const auto& n : notes_) out += (out.empty() ? "" : "; ") + n;
    if (failures_ > 0) {
      out += (out.empty() ? "" : "; ") + std::string("FAILED: ");
      for (std::size_t i = 0; i < failed_.size(); ++i) out += (i ? ", " : "") + failed_[i];
      if (failures_ > 3) out += " (+" + std::to_string(failures_ - 3) + " more)";
    }
    return out;
  }

 private:
  int failures_ = 0;
  std::vector<std::string> failed_;
  std::vector<std::string> notes_;
};

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double stddev = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal(0.0, stddev);
  return m;
}

memory::MemoryBank random_bank(int size, int dim, Rng& rng) {
  std::vector<std::string> sentences;
  for (int i = 0; i < size; ++i) sentences.push_back("sentence " + std::to_string(i));
  return memory::MemoryBank(std::move(sentences), random_matrix(size, dim, rng));
}

bool bitwise_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

// ---------------------------------------------------------------------------
// Independent reference implementations

double oracle_gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

RowVector oracle_ffn(const moe::ExpertFFN& f, const RowVector& x) {
  const int d = f.dim(), h = f.hidden();
  RowVector hid(h);
  for (int j = 0; j < h; ++j) {
    double s = f.b1.value(0, j);
    for (int a = 0; a < d; ++a) s += x(a) * f.w1.value(a, j);
    hid(j) = oracle_gelu(s);
  }
  RowVector y(d);
  for (int j = 0; j < d; ++j) {
    double s = f.b2.value(0, j);
    for (int a = 0; a < h; ++a) s += hid(a) * f.w2.value(a, j);
    y(j) = s;
  }
  return y;
}

double oracle_cosine(const RowVector& a, const RowVector& b) {
  double ab = 0, aa = 0, bb = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    ab += a(i) * b(i);
    aa += a(i) * a(i);
    bb += b(i) * b(i);
  }
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

// Indices of the `k` largest values, descending, lower index first on ties.
std::vector<int> oracle_top(const std::vector<double>& v, int k) {
  std::vector<std::pair<double, int>> order;
  for (int i = 0; i < static_cast<int>(v.size()); ++i) order.emplace_back(-v[i], i);
  std::sort(order.begin(), order.end());
  std::vector<int> out;
  for (int i = 0; i < k; ++i) out.push_back(order[i].second);
  return out;
}

double oracle_rerank(const memory::Reranker& r, const RowVector& region, const RowVector& cand) {
  const int d = r.dim();
  const int h = static_cast<int>(r.w1.value.cols());
  double score = r.b2.value(0, 0);
  for (int j = 0; j < h; ++j) {
    double s = r.b1.value(0, j);
    for (int a = 0; a < d; ++a) s += region(a) * r.w1.value(a, j) + cand(a) * r.w1.value(d + a, j);
    score += oracle_gelu(s) * r.w2.value(j, 0);
  }
  return score;
}

using Tokens = metrics::Tokens;

long oracle_count(const Tokens& seq, const Tokens& gram) {
  long c = 0;
  for (std::size_t i = 0; i + gram.size() <= seq.size(); ++i) {
    bool eq = true;
    for (std::size_t t = 0; t < gram.size() && eq; ++t) eq = seq[i + t] == gram[t];
    c += eq;
  }
  return c;
}

double oracle_bleu(const std::vector<Tokens>& cands, const std::vector<Tokens>& refs, int n) {
  double c_len = 0, r_len = 0, log_p = 0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    c_len += cands[i].size();
    r_len += refs[i].size();
  }
  for (int order = 1; order <= n; ++order) {
    double match = 0, total = 0;
    for (std::size_t i = 0; i < cands.size(); ++i) {
      const Tokens& c = cands[i];
      std::set<Tokens> seen;
      for (std::size_t p = 0; p + order <= c.size(); ++p) {
        Tokens g(c.begin() + p, c.begin() + p + order);
        ++total;
        if (!seen.insert(g).second) continue;
        match += std::min(oracle_count(c, g), oracle_count(refs[i], g));
      }
    }
    if (total == 0 || match == 0) return 0.0;
    log_p += std::log(match / total);
  }
  if (c_len == 0) return 0.0;
  const double bp = c_len > r_len ? 1.0 : std::exp(1.0 - r_len / c_len);
  return bp * std::exp(log_p / n);
}

double oracle_rouge(const Tokens& c, const Tokens& r, double beta) {
  std::vector<std::vector<int>> t(c.size() + 1, std::vector<int>(r.size() + 1, 0));
  for (std::size_t i = c.size(); i-- > 0;) {
    for (std::size_t j = r.size(); j-- > 0;) {
      t[i][j] = c[i] == r[j] ? 1 + t[i + 1][j + 1] : std::max(t[i + 1][j], t[i][j + 1]);
    }
  }
  const double l = t[0][0];
  if (l == 0) return 0.0;
  const double p = l / c.size(), rec = l / r.size();
  return (1 + beta * beta) * p * rec / (rec + beta * beta * p);
}

double oracle_meteor(const Tokens& c, const Tokens& r) {
  const int nc = static_cast<int>(c.size()), nr = static_cast<int>(r.size());
  std::vector<int> map_c(nc, -1);
  std::vector<bool> used_r(nr, false);
  for (;;) {
    // Run lengths starting at (i, j) over unaligned positions.
    std::vector<std::vector<int>> run(nc + 1, std::vector<int>(nr + 1, 0));
    for (int i = nc - 1; i >= 0; --i)
      for (int j = nr - 1; j >= 0; --j)
        run[i][j] = (map_c[i] < 0 && !used_r[j] && c[i] == r[j]) ? 1 + run[i + 1][j + 1] : 0;
    int bi = -1, bj = -1, bl = 0;
    for (int i = 0; i < nc; ++i)
      for (int j = 0; j < nr; ++j)
        if (run[i][j] > bl) {
          bl = run[i][j];
          bi = i;
          bj = j;
        }
    if (bl == 0) break;
    for (int t = 0; t < bl; ++t) {
      map_c[bi + t] = bj + t;
      used_r[bj + t] = true;
    }
  }
  int m = 0, chunks = 0;
  for (int i = 0; i < nc; ++i) {
    if (map_c[i] < 0) continue;
    ++m;
    if (i == 0 || map_c[i - 1] < 0 || map_c[i - 1] != map_c[i] - 1) ++chunks;
  }
  if (m == 0) return 0.0;
  const double p = static_cast<double>(m) / nc, rec = static_cast<double>(m) / nr;
  const double fmean = 10 * p * rec / (rec + 9 * p);
  const double frag = static_cast<double>(chunks) / m;
  return fmean * (1 - 0.5 * frag * frag * frag);
}

// ---------------------------------------------------------------------------
// Shared fixtures

model::ModelConfig micro_config() {
  model::ModelConfig c;
  c.dim = 8;
  c.heads = 2;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.experts = 3;
  c.top_k = 2;
  c.ffn_dim = 16;
  c.vocab_size = 11;
  c.input_dim = 8;
  c.max_len = 12;
  c.recall_size = 6;
  c.final_topk = 3;
  c.patch_ratio = 0.5;
  c.group_size = 2;
  c.dropout = 0.0;
  c.aux_weight = 0.01;
  c.seed = 11;
  return c;
}

model::ModelConfig decoding_config() {
  model::ModelConfig c = micro_config();
  c.dim = 16;
  c.ffn_dim = 32;
  c.vocab_size = 12;
  c.max_len = 10;
  c.seed = 23;
  return c;
}

std::string group_of(const std::string& n) {
  if (n.find(".router.") != std::string::npos) return "router";
  if (n.find(".expert") != std::string::npos) return "experts";
  if (n.rfind("reranker", 0) == 0) return "reranker";
  if (n.size() >= 6 && n.compare(n.size() - 6, 6, ".token") == 0) return "tc_tokens";
  if (n == "tok_emb" || n == "type_emb") return "embeddings";
  if (n.find("attn.") != std::string::npos) return "attention";
  if (n.find(".ln") != std::string::npos || n.find("norm") != std::string::npos) return "layer_norm";
  if (n.find("ffn.") != std::string::npos) return "feed_forward";
  return "projections";
}

std::vector<train::TrainingCase> training_cases(const std::vector<corpus::Case>& cases,
                                                const corpus::Vocabulary& vocab) {
  std::vector<train::TrainingCase> out;
  for (const auto& c : cases) {
    out.push_back({c.id, &c.embeddings.patches, corpus::encode_report(vocab, c.report).tokens});
  }
  return out;
}

corpus::Vocabulary vocab_of(const std::vector<corpus::Case>& cases) {
  std::vector<std::vector<std::string>> reports;
  for (const auto& c : cases) reports.push_back(c.report);
  return corpus::build_vocab(reports, 1);
}

void log_line(const Options& o, const std::string& s) {
  if (o.log) *o.log << "  " << s << std::endl;
}

fs::path work_root(const Options& o) {
  fs::path root = o.work_dir.empty() ? fs::temp_directory_path() / "rrmoe-acceptance" : o.work_dir;
  fs::create_directories(root);
  return root;
}

fs::path fresh_dir(const fs::path& p) {
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// ---------------------------------------------------------------------------
// Criteria

void criterion_gradients(Verdict& v, const Options&) {
  const GradCheckReport r = micro_gradient_check();
  const std::set<std::string> required{"router", "experts", "reranker", "tc_tokens", "attention",
                                       "embeddings"};
  std::set<std::string> seen;
  std::string worst;
  double worst_err = -1;
  for (const auto& [g, e] : r.group_errors) {
    seen.insert(g);
    v.require(e <= 1e-3, g + " rel err " + num(e));
    if (e > worst_err) {
      worst_err = e;
      worst = g;
    }
  }
  for (const auto& [g, norm] : r.group_norms) {
    if (required.count(g)) v.require(norm > 0.0, "zero gradient in group " + g);
  }
  for (const auto& g : required) v.require(seen.count(g) != 0, "no parameters in group " + g);
  v.note(std::to_string(r.group_errors.size()) + " groups, max rel err " + num(r.max_error) +
         " (" + worst + ")");
}

void criterion_moe(Verdict& v, const Options&) {
  Rng rng(101);
  const int d = 8, hidden = 16;
  const Matrix h = random_matrix(20, d, rng);

  // E = 1 against the bare expert.
  moe::MoELayer single = moe::MoELayer::make("m1", d, hidden, 1, 1, rng);
  const Matrix routed = moe::moe_forward(h, single, nullptr);
  ad::Tape tape(false);
  const Matrix dense = single.experts[0].apply(tape, tape.constant(h)).value();
  v.require(bitwise_equal(routed, dense), "E=1 layer differs from its expert");

  // E = 1 inside the model against a dense-FFN model with the same weights.
  model::ModelConfig mc = micro_config();
  mc.experts = 1;
  mc.top_k = 1;
  model::Model with_moe(mc);
  mc.use_moe = false;
  model::Model without(mc);
  for (Parameter* p : without.parameters()) {
    std::string src = p->name;
    const auto pos = src.find(".ffn.");
    if (src.rfind("dec", 0) == 0 && pos != std::string::npos) src.replace(pos, 5, ".moe.expert0.");
    p->value = with_moe.parameter(src).value;
  }
  Rng data_rng(102);
  const memory::MemoryBank bank = random_bank(30, mc.input_dim, data_rng);
  const Matrix patches = random_matrix(10, mc.input_dim, data_rng);
  const std::vector<int> prefix{corpus::kBos, 5, 6, 7, 8};
  auto logits = [&](const model::Model& m) {
    ad::Tape t(false);
    const auto enc = m.encode(t, patches, bank, {});
    return Matrix(m.decode(t, enc.memory, prefix, {}).logits.value());
  };
  v.require(bitwise_equal(logits(with_moe), logits(without)), "E=1 model differs from dense model");

  // k = E against a full-softmax mixture.
  const int e = 4;
  moe::MoELayer full = moe::MoELayer::make("m4", d, hidden, e, e, rng);
  const Matrix mixed = moe::moe_forward(h, full, nullptr);
  double max_diff = 0;
  for (Eigen::Index i = 0; i < h.rows(); ++i) {
    std::vector<double> g(e);
    for (int x = 0; x < e; ++x) {
      g[x] = 0;
      for (int a = 0; a < d; ++a) g[x] += h(i, a) * full.router.w_clean.value(a, x);
    }
    const double mx = *std::max_element(g.begin(), g.end());
    double z = 0;
    for (double& x : g) z += (x = std::exp(x - mx));
    RowVector y = RowVector::Zero(d);
    for (int x = 0; x < e; ++x) y += (g[x] / z) * oracle_ffn(full.experts[x], h.row(i));
    max_diff = std::max(max_diff, (y - mixed.row(i)).cwiseAbs().maxCoeff());
  }
  v.require(max_diff <= 1e-6, "k=E mixture diff " + num(max_diff));
  v.note("E=1 bitwise (layer, model); k=E max diff " + num(max_diff));
}

void criterion_load_balance(Verdict& v, const Options&) {
  double worst = 0;
  for (int e : {2, 3, 4, 8}) {
    moe::LoadStats uni{RowVector::Constant(e, 1.0 / e), RowVector::Constant(e, 1.0 / e)};
    moe::LoadStats col{RowVector::Zero(e), RowVector::Zero(e)};
    col.f_usage(0) = col.p_mean(0) = 1.0;
    const double lu = moe::load_balance_loss(uni), lc = moe::load_balance_loss(col);
    v.require(std::abs(lu - 1.0) <= 1e-9, "uniform E=" + std::to_string(e) + " gives " + num(lu, "%.12g"));
    v.require(std::abs(lc - e) <= 1e-9, "collapse E=" + std::to_string(e) + " gives " + num(lc, "%.12g"));
    worst = std::max({worst, std::abs(lu - 1.0), std::abs(lc - e)});
  }

  // Through the forward pass: a zero router spreads evenly under k = E, a
  // router dominated by one expert collapses under k = 1.
  Rng rng(303);
  const int d = 6;
  for (int e : {2, 4, 8}) {
    Matrix h = random_matrix(50, d, rng);
    moe::MoELayer even = moe::MoELayer::make("even", d, 8, e, e, rng);
    even.router.w_clean.value.setZero();
    ad::Tape t1(false);
    const double aux_even = moe::moe_forward(t1, t1.constant(h), even, nullptr).aux.scalar();
    v.require(std::abs(aux_even - 1.0) <= 1e-9, "forward uniform E=" + std::to_string(e));

    h.col(0).setOnes();
    moe::MoELayer one = moe::MoELayer::make("one", d, 8, e, 1, rng);
    one.router.w_clean.value.setZero();
    one.router.w_clean.value(0, 0) = 1e4;
    ad::Tape t2(false);
    const double aux_one = moe::moe_forward(t2, t2.constant(h), one, nullptr).aux.scalar();
    v.require(std::abs(aux_one - e) <= 1e-9, "forward collapse E=" + std::to_string(e));
    worst = std::max({worst, std::abs(aux_even - 1.0), std::abs(aux_one - e)});
  }
  v.note("max deviation " + num(worst));
}

void criterion_routing(Verdict& v, const Options&) {
  Rng rng(404);
  const int d = 16, e = 8, k = 2, n = 10000;
  const moe::MoELayer layer = moe::MoELayer::make("r", d, 32, e, k, rng);
  const Matrix h = random_matrix(n, d, rng);

  std::vector<moe::GateDecision> gates, again;
  const Matrix out = moe::moe_forward(h, layer, nullptr, nullptr, &gates);
  const Matrix out2 = moe::moe_forward(h, layer, nullptr, nullptr, &again);
  v.require(bitwise_equal(out, out2), "eval-mode output not reproducible");

  int bad_count = 0, bad_sum = 0, unstable = 0;
  for (int i = 0; i < n; ++i) {
    const auto& g = gates[i];
    int nonzero = 0;
    double sum = 0;
    for (double w : g.weights) {
      nonzero += w != 0.0;
      sum += w;
    }
    std::set<int> distinct(g.experts.begin(), g.experts.end());
    bad_count += nonzero != k || distinct.size() != static_cast<std::size_t>(k);
    bad_sum += std::abs(sum - 1.0) > 1e-6;
    unstable += g.experts != again[i].experts || g.weights != again[i].weights;
  }
  v.require(bad_count == 0, std::to_string(bad_count) + " tokens without k non-zero weights");
  v.require(bad_sum == 0, std::to_string(bad_sum) + " tokens with weight sum off 1");
  v.require(unstable == 0, std::to_string(unstable) + " eval decisions changed between runs");

  // Unselected experts must not contribute.
  double mix_err = 0;
  for (int i = 0; i < 200; ++i) {
    RowVector y = RowVector::Zero(d);
    for (int s = 0; s < k; ++s) {
      y += gates[i].weights[s] * oracle_ffn(layer.experts[gates[i].experts[s]], h.row(i));
    }
    mix_err = std::max(mix_err, (y - out.row(i)).cwiseAbs().maxCoeff());
  }
  v.require(mix_err <= 1e-9, "sparse mixture mismatch " + num(mix_err));

  // Training mode: near-tied tokens route differently under different noise.
  moe::NoiseSource probe = moe::NoiseSource::random(1);
  ad::Tape tape(false);
  const moe::RouterLogits rl = moe::router_logits(tape, tape.constant(h), layer.router, &probe);
  std::vector<double> scales(rl.noise_scale.data(), rl.noise_scale.data() + rl.noise_scale.size());
  std::nth_element(scales.begin(), scales.begin() + scales.size() / 2, scales.end());
  const double median_scale = scales[scales.size() / 2];
  const Matrix clean = h * layer.router.w_clean.value;

  std::vector<moe::GateDecision> ga, gb;
  moe::NoiseSource na = moe::NoiseSource::random(7), nb = moe::NoiseSource::random(8);
  moe::moe_forward(h, layer, &na, nullptr, &ga);
  moe::moe_forward(h, layer, &nb, nullptr, &gb);
  int near = 0, changed = 0, train_bad = 0;
  for (int i = 0; i < n; ++i) {
    std::vector<double> row(clean.row(i).data(), clean.row(i).data() + e);
    std::sort(row.rbegin(), row.rend());
    std::set<int> sa(ga[i].experts.begin(), ga[i].experts.end());
    std::set<int> sb(gb[i].experts.begin(), gb[i].experts.end());
    double sum = 0;
    for (double w : ga[i].weights) {
      sum += w;
      train_bad += w == 0.0;
    }
    train_bad += sa.size() != static_cast<std::size_t>(k) || std::abs(sum - 1.0) > 1e-6;
    if (row[k - 1] - row[k] < median_scale) {
      ++near;
      changed += sa != sb;
    }
  }
  v.require(train_bad == 0, std::to_string(train_bad) + " training-mode gate violations");
  v.require(near > 0 && changed > 0, "near-tied decisions never vary with the noise seed");
  v.note(std::to_string(n) + " tokens, " + std::to_string(changed) + "/" + std::to_string(near) +
         " near-tied tokens rerouted across noise seeds (median scale " + num(median_scale) + ")");
}

void criterion_retrieval(Verdict& v, const Options&) {
  Rng rng(505);
  const int m = 500, d = 16, recall = 20, k = 3;
  const memory::MemoryBank bank = random_bank(m, d, rng);

  int recall_mismatch = 0;
  for (int q = 0; q < 1000; ++q) {
    const RowVector query = random_matrix(1, d, rng).row(0);
    std::vector<double> sims(m);
    for (int i = 0; i < m; ++i) sims[i] = oracle_cosine(query, bank.embeddings().row(i));
    recall_mismatch += memory::coarse_recall(query, bank, recall) != oracle_top(sims, recall);
  }
  v.require(recall_mismatch == 0, std::to_string(recall_mismatch) + " recall mismatches");

  const memory::Reranker reranker = memory::Reranker::make("reranker", d, 24, rng);
  std::vector<memory::RegionToken> regions(100);
  for (auto& r : regions) r.embedding = random_matrix(1, d, rng).row(0);

  double max_diff = 0;
  int sel_mismatch = 0;
  for (const memory::Reranker* rr : {&reranker, static_cast<const memory::Reranker*>(nullptr)}) {
    const memory::RetrievalResult got = memory::retrieve(regions, bank, recall, k, rr);
    for (std::size_t q = 0; q < regions.size(); ++q) {
      const RowVector& region = regions[q].embedding;
      std::vector<double> sims(m);
      for (int i = 0; i < m; ++i) sims[i] = oracle_cosine(region, bank.embeddings().row(i));
      const std::vector<int> cands = oracle_top(sims, recall);
      std::vector<double> scores;
      for (int c : cands) {
        scores.push_back(rr ? oracle_rerank(*rr, region, bank.embeddings().row(c)) : sims[c]);
      }
      const std::vector<int> top = oracle_top(scores, k);
      double mx = -1e300, z = 0;
      for (int t : top) mx = std::max(mx, scores[t]);
      RowVector emb = RowVector::Zero(d);
      std::vector<int> selected;
      for (int t : top) z += std::exp(scores[t] - mx);
      for (int t : top) {
        emb += (std::exp(scores[t] - mx) / z) * bank.embeddings().row(cands[t]);
        selected.push_back(cands[t]);
      }
      const auto& g = got.regions[q];
      sel_mismatch += g.candidates != cands || g.selected != selected;
      for (int i = 0; i < recall; ++i) max_diff = std::max(max_diff, std::abs(g.scores[i] - scores[i]));
      max_diff = std::max(max_diff, (g.embedding - emb).cwiseAbs().maxCoeff());
    }
  }
  v.require(sel_mismatch == 0, std::to_string(sel_mismatch) + " retrieval selection mismatches");
  v.require(max_diff <= 1e-10, "retrieve diff " + num(max_diff));
  v.note("1000 recall queries exact; 2x100 retrievals max diff " + num(max_diff));
}

std::vector<std::pair<std::string, std::pair<Tokens, Tokens>>> read_fixture(const fs::path& path) {
  std::vector<std::pair<std::string, std::pair<Tokens, Tokens>>> rows;
  std::istringstream is(binio::read_text(path));
  std::string line;
  auto split = [](const std::string& s) {
    std::istringstream ss(s);
    return Tokens(std::istream_iterator<std::string>(ss), std::istream_iterator<std::string>());
  };
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto a = line.find('\t');
    const auto b = line.find('\t', a + 1);
    if (a == std::string::npos || b == std::string::npos) throw DataError("fixture: bad line " + line);
    rows.push_back({line.substr(0, a), {split(line.substr(a + 1, b - a - 1)), split(line.substr(b + 1))}});
  }
  return rows;
}

void criterion_metrics(Verdict& v, const Options& o) {
  Rng rng(606);
  const char* words[] = {"a", "b", "c", "d", "e", "f"};
  double max_diff = 0;
  for (int corpus_i = 0; corpus_i < 50; ++corpus_i) {
    const int n = rng.uniform_int(1, 8);
    const int vocab = rng.uniform_int(2, 6);
    std::vector<Tokens> cands(n), refs(n);
    for (int i = 0; i < n; ++i) {
      for (Tokens* t : {&cands[i], &refs[i]}) {
        const int len = rng.uniform_int(1, 14);
        for (int j = 0; j < len; ++j) t->push_back(words[rng.uniform_int(0, vocab - 1)]);
      }
    }
    const double beta = corpus_i % 2 ? 1.0 : 1.2;
    const metrics::MetricsReport rep = metrics::evaluate_corpus(cands, refs, {}, beta);
    double met = 0, rl = 0;
    for (int i = 0; i < n; ++i) {
      met += oracle_meteor(cands[i], refs[i]);
      rl += oracle_rouge(cands[i], refs[i], beta);
    }
    for (int order = 1; order <= 4; ++order) {
      max_diff = std::max(max_diff, std::abs(rep.bleu[order - 1] - oracle_bleu(cands, refs, order)));
    }
    max_diff = std::max({max_diff, std::abs(rep.meteor - met / n), std::abs(rep.rouge_l - rl / n)});
  }
  v.require(max_diff <= 1e-9, "random corpora diff " + num(max_diff));

  // Hand-derived values.
  const Tokens cat{"the", "cat", "sat", "on", "the", "mat"};
  const Tokens ref{"the", "cat", "is", "on", "the", "mat"};
  const std::vector<Tokens> c1{cat}, r1{ref};
  const std::vector<Tokens> c2{{"the", "the", "the", "the"}}, r2{{"the", "cat"}};
  const struct {
    const char* what;
    double got, want;
  } fixtures[] = {
      {"bleu1", metrics::bleu_n(c1, r1, 1), 5.0 / 6.0},
      {"bleu2", metrics::bleu_n(c1, r1, 2), std::sqrt(0.5)},
      {"rouge_l", metrics::rouge_l(cat, ref), 5.0 / 6.0},
      {"meteor", metrics::meteor(cat, ref), 5.0 / 6.0 * (1.0 - 0.5 * 0.4 * 0.4 * 0.4)},
      {"clipped bleu1", metrics::bleu_n(c2, r2, 1), 0.25},
      {"brevity", metrics::bleu_n(r2, c1, 1), std::exp(1.0 - 6.0 / 2.0)},
  };
  for (const auto& f : fixtures) {
    v.require(std::abs(f.got - f.want) <= 1e-12, std::string("fixture ") + f.what + " = " + num(f.got, "%.12f"));
  }

  // Golden report over the committed fixture.
  const auto rows = read_fixture(o.data_dir / "metrics_fixture.tsv");
  std::vector<Tokens> gc, gr;
  std::vector<std::string> ids;
  for (const auto& [id, pair] : rows) {
    ids.push_back(id);
    gc.push_back(pair.first);
    gr.push_back(pair.second);
  }
  const std::string first = metrics::evaluate_corpus(gc, gr, ids).to_text();
  const std::string second = metrics::evaluate_corpus(gc, gr, ids).to_text();
  const std::string golden = binio::read_text(o.data_dir / "metrics_golden.txt");
  v.require(first == second, "golden report not stable across runs");
  v.require(first == golden, "report differs from metrics_golden.txt");
  v.note("50 random corpora max diff " + num(max_diff) + "; " + std::to_string(std::size(fixtures)) +
         " hand fixtures; golden file (" + std::to_string(rows.size()) + " pairs) matches");
}

// Three-step table where the greedy path is not optimal.
model::StepScorer crafted_scorer() {
  return [](std::span<const int> prefix) {
    const double lo = std::log(1e-9);
    RowVector lp = RowVector::Constant(6, lo);
    const int a = 4, b = 5, eos = corpus::kEos;
    auto set = [&](double pa, double pb, double pe) {
      lp(a) = std::log(pa);
      lp(b) = std::log(pb);
      lp(eos) = std::log(pe);
    };
    const std::vector<int> p(prefix.begin(), prefix.end());
    if (p.empty()) set(0.5, 0.4, 0.1);
    else if (p == std::vector<int>{b}) set(0.9, 0.05, 0.05);
    else if (p == std::vector<int>{b, a}) set(0.025, 0.025, 0.95);
    else set(0.3, 0.3, 0.4);
    return lp;
  };
}

void enumerate(const model::StepScorer& s, std::vector<int>& prefix, double score, int max_len,
               model::Hypothesis& best) {
  const RowVector lp = s(prefix);
  for (int t = 0; t < lp.size(); ++t) {
    prefix.push_back(t);
    const double sc = score + lp(t);
    if (t == corpus::kEos || static_cast<int>(prefix.size()) == max_len) {
      if (sc > best.score) best = {prefix, sc, t == corpus::kEos};
    } else {
      enumerate(s, prefix, sc, max_len, best);
    }
    prefix.pop_back();
  }
}

void criterion_decoding(Verdict& v, const Options&) {
  const model::ModelConfig mc = decoding_config();
  const model::Model m(mc);
  Rng rng(707);
  const memory::MemoryBank bank = random_bank(30, mc.input_dim, rng);
  const int max_len = mc.max_len;

  int mismatch = 0;
  for (int i = 0; i < 20; ++i) {
    const Matrix patches = random_matrix(rng.uniform_int(6, 12), mc.input_dim, rng);
    const auto scorer = model::model_scorer(m, patches, bank);
    const auto g = model::greedy_search(scorer, corpus::kEos, max_len);
    for (bool norm : {true, false}) {
      const auto b = model::beam_search(scorer, corpus::kEos, 1, max_len, norm);
      mismatch += b.tokens != g.tokens || b.score != g.score;
    }
  }
  v.require(mismatch == 0, std::to_string(mismatch) + " beam=1 runs differ from greedy");

  const auto crafted = crafted_scorer();
  model::Hypothesis best{{}, -1e300, false};
  std::vector<int> prefix;
  enumerate(crafted, prefix, 0.0, 3, best);
  const auto beam = model::beam_search(crafted, corpus::kEos, 3, 3, false);
  const auto greedy = model::greedy_search(crafted, corpus::kEos, 3);
  v.require(beam.tokens == best.tokens && std::abs(beam.score - best.score) <= 1e-12,
            "beam=3 missed the enumerated optimum");
  v.require(greedy.score < best.score, "crafted example does not separate greedy from the optimum");

  int worse = 0;
  double min_gain = 1e300;
  for (int i = 0; i < 50; ++i) {
    const Matrix patches = random_matrix(rng.uniform_int(6, 12), mc.input_dim, rng);
    const auto scorer = model::model_scorer(m, patches, bank);
    const double g = model::greedy_search(scorer, corpus::kEos, max_len).score;
    const double b = model::beam_search(scorer, corpus::kEos, 3, max_len, false).score;
    worse += b < g;
    min_gain = std::min(min_gain, b - g);
  }
  v.require(worse == 0, std::to_string(worse) + "/50 cases where beam=3 scores below greedy");
  v.note("beam1==greedy on 20; crafted optimum " + num(std::exp(best.score), "%.4f") +
         " vs greedy " + num(std::exp(greedy.score), "%.4f") + "; min beam-greedy gain " + num(min_gain));
}

void criterion_overfit(Verdict& v, const Options& o) {
  const auto t0 = Clock::now();
  corpus::CorpusSpec spec;
  spec.n_cases = 16;
  spec.train_fraction = 1.0;
  spec.val_fraction = 0.0;
  const auto cases = corpus::generate_synthetic_corpus(spec);
  const auto vocab = vocab_of(cases);
  const auto bank = memory::build_memory_bank(std::span<const corpus::Case>(cases));
  model::ModelConfig mc = model::ModelConfig::desk();
  mc.vocab_size = vocab.size();
  mc.input_dim = spec.dim;
  mc.dropout = 0.0;
  model::Model m(mc);
  const auto tc = training_cases(cases, vocab);

  train::TrainConfig cfg;
  cfg.epochs = 500;
  cfg.lr = 1e-3;
  cfg.batch_size = 4;
  cfg.target_nll = 0.01;
  train::TrainCallbacks cb;
  cb.on_epoch = [&](const train::EpochRecord& e) {
    if (e.epoch % 20 == 0) log_line(o, "epoch " + std::to_string(e.epoch) + " nll " + num(e.train_nll));
  };
  const train::TrainResult r = train::train(m, bank, tc, {}, cfg, cb);
  const double nll = train::evaluate_nll(m, bank, tc);

  std::vector<Tokens> cands, refs;
  for (const auto& c : tc) {
    const auto out = model::greedy_decode(m, *c.patches, bank, mc.max_len);
    cands.push_back(corpus::decode_tokens(vocab, out.tokens));
    refs.push_back(corpus::decode_tokens(vocab, c.report));
  }
  const double bleu4 = metrics::bleu_n(cands, refs, 4);
  const double secs = seconds_since(t0);
  v.require(nll < 0.05, "nll " + num(nll));
  v.require(bleu4 >= 0.95, "bleu4 " + num(bleu4, "%.4f"));
  v.require(secs < 300, "took " + num(secs) + " s");
  v.note("nll " + num(nll) + " after " + std::to_string(r.epochs.size()) + " epochs, bleu4 " +
         num(bleu4, "%.4f"));
}

struct BalanceArm {
  double max_usage = 0;  // over experts and layers
  double variance = 0;   // mean over layers of Var_e(f_usage)
};

BalanceArm balance_arm(std::uint64_t seed, double lambda) {
  corpus::CorpusSpec spec;
  spec.n_cases = 32;
  spec.train_fraction = 1.0;
  spec.val_fraction = 0.0;
  spec.dim = 32;
  spec.filler_ratio = 0.97;
  spec.report_length_min = 32;
  spec.report_length_max = 48;
  spec.rng_seed = seed;
  const auto cases = corpus::generate_synthetic_corpus(spec);
  const auto vocab = vocab_of(cases);
  const auto bank = memory::build_memory_bank(std::span<const corpus::Case>(cases));

  model::ModelConfig mc = model::ModelConfig::desk();
  mc.vocab_size = vocab.size();
  mc.input_dim = spec.dim;
  mc.dim = 32;
  mc.heads = 2;
  mc.ffn_dim = 64;
  mc.enc_layers = 1;
  mc.dec_layers = 2;
  mc.experts = 2;
  mc.top_k = 1;
  mc.dropout = 0.0;
  mc.noisy_routing = false;
  mc.aux_weight = lambda;
  mc.seed = seed;
  model::Model m(mc);
  const auto tc = training_cases(cases, vocab);

  train::TrainConfig cfg;
  cfg.epochs = 40;
  cfg.lr = 1e-3;
  cfg.batch_size = 4;
  cfg.eval_every = cfg.epochs;
  train::train(m, bank, tc, {}, cfg);

  // Token-weighted expert usage of the final model over the training set.
  std::vector<RowVector> usage(mc.dec_layers, RowVector::Zero(mc.experts));
  double tokens = 0;
  for (const auto& c : tc) {
    ad::Tape t(false);
    const auto loss = model::case_loss(t, m, *c.patches, bank, c.report, {});
    const double n = static_cast<double>(c.report.size() + 1);
    tokens += n;
    for (int l = 0; l < mc.dec_layers; ++l) usage[l] += loss.stats[l].f_usage * n;
  }
  BalanceArm arm;
  for (RowVector& u : usage) {
    u /= tokens;
    arm.max_usage = std::max(arm.max_usage, u.maxCoeff());
    arm.variance += (u.array() - u.mean()).square().mean() / mc.dec_layers;
  }
  return arm;
}

void criterion_balance(Verdict& v, const Options& o) {
  std::string summary;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const BalanceArm off = balance_arm(seed, 0.0);
    const BalanceArm on = balance_arm(seed, 0.01);
    const std::string s = "seed " + std::to_string(seed);
    log_line(o, s + ": lambda=0 max " + num(off.max_usage) + " var " + num(off.variance) +
                    "; lambda=0.01 max " + num(on.max_usage) + " var " + num(on.variance));
    v.require(on.variance < off.variance, s + " variance not reduced");
    v.require(off.max_usage > 0.9, s + " no collapse without balancing (" + num(off.max_usage) + ")");
    v.require(on.max_usage <= 0.9, s + " collapse with balancing (" + num(on.max_usage) + ")");
    summary += (summary.empty() ? "" : ", ") + num(off.max_usage, "%.2f") + "->" + num(on.max_usage, "%.2f");
  }
  v.note("max f_usage lambda 0 -> 0.01 per seed: " + summary);
}

const char* kTinyConfig =
    "seed = 5\n"
    "profile = desk\n"
    "corpus.n_cases = 12\n"
    "corpus.dim = 8\n"
    "corpus.patches_min = 6\n"
    "corpus.patches_max = 10\n"
    "corpus.report_length_min = 4\n"
    "corpus.report_length_max = 8\n"
    "corpus.train_fraction = 0.5\n"
    "corpus.val_fraction = 0.25\n"
    "model.dim = 8\n"
    "model.heads = 2\n"
    "model.enc_layers = 1\n"
    "model.dec_layers = 1\n"
    "model.ffn_dim = 16\n"
    "model.experts = 4\n"
    "model.top_k = 2\n"
    "model.max_len = 16\n"
    "model.group_size = 2\n"
    "model.dropout = 0.1\n"
    "train.epochs = 2\n"
    "train.batch_size = 2\n"
    "decode.beam = 2\n";

void criterion_ablation(Verdict& v, const Options& o) {
  const fs::path root = fresh_dir(work_root(o) / "ablation");
  const fs::path cfg = root / "tiny.cfg";
  binio::write_text(cfg, kTinyConfig);
  pipeline::gen_data(cfg, root / "data", {});

  const struct {
    const char* axis;
    std::vector<std::string> labels;
  } axes[] = {
      {"table2", {"1_baseline", "2_reranker", "3_moe", "4_noisy_topk", "5_load_balance"}},
      {"recall_size", {"K_10", "K_20", "K_50"}},
      {"final_topk", {"topk_1", "topk_3", "topk_5"}},
      {"E", {"E_2", "E_4", "E_8"}},
      {"routing_k", {"k_1", "k_2", "k_3"}},
      {"lambda", {"lambda_0", "lambda_0.001", "lambda_0.01", "lambda_0.1"}},
  };
  const std::regex row_re(R"(^\| [^|]+ \| [^|]+ \|( (✓|×) \|){4}( \d+\.\d{4} \|){6}$)");
  std::string shapes;
  for (const auto& a : axes) {
    const fs::path out = root / a.axis;
    const auto summary = pipeline::ablate(cfg, root / "data", a.axis, {}, out, {});
    std::vector<std::string> labels;
    for (const auto& r : summary.rows) labels.push_back(r.label);
    v.require(labels == a.labels, std::string(a.axis) + " rows do not match the grid");
    v.require(summary.missing.empty(), std::string(a.axis) + " has missing runs");

    std::istringstream table(binio::read_text(out / "summary.md"));
    std::string line;
    int rows = 0, lines = 0;
    while (std::getline(table, line)) {
      if (++lines <= 2) continue;
      ++rows;
      v.require(std::regex_match(line, row_re), std::string(a.axis) + " malformed row: " + line);
    }
    v.require(rows == static_cast<int>(a.labels.size()), std::string(a.axis) + " table row count");
    if (std::string(a.axis) == "table2") {
      for (std::size_t r = 0; r < summary.rows.size(); ++r) {
        const auto& s = summary.rows[r];
        const bool marks[4] = {s.reranker, s.moe, s.noisy, s.load_balance};
        for (std::size_t k = 0; k < 4; ++k) {
          v.require(marks[k] == (k < r), "table2 row " + s.label + " toggles");
        }
      }
    }
    shapes += (shapes.empty() ? "" : " ") + std::string(a.axis) + "=" + std::to_string(rows);
  }
  v.note("rows " + shapes);
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void criterion_determinism(Verdict& v, const Options& o) {
  const fs::path root = fresh_dir(work_root(o) / "determinism");
  const fs::path cfg = root / "tiny.cfg";
  binio::write_text(cfg, kTinyConfig);
  for (const char* rep : {"a", "b"}) {
    const fs::path r = root / rep;
    pipeline::gen_data(cfg, r / "data", {});
    pipeline::build_bank(r / "data", r / "bank", {});
    pipeline::train(cfg, r / "data", {}, r / "run", {});
    pipeline::generate(r / "run", {}, corpus::Split::kTest, std::nullopt, r / "gen", {});
    pipeline::evaluate(r / "gen", r / "eval", 1.0, {});
  }
  std::vector<fs::path> compared;
  for (const auto& entry : fs::recursive_directory_iterator(root / "a" / "data")) {
    if (entry.is_regular_file() && entry.path().filename() != "run.json") compared.push_back(fs::relative(entry.path(), root / "a"));
  }
  for (const char* f : {"bank/bank.bin", "run/checkpoint.bin", "run/vocab.txt", "run/bank.bin",
                        "run/loadstats.jsonl", "gen/generations.tsv", "eval/metrics.txt"}) {
    compared.emplace_back(f);
  }
  int differing = 0;
  for (const fs::path& rel : compared) {
    const fs::path a = root / "a" / rel, b = root / "b" / rel;
    const bool same = fs::exists(a) && fs::exists(b) && file_bytes(a) == file_bytes(b);
    differing += !same;
    v.require(same, rel.string() + " differs");
  }
  v.note(std::to_string(compared.size() - differing) + "/" + std::to_string(compared.size()) +
         " artifacts byte-identical across reruns");
}

using CriterionFn = void (*)(Verdict&, const Options&);

struct Criterion {
  const char* name;
  CriterionFn fn;
};

const Criterion kTable[kCriteria] = {
    {"gradient fidelity", criterion_gradients},
    {"MoE equivalences", criterion_moe},
    {"load-balance identities", criterion_load_balance},
    {"routing contract", criterion_routing},
    {"retrieval oracle", criterion_retrieval},
    {"metric oracles", criterion_metrics},
    {"decoding", criterion_decoding},
    {"overfit capability", criterion_overfit},
    {"load-balance effect", criterion_balance},
    {"ablation harness structure", criterion_ablation},
    {"determinism", criterion_determinism},
};

}  // namespace

GradCheckReport micro_gradient_check(double step) {
  const model::ModelConfig mc = micro_config();
  model::Model m(mc);
  Rng rng(909);
  const memory::MemoryBank bank = random_bank(30, mc.input_dim, rng);
  const Matrix patches = random_matrix(10, mc.input_dim, rng);
  std::vector<int> report;
  for (int i = 0; i < 6; ++i) report.push_back(rng.uniform_int(corpus::kNumReserved, mc.vocab_size - 1));

  moe::NoiseSource noise = moe::NoiseSource::recording(17);
  const model::ForwardMode mode{true, &noise, nullptr};
  m.zero_grad();
  {
    ad::Tape tape;
    const model::CaseLoss loss = model::case_loss(tape, m, patches, bank, report, mode);
    tape.backward(loss.total);
  }
  auto loss_at = [&] {
    noise.rewind();
    ad::Tape tape(false);
    return model::case_loss(tape, m, patches, bank, report, mode).total.scalar();
  };

  struct Acc {
    double diff2 = 0, a2 = 0, n2 = 0;
  };
  std::map<std::string, Acc> acc;
  for (Parameter* p : m.parameters()) {
    Acc& a = acc[group_of(p->name)];
    for (Eigen::Index i = 0; i < p->value.rows(); ++i) {
      for (Eigen::Index j = 0; j < p->value.cols(); ++j) {
        const double orig = p->value(i, j);
        p->value(i, j) = orig + step;
        const double up = loss_at();
        p->value(i, j) = orig - step;
        const double down = loss_at();
        p->value(i, j) = orig;
        const double numeric = (up - down) / (2 * step);
        const double analytic = p->grad(i, j);
        a.diff2 += (analytic - numeric) * (analytic - numeric);
        a.a2 += analytic * analytic;
        a.n2 += numeric * numeric;
      }
    }
  }
  GradCheckReport r;
  for (const auto& [g, a] : acc) {
    const double denom = std::max(std::sqrt(a.a2), std::sqrt(a.n2));
    const double err = denom == 0 ? 0.0 : std::sqrt(a.diff2) / denom;
    r.group_errors.emplace_back(g, err);
    r.group_norms.emplace_back(g, std::sqrt(a.a2));
    r.max_error = std::max(r.max_error, err);
  }
  return r;
}

const char* criterion_name(int id) {
  if (id < 1 || id > kCriteria) throw ConfigError("selftest.criterion", "must be in 1..11");
  return kTable[id - 1].name;
}

Result run_criterion(int id, const Options& options) {
  Result r;
  r.id = id;
  r.name = criterion_name(id);
  const auto t0 = Clock::now();
  Verdict v;
  try {
    kTable[id - 1].fn(v, options);
  } catch (const std::exception& e) {
    v.require(false, std::string("exception: ") + e.what());
  }
  r.passed = v.ok();
  r.detail = v.detail();
  r.seconds = seconds_since(t0);
  return r;
}

std::string format_result(const Result& r) {
  return std::string(r.passed ? "[PASS] " : "[FAIL] ") + std::to_string(r.id) + " " + r.name + " (" +
         num(r.seconds, "%.2f") + " s): " + r.detail;
}

}  // namespace rrmoe::acceptance
