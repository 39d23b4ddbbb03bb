// Copyright 2026 The rrmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "rrmoe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "rrmoe/binio.hpp"
#include "rrmoe/errors.hpp"

namespace rrmoe::metrics {

namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, long> ngram_counts(const Tokens& t, int n) {
  std::map<Ngram, long> counts;
  for (int i = 0; i + n <= static_cast<int>(t.size()); ++i) {
    ++counts[Ngram(t.begin() + i, t.begin() + i + n)];
  }
  return counts;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12f", v);
  return buf;
}

void require_aligned(std::size_t a, std::size_t b) {
  if (a != b) {
    throw DataError("metrics: " + std::to_string(a) + " candidates vs " + std::to_string(b) +
                    " references");
  }
  if (a == 0) throw DataError("metrics: empty corpus");
}

}  // namespace

BleuDetail bleu_detail(std::span<const Tokens> candidates, std::span<const Tokens> references,
                       int n) {
  require_aligned(candidates.size(), references.size());
  if (n < 1 || n > 4) throw ConfigError("bleu.n", "must be in 1..4");
  BleuDetail d;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    d.candidate_length += static_cast<long>(candidates[i].size());
    d.reference_length += static_cast<long>(references[i].size());
  }
  for (int k = 1; k <= n; ++k) {
    long clipped = 0;
    long total = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      auto ref = ngram_counts(references[i], k);
      for (const auto& [gram, count] : ngram_counts(candidates[i], k)) {
        total += count;
        auto it = ref.find(gram);
        if (it != ref.end()) clipped += std::min(count, it->second);
      }
    }
    d.precisions.push_back(total == 0 ? 0.0 : static_cast<double>(clipped) / total);
  }
  if (d.candidate_length == 0) return d;
  d.brevity_penalty =
      d.candidate_length > d.reference_length
          ? 1.0
          : std::exp(1.0 - static_cast<double>(d.reference_length) / d.candidate_length);
  double log_sum = 0.0;
  for (double p : d.precisions) {
    if (p == 0.0) return d;
    log_sum += std::log(p);
  }
  d.score = d.brevity_penalty * std::exp(log_sum / n);
  return d;
}

double bleu_n(std::span<const Tokens> candidates, std::span<const Tokens> references, int n) {
  return bleu_detail(candidates, references, n).score;
}

int lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<int> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const Tokens& candidate, const Tokens& reference, double beta) {
  if (candidate.empty() || reference.empty()) throw DataError("rouge_l: empty sequence");
  if (!(beta > 0.0)) throw ConfigError("metrics.rouge_beta", "must be > 0");
  const int l = lcs_length(candidate, reference);
  if (l == 0) return 0.0;
  const double p = static_cast<double>(l) / candidate.size();
  const double r = static_cast<double>(l) / reference.size();
  const double b2 = beta * beta;
  return (1.0 + b2) * p * r / (r + b2 * p);
}

Alignment align_unigrams(const Tokens& candidate, const Tokens& reference) {
  const int nc = static_cast<int>(candidate.size());
  const int nr = static_cast<int>(reference.size());
  std::vector<bool> used_c(nc, false), used_r(nr, false);
  Alignment a;
  for (;;) {
    int best_len = 0, best_i = 0, best_j = 0;
    for (int i = 0; i < nc; ++i) {
      for (int j = 0; j < nr; ++j) {
        int len = 0;
        while (i + len < nc && j + len < nr && !used_c[i + len] && !used_r[j + len] &&
               candidate[i + len] == reference[j + len]) {
          ++len;
        }
        if (len > best_len) {
          best_len = len;
          best_i = i;
          best_j = j;
        }
      }
    }
    if (best_len == 0) break;
    for (int t = 0; t < best_len; ++t) {
      used_c[best_i + t] = true;
      used_r[best_j + t] = true;
      a.pairs.emplace_back(best_i + t, best_j + t);
    }
  }
  std::sort(a.pairs.begin(), a.pairs.end());
  for (std::size_t k = 0; k < a.pairs.size(); ++k) {
    const bool continues = k > 0 && a.pairs[k].first == a.pairs[k - 1].first + 1 &&
                           a.pairs[k].second == a.pairs[k - 1].second + 1;
    if (!continues) ++a.chunks;
  }
  return a;
}

MeteorDetail meteor_detail(const Tokens& candidate, const Tokens& reference) {
  if (candidate.empty() || reference.empty()) throw DataError("meteor: empty sequence");
  MeteorDetail d;
  const Alignment a = align_unigrams(candidate, reference);
  d.matches = static_cast<int>(a.pairs.size());
  d.chunks = a.chunks;
  if (d.matches == 0) return d;
  d.precision = static_cast<double>(d.matches) / candidate.size();
  d.recall = static_cast<double>(d.matches) / reference.size();
  d.fmean = 10.0 * d.precision * d.recall / (d.recall + 9.0 * d.precision);
  const double frag = static_cast<double>(d.chunks) / d.matches;
  d.penalty = 0.5 * frag * frag * frag;
  d.score = d.fmean * (1.0 - d.penalty);
  return d;
}

double meteor(const Tokens& candidate, const Tokens& reference) {
  return meteor_detail(candidate, reference).score;
}

// ---------------------------------------------------------------------------

MetricsReport evaluate_corpus(std::span<const Tokens> candidates, std::span<const Tokens> references,
                              std::span<const std::string> ids, double rouge_beta) {
  require_aligned(candidates.size(), references.size());
  if (!ids.empty() && ids.size() != candidates.size()) {
    throw DataError("evaluate_corpus: id count does not match the corpus");
  }
  MetricsReport rep;
  for (int n = 1; n <= 4; ++n) rep.bleu[n - 1] = bleu_n(candidates, references, n);
  double meteor_sum = 0.0;
  double rouge_sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (references[i].empty()) throw DataError("evaluate_corpus: empty reference");
    CaseScores cs;
    cs.id = ids.empty() ? std::to_string(i) : ids[i];
    if (!candidates[i].empty()) {
      for (int n = 1; n <= 4; ++n) {
        cs.bleu[n - 1] = bleu_n(candidates.subspan(i, 1), references.subspan(i, 1), n);
      }
      cs.meteor = meteor(candidates[i], references[i]);
      cs.rouge_l = rouge_l(candidates[i], references[i], rouge_beta);
    }
    meteor_sum += cs.meteor;
    rouge_sum += cs.rouge_l;
    rep.cases.push_back(std::move(cs));
  }
  rep.meteor = meteor_sum / static_cast<double>(candidates.size());
  rep.rouge_l = rouge_sum / static_cast<double>(candidates.size());
  return rep;
}

std::string MetricsReport::to_text() const {
  std::ostringstream os;
  const double vals[6] = {bleu[0], bleu[1], bleu[2], bleu[3], meteor, rouge_l};
  for (int i = 0; i < 6; ++i) os << kMetricNames[i] << " = " << fmt(vals[i]) << "\n";
  os << "cases = " << cases.size() << "\n";
  os << "\nid";
  for (const char* name : kMetricNames) os << "\t" << name;
  os << "\n";
  for (const CaseScores& c : cases) {
    os << c.id;
    for (double b : c.bleu) os << "\t" << fmt(b);
    os << "\t" << fmt(c.meteor) << "\t" << fmt(c.rouge_l) << "\n";
  }
  return os.str();
}

MetricsReport MetricsReport::from_text(const std::string& text) {
  MetricsReport rep;
  std::istringstream is(text);
  std::string line;
  std::map<std::string, double> kv;
  bool in_table = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (!in_table && line.rfind("id\t", 0) == 0) {
      in_table = true;
      continue;
    }
    if (!in_table) {
      const auto eq = line.find(" = ");
      if (eq == std::string::npos) throw DataError("metrics report: malformed line '" + line + "'");
      kv[line.substr(0, eq)] = std::stod(line.substr(eq + 3));
      continue;
    }
    std::istringstream ls(line);
    CaseScores c;
    std::getline(ls, c.id, '\t');
    for (double& b : c.bleu) ls >> b;
    ls >> c.meteor >> c.rouge_l;
    if (!ls) throw DataError("metrics report: malformed case row '" + line + "'");
    rep.cases.push_back(std::move(c));
  }
  double* slots[6] = {&rep.bleu[0], &rep.bleu[1], &rep.bleu[2], &rep.bleu[3], &rep.meteor,
                      &rep.rouge_l};
  for (int i = 0; i < 6; ++i) {
    auto it = kv.find(kMetricNames[i]);
    if (it == kv.end()) throw DataError(std::string("metrics report: missing ") + kMetricNames[i]);
    *slots[i] = it->second;
  }
  return rep;
}

void write_report(const std::filesystem::path& path, const MetricsReport& report) {
  binio::write_text(path, report.to_text());
}

MetricsReport read_report(const std::filesystem::path& path) {
  return MetricsReport::from_text(binio::read_text(path));
}

}  // namespace rrmoe::metrics
