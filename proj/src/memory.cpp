// Copyright 2026 The rrmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "rrmoe/memory.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rrmoe/binio.hpp"
#include "rrmoe/errors.hpp"

namespace rrmoe::memory {

using ad::Var;

namespace {

constexpr const char* kBankMagic = "RRMBANK1";
constexpr std::uint32_t kBankVersion = 1;

// Indices of the n largest values; ties broken by lower index.
std::vector<int> top_indices(std::span<const double> values, int n) {
  std::vector<int> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto better = [&](int a, int b) {
    return values[a] > values[b] || (values[a] == values[b] && a < b);
  };
  std::partial_sort(idx.begin(), idx.begin() + n, idx.end(), better);
  idx.resize(n);
  return idx;
}

}  // namespace

MemoryBank::MemoryBank(std::vector<std::string> sentences, Matrix embeddings)
    : sentences_(std::move(sentences)), embeddings_(std::move(embeddings)) {
  if (embeddings_.rows() < 1) throw DataError("memory bank: no entries");
  if (static_cast<Eigen::Index>(sentences_.size()) != embeddings_.rows()) {
    throw ShapeError("memory bank: sentence count != embedding rows");
  }
  if (!embeddings_.allFinite()) throw DataError("memory bank: non-finite embedding");
}

void MemoryBank::save(const std::filesystem::path& path) const {
  binio::Writer w;
  w.magic(kBankMagic);
  w.u32(kBankVersion);
  w.u32(static_cast<std::uint32_t>(size()));
  w.u32(static_cast<std::uint32_t>(dim()));
  for (Eigen::Index i = 0; i < embeddings_.rows(); ++i)
    for (Eigen::Index j = 0; j < embeddings_.cols(); ++j) w.f32(static_cast<float>(embeddings_(i, j)));
  for (const auto& s : sentences_) w.str(s);
  w.save(path);
}

MemoryBank MemoryBank::load(const std::filesystem::path& path) {
  auto r = binio::Reader::open(path);
  r.expect_magic(kBankMagic);
  if (r.u32() != kBankVersion) throw DataError(r.source() + ": unsupported bank version");
  const std::uint32_t m = r.u32();
  const std::uint32_t d = r.u32();
  Matrix emb(m, d);
  for (std::uint32_t i = 0; i < m; ++i)
    for (std::uint32_t j = 0; j < d; ++j) emb(i, j) = r.f32();
  std::vector<std::string> sentences;
  sentences.reserve(m);
  for (std::uint32_t i = 0; i < m; ++i) sentences.push_back(r.str());
  if (!r.at_end()) throw DataError(r.source() + ": trailing bytes");
  return MemoryBank(std::move(sentences), std::move(emb));
}

MemoryBank build_memory_bank(std::span<const corpus::Case* const> cases) {
  if (cases.empty()) throw DataError("build_memory_bank: no cases");
  std::vector<std::string> sentences;
  std::vector<const RowVector*> rows;
  int dim = -1;
  for (const corpus::Case* c : cases) {
    if (c->split != corpus::Split::kTrain) {
      throw DataError("build_memory_bank: case " + c->id + " is not in the training split");
    }
    for (const auto& s : c->sentences) {
      if (dim < 0) dim = static_cast<int>(s.embedding.size());
      if (s.embedding.size() != dim) {
        throw ShapeError("build_memory_bank: case " + c->id + " has a sentence of dimension " +
                         std::to_string(s.embedding.size()) + ", expected " + std::to_string(dim));
      }
      sentences.push_back(s.text);
      rows.push_back(&s.embedding);
    }
  }
  if (rows.empty()) throw DataError("build_memory_bank: cases carry no sentences");
  Matrix emb(static_cast<Eigen::Index>(rows.size()), dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    // Bank files hold float32; keep the in-memory bank identical to a reload.
    emb.row(static_cast<Eigen::Index>(i)) =
        rows[i]->unaryExpr([](double x) { return static_cast<double>(static_cast<float>(x)); });
  }
  return MemoryBank(std::move(sentences), std::move(emb));
}

MemoryBank build_memory_bank(std::span<const corpus::Case> cases) {
  std::vector<const corpus::Case*> ptrs;
  for (const auto& c : cases) ptrs.push_back(&c);
  return build_memory_bank(std::span<const corpus::Case* const>(ptrs));
}

// ---------------------------------------------------------------------------

std::vector<int> select_salient_patches(std::span<const double> scores, double ratio) {
  if (!(ratio > 0.0 && ratio <= 1.0)) {
    throw ConfigError("patch_ratio", "must be in (0, 1], got " + std::to_string(ratio));
  }
  if (scores.empty()) throw ShapeError("select_salient_patches: no scores");
  for (double s : scores) {
    if (!std::isfinite(s)) throw DataError("select_salient_patches: non-finite score");
  }
  const int n = static_cast<int>(scores.size());
  // The epsilon keeps exact products such as 0.7 * 10 from rounding up.
  const int keep = std::clamp(static_cast<int>(std::ceil(ratio * n - 1e-9)), 1, n);
  return top_indices(scores, keep);
}

std::vector<RegionToken> pool_regions(const Matrix& selected, int group_size,
                                      std::span<const int> member_ids) {
  if (group_size < 1) throw ConfigError("group_size", "must be >= 1");
  if (!member_ids.empty() && static_cast<Eigen::Index>(member_ids.size()) != selected.rows()) {
    throw ShapeError("pool_regions: member id count != selected rows");
  }
  std::vector<RegionToken> regions;
  for (Eigen::Index start = 0; start < selected.rows(); start += group_size) {
    const Eigen::Index n = std::min<Eigen::Index>(group_size, selected.rows() - start);
    RegionToken r;
    r.embedding = selected.middleRows(start, n).colwise().sum() / static_cast<double>(n);
    for (Eigen::Index i = start; i < start + n; ++i) {
      r.members.push_back(member_ids.empty() ? static_cast<int>(i) : member_ids[i]);
    }
    regions.push_back(std::move(r));
  }
  return regions;
}

double cosine_similarity(const RowVector& a, const RowVector& b) {
  if (a.size() != b.size()) throw ShapeError("cosine_similarity: dimension mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw DataError("cosine similarity undefined for a zero vector");
  return a.dot(b) / (na * nb);
}

std::vector<int> coarse_recall(const RowVector& region, const MemoryBank& bank, int recall_size) {
  if (recall_size < 1 || recall_size > bank.size()) {
    throw ConfigError("recall_size", "must be in [1, " + std::to_string(bank.size()) + "], got " +
                                         std::to_string(recall_size));
  }
  if (region.size() != bank.dim()) throw ShapeError("coarse_recall: dimension mismatch");
  std::vector<double> sims(bank.size());
  for (int i = 0; i < bank.size(); ++i) {
    sims[i] = cosine_similarity(region, bank.embeddings().row(i));
  }
  return top_indices(sims, recall_size);
}

// ---------------------------------------------------------------------------

Reranker Reranker::make(const std::string& prefix, int dim, int hidden, Rng& rng) {
  return {condense::fan_in_param(prefix + ".w1", 2 * dim, hidden, rng),
          condense::constant_param(prefix + ".b1", 1, hidden, 0.0),
          condense::fan_in_param(prefix + ".w2", hidden, 1, rng),
          condense::constant_param(prefix + ".b2", 1, 1, 0.0)};
}

Reranker Reranker::zeros(const std::string& prefix, int dim, int hidden) {
  return {condense::constant_param(prefix + ".w1", 2 * dim, hidden, 0.0),
          condense::constant_param(prefix + ".b1", 1, hidden, 0.0),
          condense::constant_param(prefix + ".w2", hidden, 1, 0.0),
          condense::constant_param(prefix + ".b2", 1, 1, 0.0)};
}

Var Reranker::score(ad::Tape& tape, Var region, Var candidates) const {
  if (region.rows() != 1 || region.cols() != dim() || candidates.cols() != dim()) {
    throw ShapeError("rerank: expected 1x" + std::to_string(dim()) + " region and Cx" +
                     std::to_string(dim()) + " candidates");
  }
  const std::vector<int> rep(static_cast<std::size_t>(candidates.rows()), 0);
  const Var pair[] = {ad::gather_rows(region, rep), candidates};
  Var h = ad::gelu(ad::linear(ad::concat_cols(pair), tape.param(w1), tape.param(b1)));
  return ad::linear(h, tape.param(w2), tape.param(b2));
}

void Reranker::visit(const condense::MutableParamVisitor& f) {
  for (Parameter* p : {&w1, &b1, &w2, &b2}) f(*p);
}

double rerank_score(const Reranker& reranker, const RowVector& region, const RowVector& candidate) {
  ad::Tape tape(false);
  return reranker.score(tape, tape.constant(region), tape.constant(candidate)).scalar();
}

// ---------------------------------------------------------------------------

Var aggregate_topk(Var candidates, Var scores, int k, Aggregate* info) {
  if (k < 1) throw ConfigError("final_topk", "must be >= 1");
  if (scores.cols() != 1 || scores.rows() != candidates.rows()) {
    throw ShapeError("aggregate_topk: need one score per candidate");
  }
  if (k > candidates.rows()) {
    throw ConfigError("final_topk", "k=" + std::to_string(k) + " exceeds " +
                                        std::to_string(candidates.rows()) + " candidates");
  }
  const Matrix& sv = scores.value();
  std::vector<int> sel = top_indices(std::span<const double>(sv.data(), sv.rows()), k);
  Var w = ad::softmax_rows(ad::transpose(ad::gather_rows(scores, sel)));
  if (info) {
    info->selected = sel;
    info->weights = w.value().row(0);
  }
  return ad::matmul(w, ad::gather_rows(candidates, sel));
}

RowVector aggregate_topk(const Matrix& candidates, std::span<const double> scores, int k,
                         Aggregate* info) {
  ad::Tape tape(false);
  Matrix s(static_cast<Eigen::Index>(scores.size()), 1);
  for (std::size_t i = 0; i < scores.size(); ++i) s(static_cast<Eigen::Index>(i), 0) = scores[i];
  return aggregate_topk(tape.constant(candidates), tape.constant(std::move(s)), k, info)
      .value()
      .row(0);
}

// ---------------------------------------------------------------------------

Var retrieve(ad::Tape& tape, const std::vector<RegionToken>& regions, const MemoryBank& bank,
             int recall_size, int k, const Reranker* reranker, RetrievalResult* result) {
  if (regions.empty()) throw ShapeError("retrieve: no regions");
  if (k > recall_size) {
    throw ConfigError("final_topk", "must not exceed recall_size (" + std::to_string(recall_size) + ")");
  }
  if (result) result->regions.clear();
  std::vector<Var> rows;
  for (const RegionToken& region : regions) {
    RegionRetrieval info;
    info.candidates = coarse_recall(region.embedding, bank, recall_size);
    Matrix cand(recall_size, bank.dim());
    for (int i = 0; i < recall_size; ++i) cand.row(i) = bank.embeddings().row(info.candidates[i]);
    Var cv = tape.constant(std::move(cand));
    Var scores;
    if (reranker) {
      scores = reranker->score(tape, tape.constant(region.embedding), cv);
    } else {
      Matrix s(recall_size, 1);
      for (int i = 0; i < recall_size; ++i) {
        s(i, 0) = cosine_similarity(region.embedding, bank.embeddings().row(info.candidates[i]));
      }
      scores = tape.constant(std::move(s));
    }
    Aggregate agg;
    Var out = aggregate_topk(cv, scores, k, &agg);
    rows.push_back(out);
    if (result) {
      const Matrix& sv = scores.value();
      info.scores.assign(sv.data(), sv.data() + sv.rows());
      for (int p : agg.selected) info.selected.push_back(info.candidates[p]);
      info.weights = agg.weights;
      info.embedding = out.value().row(0);
      result->regions.push_back(std::move(info));
    }
  }
  return rows.size() == 1 ? rows[0] : ad::concat_rows(rows);
}

RetrievalResult retrieve(const std::vector<RegionToken>& regions, const MemoryBank& bank,
                         int recall_size, int k, const Reranker* reranker) {
  ad::Tape tape(false);
  RetrievalResult result;
  retrieve(tape, regions, bank, recall_size, k, reranker, &result);
  return result;
}

}  // namespace rrmoe::memory
