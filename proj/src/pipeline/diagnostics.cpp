// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0

#include "kgelm/pipeline/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>
#include <vector>

#include "kgelm/error.hpp"
#include "kgelm/numkit/rng.hpp"

namespace kgelm::pipe {

namespace {

std::vector<double> midranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) r[order[t]] = rank;
    i = j + 1;
  }
  return r;
}

std::vector<std::vector<std::size_t>> cosine_knn(const std::vector<std::span<const double>>& rows, std::size_t k) {
  const std::size_t n = rows.size();
  std::vector<double> norm(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (double x : rows[i]) s += x * x;
    norm[i] = std::sqrt(s);
  }
  std::vector<std::vector<std::size_t>> out(n);
  std::vector<std::pair<double, std::size_t>> sims;
  for (std::size_t i = 0; i < n; ++i) {
    sims.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double dot = 0;
      for (std::size_t c = 0; c < rows[i].size(); ++c) dot += rows[i][c] * rows[j][c];
      const double denom = norm[i] * norm[j];
      sims.emplace_back(denom > 0 ? dot / denom : 0.0, j);
    }
    std::partial_sort(sims.begin(), sims.begin() + static_cast<std::ptrdiff_t>(k), sims.end(),
                      [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
    for (std::size_t t = 0; t < k; ++t) out[i].push_back(sims[t].second);
  }
  return out;
}

std::vector<double> pairwise_distances(const std::vector<std::span<const double>>& rows) {
  std::vector<double> d;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      double s = 0;
      for (std::size_t c = 0; c < rows[i].size(); ++c) s += (rows[i][c] - rows[j][c]) * (rows[i][c] - rows[j][c]);
      d.push_back(std::sqrt(s));
    }
  }
  return d;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw Error("spearman: need two equal-length series of size >= 2");
  const auto ra = midranks(a);
  const auto rb = midranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0 || sbb == 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

nlohmann::ordered_json StructureMetrics::to_json() const {
  nlohmann::ordered_json j;
  j["n"] = n;
  j["k"] = k;
  j["knn_jaccard"] = knn_jaccard;
  j["distance_spearman"] = distance_spearman;
  return j;
}

StructureMetrics structure_metrics(const enc::NodeEmbeddingTable& pre, const enc::NodeEmbeddingTable& post,
                                   std::size_t k, std::uint64_t seed, std::size_t max_nodes) {
  if (pre.size() != post.size()) throw Error("structure_metrics: tables hold different cui sets");
  for (const auto& c : pre.cuis()) {
    if (!post.index_of(c)) throw Error("structure_metrics: cui " + c + " missing from the mapped table");
  }
  std::vector<std::size_t> pick(pre.size());
  std::iota(pick.begin(), pick.end(), 0);
  if (pre.size() > max_nodes) {
    num::Rng rng(seed);
    const auto idx = rng.sample_indices(pre.size(), max_nodes);
    pick.assign(idx.begin(), idx.end());
  }
  if (k == 0 || k >= pick.size()) throw Error("structure_metrics: k must be in [1, n)");
  std::vector<std::span<const double>> a, b;
  for (auto i : pick) {
    const auto& cui = pre.cuis()[i];
    a.push_back(pre.vector(cui));
    b.push_back(post.vector(cui));
  }
  StructureMetrics m;
  m.n = pick.size();
  m.k = k;
  const auto na = cosine_knn(a, k);
  const auto nb = cosine_knn(b, k);
  double total = 0;
  for (std::size_t i = 0; i < m.n; ++i) {
    std::unordered_set<std::size_t> sa(na[i].begin(), na[i].end());
    std::size_t inter = 0;
    for (auto j : nb[i]) inter += sa.count(j);
    total += static_cast<double>(inter) / static_cast<double>(2 * k - inter);
  }
  m.knn_jaccard = total / static_cast<double>(m.n);
  const auto da = pairwise_distances(a);
  const auto db = pairwise_distances(b);
  m.distance_spearman = spearman(da, db);
  return m;
}

ProbeResult probe(const lm::DecoderLM& lm, const lm::Vocab& vocab, const ground::AliasIndex& index,
                  const enc::NodeEmbeddingTable& mapped, std::string_view question, std::size_t n,
                  std::uint64_t seed, std::size_t max_new) {
  ProbeResult r;
  r.grounding.example_id = "probe";
  r.grounding.result = ground::link_entities(index, question);
  r.prompt = "[INST] " + std::string(question) + "\nGraph:";
  for (std::size_t i = 0; i < n; ++i) r.prompt += " " + std::string(lm::kKgePlaceholder);
  r.prompt += " [/INST]\n";
  num::Var kges;
  if (n > 0) {
    auto sel = ground::select_kges(mapped, r.grounding.result.unique_cuis, n, seed);
    r.grounding.n_selected = sel.selected.size();
    r.grounding.n_padded = sel.n_padded;
    kges = num::Var(std::move(sel.rows));
  }
  std::vector<lm::TokenId> ids{lm::kBos};
  for (auto id : lm::tokenize(vocab, r.prompt)) ids.push_back(id);
  r.completion = lm::greedy_decode_text(lm, vocab, ids, kges, max_new);
  return r;
}

}  // namespace kgelm::pipe
