// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0

#include "kgelm/encoders/distmult.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "kgelm/error.hpp"
#include "kgelm/numkit/rng.hpp"

namespace kgelm::enc {

double distmult_score(std::span<const double> h, std::span<const double> r, std::span<const double> t) {
  if (h.size() != r.size() || h.size() != t.size()) {
    throw Error("distmult_score: dimension mismatch (" + std::to_string(h.size()) + ", " +
                std::to_string(r.size()) + ", " + std::to_string(t.size()) + ")");
  }
  double s = 0.0;
  // h*t first so that swapping head and tail is bit-exact.
  for (std::size_t d = 0; d < h.size(); ++d) s += (h[d] * t[d]) * r[d];
  return s;
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// Corrupts head or tail (even chance) with a uniformly drawn different entity.
kg::Triple corrupt(const kg::Triple& t, std::size_t n, num::Rng& rng) {
  kg::Triple c = t;
  const bool head = rng.uniform_index(2) == 0;
  for (;;) {
    const auto e = static_cast<kg::EntityId>(rng.uniform_index(n));
    if (head) {
      if (e == t.subject || e == t.object) continue;
      c.subject = e;
    } else {
      if (e == t.object || e == t.subject) continue;
      c.object = e;
    }
    return c;
  }
}

}  // namespace

DistMultResult train_distmult(const kg::Graph& g, const EncoderConfig& cfg) {
  cfg.validate();
  if (cfg.kind != EncoderKind::distmult) throw Error("train_distmult: config kind is not distmult");
  if (g.num_entities() < 3) throw Error("train_distmult: need at least 3 entities");
  const std::size_t n = g.num_entities(), n_rel = g.num_relations(), d = cfg.d_g;
  num::Rng rng(num::mix_seed(cfg.seed, num::hash_bytes("distmult")));
  num::Tensor ent({n, d}), rel({std::max<std::size_t>(n_rel, 1), d});
  const double std = 1.0 / std::sqrt(static_cast<double>(d));
  for (auto& x : ent.data()) x = std * rng.normal();
  for (auto& x : rel.data()) x = rng.normal();
  num::Tensor ent_acc({n, d}, 1e-8), rel_acc(rel.shape(), 1e-8);

  const double l2 = cfg.l2;
  std::vector<double> gh(d), gr(d), gt(d);
  auto update = [&](const kg::Triple& t, double label) {
    auto h = ent.row(t.subject), r = rel.row(t.predicate), o = ent.row(t.object);
    const double s = distmult_score(h, r, o);
    // d/ds softplus(-label * s)
    const double dl = -label * sigmoid(-label * s);
    for (std::size_t k = 0; k < d; ++k) {
      gh[k] = dl * r[k] * o[k] + l2 * h[k];
      gr[k] = dl * h[k] * o[k] + l2 * r[k];
      gt[k] = dl * h[k] * r[k] + l2 * o[k];
    }
    auto apply = [&](std::span<double> p, std::span<double> acc, const std::vector<double>& gv) {
      for (std::size_t k = 0; k < d; ++k) {
        acc[k] += gv[k] * gv[k];
        p[k] -= cfg.lr * gv[k] / std::sqrt(acc[k]);
      }
    };
    apply(h, ent_acc.row(t.subject), gh);
    apply(r, rel_acc.row(t.predicate), gr);
    apply(o, ent_acc.row(t.object), gt);
    return softplus(-label * s);
  };

  std::vector<std::size_t> order(g.num_edges());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    for (auto idx : order) {
      const auto& t = g.edges()[idx];
      total += update(t, 1.0);
      for (std::size_t j = 0; j < cfg.negatives_per_positive; ++j) total += update(corrupt(t, n, rng), -1.0);
    }
    if (!std::isfinite(total)) throw Error("DistMult training diverged (NaN loss)");
  }

  DistMultResult out;
  out.entities = table_from_graph_rows(g, std::move(ent));
  out.relations.names = g.relations();
  out.relations.vectors = std::move(rel);
  return out;
}

double distmult_auc(const DistMultResult& model, const kg::Graph& g, std::span<const std::size_t> edges,
                    std::uint64_t seed) {
  if (edges.empty()) throw Error("distmult_auc: no edges");
  const std::set<kg::Triple> known(g.edges().begin(), g.edges().end());
  const num::Tensor ent = model.entities.aligned_to(g);
  auto rel_row = [&](kg::RelationId r) {
    const auto& name = g.relation_name(r);
    const auto it = std::find(model.relations.names.begin(), model.relations.names.end(), name);
    if (it == model.relations.names.end()) throw Error("distmult_auc: model has no relation " + name);
    return model.relations.vectors.row(static_cast<std::size_t>(it - model.relations.names.begin()));
  };
  auto score = [&](const kg::Triple& t) { return distmult_score(ent.row(t.subject), rel_row(t.predicate), ent.row(t.object)); };

  std::vector<std::pair<double, int>> scored;  // (score, 1 = true)
  num::Rng rng(num::mix_seed(seed, num::hash_bytes("distmult.auc")));
  for (auto idx : edges) {
    const auto& t = g.edges().at(idx);
    scored.emplace_back(score(t), 1);
    kg::Triple c;
    do {
      c = corrupt(t, g.num_entities(), rng);
    } while (known.count(c));
    scored.emplace_back(score(c), 0);
  }
  // Mann-Whitney U with midranks for ties.
  std::sort(scored.begin(), scored.end());
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < scored.size();) {
    std::size_t j = i;
    while (j < scored.size() && scored[j].first == scored[i].first) ++j;
    const double mid = 0.5 * static_cast<double>(i + j + 1);  // 1-based average rank
    for (std::size_t k = i; k < j; ++k) {
      if (scored[k].second == 1) rank_sum += mid;
    }
    i = j;
  }
  const double np = static_cast<double>(edges.size());
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * np);
}

}  // namespace kgelm::enc
