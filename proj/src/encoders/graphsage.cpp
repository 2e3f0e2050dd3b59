// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0

#include "kgelm/encoders/graphsage.hpp"

#include <algorithm>
#include <cmath>

#include "kgelm/error.hpp"
#include "kgelm/numkit/rng.hpp"

namespace kgelm::enc {

using num::Var;

num::ParamList SageWeights::params() const {
  num::ParamList out;
  for (std::size_t l = 0; l < layers.size(); ++l) out.push_back({"sage.W" + std::to_string(l), layers[l]});
  if (edge_aware()) out.push_back({"sage.edge_types", edge_types});
  return out;
}

SageWeights init_sage_weights(std::size_t n_relations, const EncoderConfig& cfg, bool edge_aware) {
  num::Rng rng(num::mix_seed(cfg.seed, num::hash_bytes("sage.init")));
  SageWeights w;
  const std::size_t extra = edge_aware ? cfg.edge_dim : 0;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::size_t fan_in = 2 * cfg.d_g + extra;
    num::Tensor t({cfg.d_g, fan_in});
    const double std = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& x : t.data()) x = std * rng.normal();
    w.layers.emplace_back(std::move(t), true, "sage.W" + std::to_string(l));
  }
  if (edge_aware) {
    if (n_relations == 0) throw Error("eGraphSAGE: graph has no relations");
    num::Tensor e({2 * n_relations, cfg.edge_dim});
    const double std = 1.0 / std::sqrt(static_cast<double>(cfg.edge_dim));
    for (auto& x : e.data()) x = std * rng.normal();
    w.edge_types = Var(std::move(e), true, "sage.edge_types");
  }
  return w;
}

std::vector<LayerSample> sample_layers(const kg::Graph& g, std::size_t layers, std::size_t k,
                                       std::uint64_t seed) {
  const std::size_t n = g.num_entities();
  const std::size_t n_rel = g.num_relations();
  std::vector<LayerSample> out(layers);
  std::vector<std::pair<std::size_t, std::size_t>> cand;  // (node, edge type)
  for (std::size_t l = 0; l < layers; ++l) {
    auto& s = out[l];
    s.nodes.resize(n);
    s.edge_types.resize(n);
    for (std::size_t v = 0; v < n; ++v) {
      const auto id = static_cast<kg::EntityId>(v);
      cand.clear();
      for (const auto& nb : g.out(id)) cand.emplace_back(nb.entity, nb.relation);
      for (const auto& nb : g.in(id)) cand.emplace_back(nb.entity, n_rel + nb.relation);
      if (cand.empty()) {
        s.nodes[v] = {v};
        continue;
      }
      if (cand.size() <= k) {
        for (const auto& [u, t] : cand) {
          s.nodes[v].push_back(u);
          s.edge_types[v].push_back(t);
        }
      } else {
        num::Rng rng(num::mix_seed(seed, l, v));
        for (auto i : rng.sample_indices(cand.size(), k)) {
          s.nodes[v].push_back(cand[i].first);
          s.edge_types[v].push_back(cand[i].second);
        }
      }
    }
  }
  return out;
}

Var sage_forward_all(const Var& features, std::span<const LayerSample> samples, const SageWeights& w) {
  if (samples.size() != w.layers.size()) {
    throw Error("sage_forward_all: " + std::to_string(samples.size()) + " samples for " +
                std::to_string(w.layers.size()) + " layers");
  }
  Var h = features;
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    Var z = num::concat_cols(h, num::aggregate_mean(h, samples[l].nodes));
    if (w.edge_aware()) z = num::concat_cols(z, num::aggregate_mean(w.edge_types, samples[l].edge_types));
    if (z.value().cols() != w.layers[l].value().cols()) {
      throw Error("sage_forward_all: layer " + std::to_string(l) + " expects input width " +
                  std::to_string(w.layers[l].value().cols()) + ", got " + std::to_string(z.value().cols()));
    }
    Var y = num::matmul_nt(z, w.layers[l]);
    if (l + 1 < w.layers.size()) y = num::relu(y);
    h = num::l2_normalize_rows(y);
  }
  return h;
}

namespace {

std::vector<double> forward_one(const NodeEmbeddingTable& table, const kg::Graph& g, std::string_view cui,
                                const SageWeights& w, std::size_t k, std::uint64_t seed) {
  const auto id = g.id_of(cui);
  num::NoGradGuard no_grad;
  const auto samples = sample_layers(g, w.layers.size(), k, seed);
  const Var out = sage_forward_all(num::constant(table.aligned_to(g)), samples, w);
  const auto row = out.value().row(id);
  return {row.begin(), row.end()};
}

struct PairBatch {
  std::vector<std::size_t> u, v;          // positives
  std::vector<std::size_t> nu, neg;       // negatives, Q per positive
};

Var unsupervised_loss(const Var& z, const PairBatch& b, std::size_t q) {
  const Var pos = num::rows_dot(num::gather_rows(z, b.u), num::gather_rows(z, b.v));
  const Var neg = num::rows_dot(num::gather_rows(z, b.nu), num::gather_rows(z, b.neg));
  return num::add(num::mean(num::softplus(num::scale(pos, -1.0))),
                  num::scale(num::mean(num::softplus(neg)), static_cast<double>(q)));
}

void add_pair(PairBatch& b, const kg::Triple& t, std::size_t q, std::size_t n, num::Rng& rng) {
  b.u.push_back(t.subject);
  b.v.push_back(t.object);
  for (std::size_t j = 0; j < q; ++j) {
    b.nu.push_back(t.subject);
    b.neg.push_back(rng.uniform_index(n));
  }
}

SageResult train_sage(const kg::Graph& g, const EncoderConfig& cfg, bool edge_aware) {
  cfg.validate();
  if (g.num_edges() < 2) throw Error("GraphSAGE training needs at least 2 edges");
  const std::size_t n = g.num_entities();
  const std::size_t q = cfg.negatives_per_positive;
  const Var features = num::constant(init_node_features(g, cfg.d_g, cfg.seed).aligned_to(g));

  SageResult result;
  result.weights = init_sage_weights(g.num_relations(), cfg, edge_aware);
  auto params = result.weights.params();

  // Hold out a tenth of the edges as a fixed loss probe.
  std::vector<std::size_t> order(g.num_edges());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  num::Rng split_rng(num::mix_seed(cfg.seed, num::hash_bytes("sage.split")));
  split_rng.shuffle(order);
  const std::size_t n_held = std::max<std::size_t>(1, order.size() / 10);
  PairBatch held;
  for (std::size_t i = 0; i < n_held; ++i) add_pair(held, g.edges()[order[i]], q, n, split_rng);
  std::vector<std::size_t> pool(order.begin() + static_cast<std::ptrdiff_t>(n_held), order.end());

  const auto infer_samples = sample_layers(g, cfg.layers, cfg.neighbor_sample_k, cfg.seed);
  auto heldout = [&] {
    num::NoGradGuard no_grad;
    const double v = unsupervised_loss(sage_forward_all(features, infer_samples, result.weights), held, q).item();
    if (!std::isfinite(v)) throw Error("GraphSAGE training diverged (NaN loss)");
    return v;
  };
  result.heldout_loss.push_back(heldout());

  num::AdamState adam;
  num::Rng rng(num::mix_seed(cfg.seed, num::hash_bytes("sage.train")));
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(pool);
    for (std::size_t start = 0, step = 0; start < pool.size(); start += cfg.batch_size, ++step) {
      PairBatch b;
      const std::size_t end = std::min(pool.size(), start + cfg.batch_size);
      for (std::size_t i = start; i < end; ++i) add_pair(b, g.edges()[pool[i]], q, n, rng);
      const auto samples =
          sample_layers(g, cfg.layers, cfg.neighbor_sample_k, num::mix_seed(cfg.seed, epoch + 1, step + 1));
      const Var loss = unsupervised_loss(sage_forward_all(features, samples, result.weights), b, q);
      if (!std::isfinite(loss.item())) throw Error("GraphSAGE training diverged (NaN loss)");
      num::zero_grads(params);
      num::backward(loss);
      num::adam_step(params, adam, cfg.lr);
    }
    result.heldout_loss.push_back(heldout());
  }

  {
    num::NoGradGuard no_grad;
    result.table = table_from_graph_rows(g, sage_forward_all(features, infer_samples, result.weights).value());
  }
  if (edge_aware) {
    for (const auto& r : g.relations()) result.edge_types.names.push_back(r);
    for (const auto& r : g.relations()) result.edge_types.names.push_back(r + ":in");
    result.edge_types.vectors = result.weights.edge_types.value();
  }
  return result;
}

}  // namespace

std::vector<double> graphsage_forward(const NodeEmbeddingTable& table, const kg::Graph& g, std::string_view cui,
                                      const SageWeights& w, std::size_t k, std::uint64_t seed) {
  if (w.edge_aware()) throw Error("graphsage_forward: weights are edge-aware; use egraphsage_forward");
  return forward_one(table, g, cui, w, k, seed);
}

std::vector<double> egraphsage_forward(const NodeEmbeddingTable& table, const kg::Graph& g, std::string_view cui,
                                       const SageWeights& w, std::size_t k, std::uint64_t seed) {
  if (!w.edge_aware()) throw Error("egraphsage_forward: weights have no edge-type table");
  if (w.edge_types.value().rows() != 2 * g.num_relations()) {
    throw Error("egraphsage_forward: edge-type table does not cover the graph's relations");
  }
  return forward_one(table, g, cui, w, k, seed);
}

SageResult train_graphsage(const kg::Graph& g, const EncoderConfig& cfg) {
  if (cfg.kind != EncoderKind::graphsage) throw Error("train_graphsage: config kind is not graphsage");
  return train_sage(g, cfg, false);
}

SageResult train_egraphsage(const kg::Graph& g, const EncoderConfig& cfg) {
  if (cfg.kind != EncoderKind::egraphsage) throw Error("train_egraphsage: config kind is not egraphsage");
  return train_sage(g, cfg, true);
}

}  // namespace kgelm::enc
