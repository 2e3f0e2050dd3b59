// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0
//
// GraphSAGE with the mean aggregator and concatenation, plus an edge-aware
// variant whose neighbor messages carry a learned edge-type embedding:
//
//   plain:      h_v' = norm(act(W [h_v ; mean_u h_u]))
//   edge-aware: h_v' = norm(act(W [h_v ; mean_u h_u ; mean_u e_type(u,v)]))
//
// Neighborhoods are undirected (in and out edges). An edge's type is its
// relation together with its direction as seen from v, so a graph with R
// relations has 2R edge types. A node without neighbors aggregates itself
// (and a zero edge embedding). act is ReLU on every layer but the last.

#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "kgelm/encoders/embedding_table.hpp"
#include "kgelm/kgstore/graph.hpp"
#include "kgelm/numkit/autograd.hpp"
#include "kgelm/numkit/optim.hpp"

namespace kgelm::enc {

struct SageWeights {
  /// layers[l] is [d_out, 2*d_in] (plus edge_dim columns when edge-aware).
  std::vector<num::Var> layers;
  /// [2R, edge_dim]; undefined for plain GraphSAGE.
  num::Var edge_types;

  bool edge_aware() const { return edge_types.defined(); }
  num::ParamList params() const;
};

SageWeights init_sage_weights(std::size_t n_relations, const EncoderConfig& cfg, bool edge_aware);

/// One sampled neighborhood per layer.
struct LayerSample {
  std::vector<std::vector<std::size_t>> nodes;       // per entity; never empty
  std::vector<std::vector<std::size_t>> edge_types;  // per entity; empty if isolated
};

/// Up to k undirected neighbors per entity per layer, seeded by (seed, layer,
/// entity).
std::vector<LayerSample> sample_layers(const kg::Graph& g, std::size_t layers, std::size_t k,
                                       std::uint64_t seed);

/// Embeddings of every entity; features is [n_entities, d_in] in graph order.
num::Var sage_forward_all(const num::Var& features, std::span<const LayerSample> samples,
                          const SageWeights& w);

/// Output for one entity. Throws on an unknown cui or when the weights are of
/// the wrong variant.
std::vector<double> graphsage_forward(const NodeEmbeddingTable& table, const kg::Graph& g,
                                      std::string_view cui, const SageWeights& w, std::size_t k,
                                      std::uint64_t seed);
std::vector<double> egraphsage_forward(const NodeEmbeddingTable& table, const kg::Graph& g,
                                       std::string_view cui, const SageWeights& w, std::size_t k,
                                       std::uint64_t seed);

struct SageResult {
  NodeEmbeddingTable table;
  SageWeights weights;
  RelationEmbeddingTable edge_types;  // empty for plain GraphSAGE
  /// Held-out unsupervised loss; entry 0 is before training, then one per epoch.
  std::vector<double> heldout_loss;
};

/// Unsupervised negative-sampling objective over edges. Throws on NaN loss.
SageResult train_graphsage(const kg::Graph& g, const EncoderConfig& cfg);
SageResult train_egraphsage(const kg::Graph& g, const EncoderConfig& cfg);

}  // namespace kgelm::enc
