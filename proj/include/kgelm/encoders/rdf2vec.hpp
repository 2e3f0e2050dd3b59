// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "kgelm/encoders/embedding_table.hpp"
#include "kgelm/kgstore/graph.hpp"

namespace kgelm::enc {

/// Walk tokens: entity ids as-is, relation r as num_entities + r.
using Walk = std::vector<std::size_t>;

/// walks_per_node walks from every entity, each following up to walk_length
/// outgoing edges. A walk stops early at a node without outgoing edges.
/// Every entity's walks use their own stream seeded by (seed, entity).
std::vector<Walk> generate_walks(const kg::Graph& g, std::size_t walk_length, std::size_t walks_per_node,
                                 std::uint64_t seed);

/// Skip-gram with negative sampling over the walk corpus; returns the input
/// vectors of entity tokens. Throws when an entity has no edges at all.
NodeEmbeddingTable rdf2vec_embed(const kg::Graph& g, const EncoderConfig& cfg);

}  // namespace kgelm::enc
