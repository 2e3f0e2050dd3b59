// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>

#include "kgelm/encoders/embedding_table.hpp"
#include "kgelm/kgstore/graph.hpp"

namespace kgelm::enc {

struct EdgeClassifierConfig {
  std::size_t steps = 300;
  double lr = 0.05;
  double weight_decay = 1e-3;
};

/// Fits softmax regression from [h_s ; h_o] to the relation of each train
/// edge, then returns accuracy on the test edges. Edge lists index
/// g.edges(). Throws when a relation seen in test is absent from train or
/// the lists overlap.
double eval_edge_classification(const NodeEmbeddingTable& table, const kg::Graph& g,
                                std::span<const std::size_t> train_edges, std::span<const std::size_t> test_edges,
                                std::uint64_t seed, const EdgeClassifierConfig& cfg = {});

}  // namespace kgelm::enc
