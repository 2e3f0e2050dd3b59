// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>

#include "kgelm/encoders/embedding_table.hpp"
#include "kgelm/kgstore/graph.hpp"

namespace kgelm::enc {

/// sum_d h_d r_d t_d. Throws on a length mismatch.
double distmult_score(std::span<const double> h, std::span<const double> r, std::span<const double> t);

struct DistMultResult {
  NodeEmbeddingTable entities;
  RelationEmbeddingTable relations;
};

/// Logistic loss on observed triples against corrupted ones (head or tail
/// replaced uniformly) plus cfg.l2 on every touched vector, AdaGrad updates.
/// Throws on NaN loss.
DistMultResult train_distmult(const kg::Graph& g, const EncoderConfig& cfg);

/// Probability that a true triple outscores a corrupted one. Each triple in
/// `edges` (indices into g.edges()) is paired with one corruption that is not
/// a triple of g; ties count one half.
double distmult_auc(const DistMultResult& model, const kg::Graph& g, std::span<const std::size_t> edges,
                    std::uint64_t seed);

}  // namespace kgelm::enc
