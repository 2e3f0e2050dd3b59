// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <json.hpp>

#include "kgelm/encoders/embedding_table.hpp"
#include "kgelm/grounding/grounding.hpp"
#include "kgelm/toylm/model.hpp"
#include "kgelm/toylm/vocab.hpp"

namespace kgelm::pipe {

struct StructureMetrics {
  std::size_t n = 0;  // nodes compared
  std::size_t k = 0;
  /// Mean Jaccard overlap of cosine k-nearest-neighbour sets.
  double knn_jaccard = 0;
  /// Spearman correlation of pairwise Euclidean distances (midranks for ties).
  double distance_spearman = 0;

  nlohmann::ordered_json to_json() const;
};

/// Compares neighbourhood structure before and after a mapping. Both tables
/// must hold the same cuis. At most max_nodes cuis are compared, drawn with
/// seed when the tables are larger. Throws when k >= the compared count.
StructureMetrics structure_metrics(const enc::NodeEmbeddingTable& pre, const enc::NodeEmbeddingTable& post,
                                   std::size_t k, std::uint64_t seed, std::size_t max_nodes = 500);

/// Spearman rank correlation with midranks. Sizes must match and be >= 2.
double spearman(std::span<const double> a, std::span<const double> b);

struct ProbeResult {
  std::string prompt;
  std::string completion;
  ground::GroundingRecord grounding;
};

/// Grounds question, injects n mapped rows and greedily decodes.
ProbeResult probe(const lm::DecoderLM& lm, const lm::Vocab& vocab, const ground::AliasIndex& index,
                  const enc::NodeEmbeddingTable& mapped, std::string_view question, std::size_t n,
                  std::uint64_t seed, std::size_t max_new);

}  // namespace kgelm::pipe
