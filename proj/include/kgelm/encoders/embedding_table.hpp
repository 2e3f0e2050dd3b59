// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kgelm/kgstore/graph.hpp"
#include "kgelm/numkit/tensor.hpp"

namespace kgelm::enc {

/// cui -> vector of length dim(). Rows are stored densely in insertion order.
class NodeEmbeddingTable {
 public:
  NodeEmbeddingTable() = default;
  /// vectors is [cuis.size(), dim]. Throws on duplicate cuis, a row count
  /// mismatch or non-finite entries.
  NodeEmbeddingTable(std::vector<std::string> cuis, num::Tensor vectors);

  std::size_t dim() const { return vectors_.empty() ? 0 : vectors_.cols(); }
  std::size_t size() const { return cuis_.size(); }
  const std::vector<std::string>& cuis() const { return cuis_; }
  const num::Tensor& matrix() const { return vectors_; }

  std::optional<std::size_t> index_of(std::string_view cui) const;
  /// Throws naming the cui when absent.
  std::span<const double> vector(std::string_view cui) const;

  /// Rows reordered to match g's entity ids. Throws if any entity is missing.
  num::Tensor aligned_to(const kg::Graph& g) const;
  bool covers(const kg::Graph& g) const;

  friend bool operator==(const NodeEmbeddingTable& a, const NodeEmbeddingTable& b) {
    return a.cuis_ == b.cuis_ && a.vectors_ == b.vectors_;
  }

 private:
  std::vector<std::string> cuis_;
  num::Tensor vectors_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Table built from a matrix whose row i belongs to entity i of g.
NodeEmbeddingTable table_from_graph_rows(const kg::Graph& g, num::Tensor rows);

/// Relation name -> vector. For DistMult these are the relation diagonals;
/// for eGraphSAGE, rows [0, R) embed outgoing edges and [R, 2R) incoming ones.
struct RelationEmbeddingTable {
  std::vector<std::string> names;
  num::Tensor vectors;
};

enum class EncoderKind { graphsage, egraphsage, distmult, rdf2vec };

std::string_view kind_name(EncoderKind kind);
/// Throws on an unknown name.
EncoderKind parse_kind(std::string_view name);

struct EncoderConfig {
  EncoderKind kind = EncoderKind::graphsage;
  std::size_t d_g = 256;
  std::size_t layers = 2;
  std::size_t neighbor_sample_k = 10;
  std::size_t negatives_per_positive = 5;
  std::size_t walk_length = 8;
  std::size_t walks_per_node = 10;
  std::size_t window = 4;
  std::size_t epochs = 10;
  double lr = 0.01;
  std::uint64_t seed = 0;
  std::size_t batch_size = 256;
  std::size_t edge_dim = 32;  // eGraphSAGE edge-type embedding width
  double l2 = 1e-2;           // DistMult regularization
  /// RDF2Vec only: accept entities without edges (they keep their initial
  /// vector). Needed when training on a split that strands a few entities.
  bool allow_isolated = false;

  /// Throws when a field used by `kind` is not positive.
  void validate() const;
};

/// Per-kind defaults for lr and epochs; other fields keep their defaults.
EncoderConfig default_config(EncoderKind kind);

/// Unit vectors drawn from a stream seeded by (seed, label bytes), so equal
/// labels get equal vectors.
NodeEmbeddingTable init_node_features(const kg::Graph& g, std::size_t d_g, std::uint64_t seed);

/// CSV with header `cui,dim_0,...`; values printed with round-trip precision.
void write_embedding_csv(const NodeEmbeddingTable& table, const std::filesystem::path& path);
NodeEmbeddingTable read_embedding_csv(const std::filesystem::path& path);

}  // namespace kgelm::enc
