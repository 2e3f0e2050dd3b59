// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace kgelm::kg {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;

struct Entity {
  std::string cui;
  std::string label;
  std::vector<std::string> aliases;  // always contains label

  friend bool operator==(const Entity&, const Entity&) = default;
};

struct Triple {
  EntityId subject;
  RelationId predicate;
  EntityId object;

  friend auto operator<=>(const Triple&, const Triple&) = default;
};

struct Neighbor {
  RelationId relation;
  EntityId entity;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

struct LoadStats {
  std::size_t duplicate_triples = 0;
  std::size_t alias_collisions = 0;
};

/// Lowercase, punctuation stripped to spaces, whitespace collapsed.
std::string normalize_surface(std::string_view text);

/// Directed multi-relational graph. Mutable while being built; treat as
/// immutable once handed to encoders or grounding.
class Graph {
 public:
  /// Throws on duplicate cui or empty label. Inserts the label into the alias
  /// list if absent.
  EntityId add_entity(Entity entity);
  RelationId intern_relation(std::string_view name);
  /// Returns false (and counts a duplicate) when the triple already exists.
  /// Throws on self-loops and unknown ids.
  bool add_edge(Triple t);

  std::size_t num_entities() const { return entities_.size(); }
  std::size_t num_relations() const { return relations_.size(); }
  std::size_t num_edges() const { return edges_.size(); }

  const std::vector<Entity>& entities() const { return entities_; }
  const Entity& entity(EntityId id) const { return entities_.at(id); }
  std::optional<EntityId> find(std::string_view cui) const;
  /// Throws naming the cui when absent.
  EntityId id_of(std::string_view cui) const;

  const std::vector<std::string>& relations() const { return relations_; }
  const std::string& relation_name(RelationId r) const { return relations_.at(r); }
  std::optional<RelationId> find_relation(std::string_view name) const;

  const std::vector<Triple>& edges() const { return edges_; }
  /// Outgoing edges: exactly the triples whose subject is `id`.
  std::span<const Neighbor> out(EntityId id) const { return out_.at(id); }
  /// Incoming edges, reported as (relation, subject).
  std::span<const Neighbor> in(EntityId id) const { return in_.at(id); }
  std::size_t degree(EntityId id) const { return out_.at(id).size() + in_.at(id).size(); }

  /// Normalized alias -> owning entity, after collision resolution: the
  /// entity with the longest canonical label keeps the alias (ties go to the
  /// lexicographically smallest cui).
  const std::unordered_map<std::string, EntityId>& alias_table() const;

  const LoadStats& stats() const { return stats_; }
  LoadStats& mutable_stats() { return stats_; }

  /// Same entities in the same order and the same edge list, with relations
  /// compared by name (relation ids depend on first appearance in a file).
  friend bool operator==(const Graph& a, const Graph& b);

 private:
  std::vector<Entity> entities_;
  std::unordered_map<std::string, EntityId> by_cui_;
  std::vector<std::string> relations_;
  std::unordered_map<std::string, RelationId> by_relation_;
  std::vector<Triple> edges_;
  std::vector<std::vector<Neighbor>> out_;
  std::vector<std::vector<Neighbor>> in_;
  std::set<Triple> edge_set_;
  mutable std::unordered_map<std::string, EntityId> alias_table_;
  mutable bool alias_table_ready_ = false;
  mutable LoadStats stats_;
};

/// Reads a TSV triples file and a JSONL entities file.
Graph load_graph(const std::filesystem::path& triples_path, const std::filesystem::path& entities_path);
void save_graph(const Graph& g, const std::filesystem::path& triples_path,
                const std::filesystem::path& entities_path);
std::string serialize_triples(const Graph& g);
std::string serialize_entities(const Graph& g);

/// Up to k outgoing neighbors of `cui`, uniform without replacement.
std::vector<Neighbor> sample_neighbors(const Graph& g, std::string_view cui, std::size_t k, std::uint64_t seed);

struct EdgeSplit {
  std::vector<std::size_t> train;  // indices into Graph::edges(), ascending
  std::vector<std::size_t> test;
};

/// Per-relation stratified split. Relations with >= 2 edges land in both
/// halves; a relation with a single edge stays in train.
EdgeSplit split_edges(const Graph& g, double test_ratio, std::uint64_t seed);

/// Same entities and relation ids as `g`, keeping only the listed edges.
Graph edge_subgraph(const Graph& g, std::span<const std::size_t> edge_indices);

}  // namespace kgelm::kg
