// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "kgelm/kgstore/graph.hpp"

namespace kgelm::kg {

struct SyntheticConfig {
  std::size_t n_entities = 500;
  std::size_t n_relations = 6;
  /// Mean out-degree of concept entities (one attribute edge plus
  /// structural edges).
  double degree_mean = 3.0;
  std::size_t values_per_attribute = 4;
  std::uint64_t seed = 0;
  /// Chance that a structural edge's object shares the subject's attribute
  /// value (drawn from the same type pool otherwise).
  double homophily = 0.8;
};

/// concept --relation--> value; the only place this fact is recorded is the
/// graph edge.
struct AttributeFact {
  EntityId concept_id;
  RelationId relation;
  EntityId value;
};

struct SyntheticKG {
  Graph graph;
  std::vector<RelationId> attribute_relations;
  std::vector<RelationId> structural_relations;
  /// attribute_values[a] lists the sibling values of attribute_relations[a].
  std::vector<std::vector<EntityId>> attribute_values;
  std::vector<EntityId> concepts;
  std::vector<AttributeFact> facts;  // exactly one per concept
};

/// Desk-scale stand-in for a biomedical KG. Half the relations (rounded down,
/// at least one) are attribute relations with `values_per_attribute` value
/// entities each; every concept carries exactly one attribute fact. The rest
/// are structural concept-concept relations; each concept has a latent type
/// that fixes which structural relation its outgoing edges use and the type
/// of their objects.
SyntheticKG generate_synthetic_kg(const SyntheticConfig& cfg);

/// "has_finding_site" -> "finding site".
std::string relation_phrase(std::string_view relation);

}  // namespace kgelm::kg
