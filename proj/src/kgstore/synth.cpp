// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0

#include "kgelm/kgstore/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <string>

#include "kgelm/error.hpp"
#include "kgelm/numkit/rng.hpp"

namespace kgelm::kg {

namespace {

constexpr std::array kAttributeNames = {"has_finding_site", "has_causative_agent", "has_severity",
                                        "has_course",       "has_method",          "has_intent"};
constexpr std::array kStructuralNames = {"interacts_with", "part_of", "associated_with",
                                         "may_treat",      "co_occurs_with", "isa"};

constexpr std::array kOnsets = {"b", "br", "d", "dr", "f", "g", "gr", "k", "kl", "l", "m", "n",
                                "p", "pr", "r", "s", "st", "t", "tr", "v", "z", "sh", "th"};
constexpr std::array kVowels = {"a", "e", "i", "o", "u", "ai", "ou"};
constexpr std::array kCodas = {"", "", "n", "r", "s", "x", "l", "k", "m"};

// English words used by prompt templates; generated names must not shadow them.
const std::set<std::string>& reserved_words() {
  static const std::set<std::string> words = {
      "address", "agent",    "answer",  "based",    "best",     "concept", "concepts", "course",
      "directly", "explain", "find",    "finding",  "following", "from",   "given",    "graph",
      "ignore",   "information", "input", "intent",  "irrelevant", "label", "medical",  "method",
      "more",     "option",  "options", "please",   "question", "repeat",  "represented", "severity",
      "site",     "syndrome", "text",   "these",    "useful",   "what",    "which",    "with",
      "word",     "words",   "name",    "none",     "sure",     "matches", "same",     "causative"};
  return words;
}

class WordMaker {
 public:
  explicit WordMaker(num::Rng& rng) : rng_(rng) {}

  std::string fresh() {
    while (true) {
      std::string w;
      const auto syllables = 2 + rng_.uniform_index(2);
      for (std::uint64_t s = 0; s < syllables; ++s) {
        w += kOnsets[rng_.uniform_index(kOnsets.size())];
        w += kVowels[rng_.uniform_index(kVowels.size())];
        w += kCodas[rng_.uniform_index(kCodas.size())];
      }
      if (w.size() >= 4 && !reserved_words().count(w) && used_.insert(w).second) return w;
    }
  }

 private:
  num::Rng& rng_;
  std::set<std::string> used_;
};

std::string make_cui(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "C%07zu", index + 1000);
  return buf;
}

std::string relation_name(const auto& names, std::size_t i, const char* fallback) {
  if (i < names.size()) return names[i];
  return std::string(fallback) + std::to_string(i);
}

}  // namespace

std::string relation_phrase(std::string_view relation) {
  std::string s(relation);
  if (s.rfind("has_", 0) == 0) s = s.substr(4);
  std::replace(s.begin(), s.end(), '_', ' ');
  return s;
}

SyntheticKG generate_synthetic_kg(const SyntheticConfig& cfg) {
  if (cfg.n_entities < 10) throw Error("generate_synthetic_kg: n_entities must be >= 10");
  if (cfg.n_relations < 2) throw Error("generate_synthetic_kg: n_relations must be >= 2");
  if (cfg.values_per_attribute < 2) throw Error("generate_synthetic_kg: values_per_attribute must be >= 2");
  const std::size_t n_attr = std::max<std::size_t>(1, cfg.n_relations / 2);
  const std::size_t n_struct = cfg.n_relations - n_attr;
  const std::size_t n_values = n_attr * cfg.values_per_attribute;
  if (cfg.n_entities < 2 * n_values) {
    throw Error("generate_synthetic_kg: " + std::to_string(cfg.n_entities) + " entities cannot cover " +
                std::to_string(n_values) + " attribute values without isolated nodes");
  }
  if (cfg.homophily < 0.0 || cfg.homophily > 1.0) throw Error("generate_synthetic_kg: homophily must be in [0, 1]");
  if (cfg.degree_mean < 1.0) {
    throw Error("generate_synthetic_kg: degree_mean < 1 leaves concepts without edges");
  }

  num::Rng rng(num::mix_seed(cfg.seed, 0x5EED));
  WordMaker words(rng);
  SyntheticKG out;
  Graph& g = out.graph;

  for (std::size_t a = 0; a < n_attr; ++a) {
    out.attribute_relations.push_back(g.intern_relation(relation_name(kAttributeNames, a, "has_attribute_")));
  }
  for (std::size_t s = 0; s < n_struct; ++s) {
    out.structural_relations.push_back(g.intern_relation(relation_name(kStructuralNames, s, "related_")));
  }

  std::size_t next = 0;
  out.attribute_values.resize(n_attr);
  for (std::size_t a = 0; a < n_attr; ++a) {
    for (std::size_t v = 0; v < cfg.values_per_attribute; ++v) {
      Entity e{make_cui(next++), words.fresh(), {}};
      e.aliases.push_back(e.label);
      if (rng.uniform() < 0.5) e.aliases.push_back(words.fresh());
      out.attribute_values[a].push_back(g.add_entity(std::move(e)));
    }
  }
  const std::size_t n_concepts = cfg.n_entities - n_values;
  for (std::size_t c = 0; c < n_concepts; ++c) {
    Entity e{make_cui(next++), words.fresh(), {}};
    e.aliases.push_back(e.label);
    const auto extra = rng.uniform_index(3);  // 0..2 additional surface forms
    if (extra >= 1) e.aliases.push_back(words.fresh());
    if (extra >= 2) e.aliases.push_back(e.label + " syndrome");
    out.concepts.push_back(g.add_entity(std::move(e)));
  }

  // Attribute facts: relations and values dealt round-robin over a shuffled
  // concept order, so every value has at least one concept.
  std::vector<std::size_t> order(n_concepts);
  for (std::size_t i = 0; i < n_concepts; ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> value_perm(n_attr);
  for (std::size_t a = 0; a < n_attr; ++a) {
    value_perm[a].resize(cfg.values_per_attribute);
    for (std::size_t v = 0; v < cfg.values_per_attribute; ++v) value_perm[a][v] = v;
    rng.shuffle(value_perm[a]);
  }
  std::vector<std::size_t> dealt(n_attr, 0);
  out.facts.resize(n_concepts);
  for (std::size_t i = 0; i < n_concepts; ++i) {
    const auto c = order[i];
    const auto a = i % n_attr;
    const auto v = value_perm[a][dealt[a]++ % cfg.values_per_attribute];
    const AttributeFact fact{out.concepts[c], out.attribute_relations[a], out.attribute_values[a][v]};
    out.facts[c] = fact;
  }
  for (const auto& f : out.facts) g.add_edge({f.concept_id, f.relation, f.value});

  // Structural edges between concepts.
  std::vector<std::size_t> concept_type(n_concepts);
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> by_type(n_struct);
  std::map<std::pair<std::size_t, EntityId>, std::vector<std::size_t>> by_type_value;
  for (std::size_t i = 0; i < n_concepts; ++i) {
    const auto c = order[i];
    concept_type[c] = i % n_struct;
    by_type[i % n_struct].push_back(c);
    by_type_value[{i % n_struct, out.facts[c].value}].push_back(c);
  }
  const auto n_struct_edges =
      static_cast<std::size_t>(std::llround((cfg.degree_mean - 1.0) * static_cast<double>(n_concepts)));
  std::size_t added = 0, attempts = 0;
  while (added < n_struct_edges && attempts < 50 * n_struct_edges + 100) {
    ++attempts;
    const auto s = rng.uniform_index(n_concepts);
    // Objects of a type-t subject are drawn from type t+1 (mod the type
    // count), preferring concepts that share the subject's attribute value.
    const auto target = (concept_type[s] + 1) % n_struct;
    const auto same = by_type_value.find({target, out.facts[s].value});
    const bool homophilous = same != by_type_value.end() && rng.uniform() < cfg.homophily;
    const auto& pool = homophilous ? same->second : by_type[target];
    const auto o = pool[rng.uniform_index(pool.size())];
    if (s == o) continue;
    const Triple t{out.concepts[s], out.structural_relations[concept_type[s]], out.concepts[o]};
    const auto before = g.stats().duplicate_triples;
    if (g.add_edge(t)) {
      ++added;
    } else {
      g.mutable_stats().duplicate_triples = before;
    }
  }
  g.alias_table();
  return out;
}

}  // namespace kgelm::kg
