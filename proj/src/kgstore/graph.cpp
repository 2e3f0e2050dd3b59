// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0

#include "kgelm/kgstore/graph.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <json.hpp>
#include <map>
#include <sstream>

#include "kgelm/error.hpp"
#include "kgelm/numkit/rng.hpp"

namespace kgelm::kg {

std::string normalize_surface(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (unsigned char ch : text) {
    const bool keep = std::isalnum(ch) || ch >= 0x80;
    if (!keep) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(ch)));
  }
  return out;
}

EntityId Graph::add_entity(Entity entity) {
  if (entity.cui.empty()) throw Error("entity with empty cui");
  if (entity.label.empty()) throw Error("entity " + entity.cui + " has an empty label");
  if (by_cui_.count(entity.cui)) throw Error("duplicate cui " + entity.cui);
  if (std::find(entity.aliases.begin(), entity.aliases.end(), entity.label) == entity.aliases.end()) {
    entity.aliases.insert(entity.aliases.begin(), entity.label);
  }
  const auto id = static_cast<EntityId>(entities_.size());
  by_cui_.emplace(entity.cui, id);
  entities_.push_back(std::move(entity));
  out_.emplace_back();
  in_.emplace_back();
  alias_table_ready_ = false;
  return id;
}

RelationId Graph::intern_relation(std::string_view name) {
  if (name.empty()) throw Error("empty relation name");
  auto it = by_relation_.find(std::string(name));
  if (it != by_relation_.end()) return it->second;
  const auto id = static_cast<RelationId>(relations_.size());
  relations_.emplace_back(name);
  by_relation_.emplace(std::string(name), id);
  return id;
}

bool Graph::add_edge(Triple t) {
  if (t.subject >= entities_.size() || t.object >= entities_.size()) throw Error("edge references unknown entity id");
  if (t.predicate >= relations_.size()) throw Error("edge references unknown relation id");
  if (t.subject == t.object) {
    throw Error("self-loop rejected: (" + entities_[t.subject].cui + ", " + relations_[t.predicate] + ", " +
                entities_[t.object].cui + ")");
  }
  if (!edge_set_.insert(t).second) {
    ++stats_.duplicate_triples;
    return false;
  }
  edges_.push_back(t);
  out_[t.subject].push_back({t.predicate, t.object});
  in_[t.object].push_back({t.predicate, t.subject});
  return true;
}

bool operator==(const Graph& a, const Graph& b) {
  if (a.entities_ != b.entities_ || a.edges_.size() != b.edges_.size()) return false;
  for (std::size_t i = 0; i < a.edges_.size(); ++i) {
    const auto& x = a.edges_[i];
    const auto& y = b.edges_[i];
    if (x.subject != y.subject || x.object != y.object ||
        a.relations_[x.predicate] != b.relations_[y.predicate]) {
      return false;
    }
  }
  return std::set<std::string>(a.relations_.begin(), a.relations_.end()) ==
         std::set<std::string>(b.relations_.begin(), b.relations_.end());
}

std::optional<EntityId> Graph::find(std::string_view cui) const {
  auto it = by_cui_.find(std::string(cui));
  if (it == by_cui_.end()) return std::nullopt;
  return it->second;
}

EntityId Graph::id_of(std::string_view cui) const {
  auto id = find(cui);
  if (!id) throw Error("unknown cui " + std::string(cui));
  return *id;
}

std::optional<RelationId> Graph::find_relation(std::string_view name) const {
  auto it = by_relation_.find(std::string(name));
  if (it == by_relation_.end()) return std::nullopt;
  return it->second;
}

const std::unordered_map<std::string, EntityId>& Graph::alias_table() const {
  if (alias_table_ready_) return alias_table_;
  std::map<std::string, std::vector<EntityId>> owners;
  for (EntityId id = 0; id < entities_.size(); ++id) {
    for (const auto& alias : entities_[id].aliases) {
      auto key = normalize_surface(alias);
      if (key.empty()) continue;
      auto& v = owners[key];
      if (std::find(v.begin(), v.end(), id) == v.end()) v.push_back(id);
    }
  }
  alias_table_.clear();
  stats_.alias_collisions = 0;
  for (auto& [key, ids] : owners) {
    if (ids.size() > 1) ++stats_.alias_collisions;
    const auto best = *std::min_element(ids.begin(), ids.end(), [&](EntityId a, EntityId b) {
      const auto& ea = entities_[a];
      const auto& eb = entities_[b];
      if (ea.label.size() != eb.label.size()) return ea.label.size() > eb.label.size();
      return ea.cui < eb.cui;
    });
    alias_table_.emplace(key, best);
  }
  alias_table_ready_ = true;
  return alias_table_;
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    fields.push_back(line.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return fields;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace

Graph load_graph(const std::filesystem::path& triples_path, const std::filesystem::path& entities_path) {
  Graph g;
  std::ifstream ents(entities_path);
  if (!ents) throw Error("cannot open entities file " + entities_path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ents, line)) {
    ++lineno;
    strip_cr(line);
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(entities_path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    Entity e;
    e.cui = rec.at("cui").get<std::string>();
    e.label = rec.at("label").get<std::string>();
    if (rec.contains("aliases")) e.aliases = rec.at("aliases").get<std::vector<std::string>>();
    g.add_entity(std::move(e));
  }

  std::ifstream tri(triples_path);
  if (!tri) throw Error("cannot open triples file " + triples_path.string());
  lineno = 0;
  while (std::getline(tri, line)) {
    ++lineno;
    strip_cr(line);
    if (line.empty() || line[0] == '#') continue;
    auto f = split_tabs(line);
    if (f.size() != 3) {
      throw Error(triples_path.string() + ":" + std::to_string(lineno) + ": expected 3 tab-separated fields");
    }
    const auto s = g.find(f[0]);
    const auto o = g.find(f[2]);
    if (!s || !o) {
      throw Error(triples_path.string() + ":" + std::to_string(lineno) + ": triple (" + f[0] + ", " + f[1] +
                  ", " + f[2] + ") references unknown cui " + (!s ? f[0] : f[2]));
    }
    g.add_edge({*s, g.intern_relation(f[1]), *o});
  }
  g.alias_table();
  return g;
}

std::string serialize_triples(const Graph& g) {
  std::string out;
  for (const auto& t : g.edges()) {
    out += g.entity(t.subject).cui;
    out += '\t';
    out += g.relation_name(t.predicate);
    out += '\t';
    out += g.entity(t.object).cui;
    out += '\n';
  }
  return out;
}

std::string serialize_entities(const Graph& g) {
  std::string out;
  for (const auto& e : g.entities()) {
    nlohmann::json rec = {{"cui", e.cui}, {"label", e.label}, {"aliases", e.aliases}};
    out += rec.dump();
    out += '\n';
  }
  return out;
}

void save_graph(const Graph& g, const std::filesystem::path& triples_path,
                const std::filesystem::path& entities_path) {
  for (const auto& p : {triples_path, entities_path}) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  }
  std::ofstream t(triples_path, std::ios::binary | std::ios::trunc);
  std::ofstream e(entities_path, std::ios::binary | std::ios::trunc);
  if (!t || !e) throw Error("cannot write graph files");
  t << serialize_triples(g);
  e << serialize_entities(g);
}

std::vector<Neighbor> sample_neighbors(const Graph& g, std::string_view cui, std::size_t k, std::uint64_t seed) {
  const auto id = g.id_of(cui);
  const auto adj = g.out(id);
  num::Rng rng(seed);
  std::vector<Neighbor> picked;
  for (auto i : rng.sample_indices(adj.size(), k)) picked.push_back(adj[i]);
  return picked;
}

EdgeSplit split_edges(const Graph& g, double test_ratio, std::uint64_t seed) {
  if (!(test_ratio > 0.0 && test_ratio < 1.0)) throw Error("split_edges: test_ratio must lie in (0,1)");
  if (g.num_edges() < 2) throw Error("split_edges: graph has fewer than 2 edges");
  std::vector<std::vector<std::size_t>> by_rel(g.num_relations());
  for (std::size_t i = 0; i < g.num_edges(); ++i) by_rel[g.edges()[i].predicate].push_back(i);
  num::Rng rng(seed);
  EdgeSplit split;
  for (auto& idx : by_rel) {
    rng.shuffle(idx);
    std::size_t n_test = 0;
    if (idx.size() >= 2) {
      n_test = static_cast<std::size_t>(std::llround(test_ratio * static_cast<double>(idx.size())));
      n_test = std::clamp<std::size_t>(n_test, 1, idx.size() - 1);
    }
    split.test.insert(split.test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
    split.train.insert(split.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

Graph edge_subgraph(const Graph& g, std::span<const std::size_t> edge_indices) {
  Graph out;
  for (const auto& e : g.entities()) out.add_entity(e);
  for (const auto& r : g.relations()) out.intern_relation(r);
  for (const auto idx : edge_indices) {
    if (idx >= g.num_edges()) throw Error("edge_subgraph: edge index out of range");
    out.add_edge(g.edges()[idx]);
  }
  return out;
}

}  // namespace kgelm::kg
