// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0

#include "kgelm/encoders/embedding_table.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "kgelm/error.hpp"
#include "kgelm/numkit/rng.hpp"

namespace kgelm::enc {

NodeEmbeddingTable::NodeEmbeddingTable(std::vector<std::string> cuis, num::Tensor vectors)
    : cuis_(std::move(cuis)), vectors_(std::move(vectors)) {
  if (vectors_.rank() != 2 || vectors_.rows() != cuis_.size()) {
    throw Error("NodeEmbeddingTable: expected [" + std::to_string(cuis_.size()) + ", d] vectors, got " +
                num::shape_str(vectors_.shape()));
  }
  if (!vectors_.all_finite()) throw Error("NodeEmbeddingTable: non-finite entry");
  for (std::size_t i = 0; i < cuis_.size(); ++i) {
    if (!index_.emplace(cuis_[i], i).second) throw Error("NodeEmbeddingTable: duplicate cui " + cuis_[i]);
  }
}

std::optional<std::size_t> NodeEmbeddingTable::index_of(std::string_view cui) const {
  auto it = index_.find(std::string(cui));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::span<const double> NodeEmbeddingTable::vector(std::string_view cui) const {
  const auto i = index_of(cui);
  if (!i) throw Error("embedding table has no entry for cui " + std::string(cui));
  return vectors_.row(*i);
}

num::Tensor NodeEmbeddingTable::aligned_to(const kg::Graph& g) const {
  num::Tensor out({g.num_entities(), dim()});
  for (std::size_t e = 0; e < g.num_entities(); ++e) {
    const auto src = vector(g.entity(static_cast<kg::EntityId>(e)).cui);
    std::copy(src.begin(), src.end(), out.row(e).begin());
  }
  return out;
}

bool NodeEmbeddingTable::covers(const kg::Graph& g) const {
  for (const auto& e : g.entities()) {
    if (!index_of(e.cui)) return false;
  }
  return true;
}

NodeEmbeddingTable table_from_graph_rows(const kg::Graph& g, num::Tensor rows) {
  std::vector<std::string> cuis;
  cuis.reserve(g.num_entities());
  for (const auto& e : g.entities()) cuis.push_back(e.cui);
  return NodeEmbeddingTable(std::move(cuis), std::move(rows));
}

std::string_view kind_name(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::graphsage: return "graphsage";
    case EncoderKind::egraphsage: return "egraphsage";
    case EncoderKind::distmult: return "distmult";
    case EncoderKind::rdf2vec: return "rdf2vec";
  }
  return "?";
}

EncoderKind parse_kind(std::string_view name) {
  for (auto k : {EncoderKind::graphsage, EncoderKind::egraphsage, EncoderKind::distmult, EncoderKind::rdf2vec}) {
    if (kind_name(k) == name) return k;
  }
  throw Error("unknown encoder kind '" + std::string(name) + "'");
}

void EncoderConfig::validate() const {
  auto need = [](bool ok, const char* field) {
    if (!ok) throw Error(std::string("encoder config: ") + field + " must be positive");
  };
  need(d_g >= 2, "d_g");
  need(lr > 0.0, "lr");
  need(negatives_per_positive > 0, "negatives_per_positive");
  switch (kind) {
    case EncoderKind::egraphsage:
      need(edge_dim > 0, "edge_dim");
      [[fallthrough]];
    case EncoderKind::graphsage:
      need(layers > 0, "layers");
      need(neighbor_sample_k > 0, "neighbor_sample_k");
      need(batch_size > 0, "batch_size");
      break;
    case EncoderKind::distmult:
      break;
    case EncoderKind::rdf2vec:
      need(walk_length > 0, "walk_length");
      need(walks_per_node > 0, "walks_per_node");
      need(window > 0, "window");
      break;
  }
}

EncoderConfig default_config(EncoderKind kind) {
  EncoderConfig cfg;
  cfg.kind = kind;
  switch (kind) {
    case EncoderKind::graphsage:
    case EncoderKind::egraphsage:
      cfg.lr = 0.01;
      cfg.epochs = 10;
      break;
    case EncoderKind::distmult:
      cfg.lr = 0.2;
      cfg.epochs = 50;
      break;
    case EncoderKind::rdf2vec:
      cfg.lr = 0.025;
      cfg.epochs = 5;
      break;
  }
  return cfg;
}

NodeEmbeddingTable init_node_features(const kg::Graph& g, std::size_t d_g, std::uint64_t seed) {
  if (d_g < 2) throw Error("init_node_features: d_g must be >= 2");
  num::Tensor rows({g.num_entities(), d_g});
  for (std::size_t e = 0; e < g.num_entities(); ++e) {
    num::Rng rng(num::mix_seed(seed, num::hash_bytes(g.entity(static_cast<kg::EntityId>(e)).label)));
    auto row = rows.row(e);
    double norm = 0.0;
    for (auto& x : row) {
      x = rng.normal();
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : row) x /= norm;
  }
  return table_from_graph_rows(g, std::move(rows));
}

void write_embedding_csv(const NodeEmbeddingTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "cui";
  for (std::size_t d = 0; d < table.dim(); ++d) out << ",dim_" << d;
  out << '\n';
  char buf[32];
  for (std::size_t i = 0; i < table.size(); ++i) {
    out << table.cuis()[i];
    for (double x : table.matrix().row(i)) {
      std::snprintf(buf, sizeof buf, "%.17g", x);
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw Error("write failed: " + path.string());
}

NodeEmbeddingTable read_embedding_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(path.string() + ": empty embedding file");
  std::size_t dim = 0;
  {
    std::stringstream ss(line);
    std::string field;
    std::getline(ss, field, ',');
    if (field != "cui") throw Error(path.string() + ": header must start with 'cui'");
    while (std::getline(ss, field, ',')) {
      if (field != "dim_" + std::to_string(dim)) throw Error(path.string() + ": bad header column " + field);
      ++dim;
    }
  }
  if (dim == 0) throw Error(path.string() + ": no dimension columns");
  std::vector<std::string> cuis;
  std::vector<double> values;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::getline(ss, field, ',');
    cuis.push_back(field);
    std::size_t got = 0;
    while (std::getline(ss, field, ',')) {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
      if (ec != std::errc() || ptr != field.data() + field.size()) {
        throw Error(path.string() + ":" + std::to_string(lineno) + ": bad number '" + field + "'");
      }
      values.push_back(v);
      ++got;
    }
    if (got != dim) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(dim) +
                  " values, got " + std::to_string(got));
    }
  }
  const auto n = cuis.size();
  if (n == 0) throw Error(path.string() + ": no rows");
  return NodeEmbeddingTable(std::move(cuis), num::Tensor({n, dim}, std::move(values)));
}

}  // namespace kgelm::enc
