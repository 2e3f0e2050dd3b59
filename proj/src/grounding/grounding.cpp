// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0

#include "kgelm/grounding/grounding.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <json.hpp>
#include <unordered_set>

#include "kgelm/error.hpp"
#include "kgelm/numkit/rng.hpp"

namespace kgelm::ground {

namespace {

struct RawToken {
  std::size_t start;
  std::size_t end;
  std::string norm;
};

// Same character classes as kg::normalize_surface, keeping byte offsets.
std::vector<RawToken> surface_tokens(std::string_view text) {
  std::vector<RawToken> out;
  std::size_t i = 0;
  auto keep = [](unsigned char c) { return std::isalnum(c) || c >= 0x80; };
  while (i < text.size()) {
    if (!keep(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    std::string norm;
    while (j < text.size() && keep(static_cast<unsigned char>(text[j]))) {
      norm.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(text[j]))));
      ++j;
    }
    out.push_back({i, j, std::move(norm)});
    i = j;
  }
  return out;
}

}  // namespace

AliasIndex::AliasIndex(const kg::Graph& g) {
  for (const auto& [alias, id] : g.alias_table()) {
    map_.emplace(alias, g.entity(id).cui);
    const auto words = static_cast<std::size_t>(std::count(alias.begin(), alias.end(), ' ')) + 1;
    max_tokens_ = std::max(max_tokens_, words);
  }
}

std::optional<std::string> AliasIndex::lookup(std::string_view alias) const {
  auto it = map_.find(kg::normalize_surface(alias));
  if (it == map_.end()) return std::nullopt;
  return it->second;
}

AliasIndex build_index(const kg::Graph& g) { return AliasIndex(g); }

GroundingResult link_entities(const AliasIndex& index, std::string_view text) {
  GroundingResult res;
  const auto toks = surface_tokens(text);
  std::unordered_set<std::string> seen;
  std::size_t i = 0;
  while (i < toks.size()) {
    const std::size_t longest = std::min(index.max_tokens_, toks.size() - i);
    bool matched = false;
    for (std::size_t len = longest; len >= 1; --len) {
      std::string key = toks[i].norm;
      for (std::size_t k = 1; k < len; ++k) key += ' ' + toks[i + k].norm;
      auto it = index.map_.find(key);
      if (it == index.map_.end()) continue;
      const std::size_t start = toks[i].start, end = toks[i + len - 1].end;
      res.spans.push_back({start, end, std::string(text.substr(start, end - start)), it->second});
      if (seen.insert(it->second).second) res.unique_cuis.push_back(it->second);
      i += len;
      matched = true;
      break;
    }
    if (!matched) ++i;
  }
  return res;
}

KgeSelection select_kges(const enc::NodeEmbeddingTable& table, std::span<const std::string> cuis, std::size_t n,
                         std::uint64_t seed) {
  for (const auto& c : cuis) {
    if (!table.index_of(c)) throw Error("select_kges: cui " + c + " not in embedding table");
  }
  const std::size_t d = table.dim();
  KgeSelection sel;
  if (n > 0) sel.rows = num::Tensor({n, d}, 0.0);
  std::vector<std::size_t> picks;
  if (cuis.size() > n) {
    num::Rng rng(seed);
    picks = rng.sample_indices(cuis.size(), n);
  } else {
    for (std::size_t i = 0; i < cuis.size(); ++i) picks.push_back(i);
  }
  for (std::size_t r = 0; r < picks.size(); ++r) {
    const auto v = table.vector(cuis[picks[r]]);
    std::copy(v.begin(), v.end(), sel.rows.row(r).begin());
    sel.selected.push_back(cuis[picks[r]]);
  }
  sel.n_padded = n - picks.size();
  return sel;
}

void write_grounding_report(const std::filesystem::path& path, std::span<const GroundingRecord> records) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : records) {
    nlohmann::json spans = nlohmann::json::array();
    for (const auto& s : r.result.spans) {
      spans.push_back({{"start", s.start}, {"end", s.end}, {"surface", s.surface}, {"cui", s.cui}});
    }
    out << nlohmann::json{{"example_id", r.example_id},
                          {"spans", spans},
                          {"cuis", r.result.unique_cuis},
                          {"n_selected", r.n_selected},
                          {"n_padded", r.n_padded}}
               .dump()
        << '\n';
  }
}

}  // namespace kgelm::ground
