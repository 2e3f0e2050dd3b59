// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dictionary entity linking and fixed-size KGE selection.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kgelm/encoders/embedding_table.hpp"
#include "kgelm/kgstore/graph.hpp"
#include "kgelm/numkit/tensor.hpp"

namespace kgelm::ground {

/// Byte offsets [start, end) into the linked text.
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string surface;
  std::string cui;

  friend bool operator==(const Span&, const Span&) = default;
};

struct GroundingResult {
  std::vector<Span> spans;
  std::vector<std::string> unique_cuis;  // first-occurrence order

  friend bool operator==(const GroundingResult&, const GroundingResult&) = default;
};

/// Normalized alias -> cui, built from the graph's collision-resolved alias
/// table. Immutable after construction.
class AliasIndex {
 public:
  AliasIndex() = default;
  explicit AliasIndex(const kg::Graph& g);

  /// The key is normalized before lookup.
  std::optional<std::string> lookup(std::string_view alias) const;
  std::size_t size() const { return map_.size(); }
  /// Longest alias, in normalized tokens.
  std::size_t max_tokens() const { return max_tokens_; }

 private:
  friend GroundingResult link_entities(const AliasIndex& index, std::string_view text);
  std::unordered_map<std::string, std::string> map_;
  std::size_t max_tokens_ = 0;
};

AliasIndex build_index(const kg::Graph& g);

/// Greedy longest match, left to right, over the normalized token stream.
GroundingResult link_entities(const AliasIndex& index, std::string_view text);

struct KgeSelection {
  num::Tensor rows;                   // [N, d_g]; empty when N = 0
  std::vector<std::string> selected;  // cuis behind the leading rows, in row order
  std::size_t n_padded = 0;
};

/// N rows: a seeded uniform subset when there are more than N cuis, else all
/// of them followed by zero rows. Throws naming the first cui absent from the table.
KgeSelection select_kges(const enc::NodeEmbeddingTable& table, std::span<const std::string> cuis, std::size_t n,
                         std::uint64_t seed);

struct GroundingRecord {
  std::string example_id;
  GroundingResult result;
  std::size_t n_selected = 0;
  std::size_t n_padded = 0;
};

/// One JSON object per line: {example_id, spans, cuis, n_selected, n_padded}.
void write_grounding_report(const std::filesystem::path& path, std::span<const GroundingRecord> records);

}  // namespace kgelm::ground
