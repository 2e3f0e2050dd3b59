// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Word-level tokenizer. Words are runs of [A-Za-z0-9_] (and any non-ASCII
// byte); every other printable character is its own token; "\n" is a token;
// other whitespace only separates. The placeholder "{kg_embedding}" and the
// instruction markers "[INST]" / "[/INST]" are matched before splitting.

#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace kgelm::lm {

using TokenId = std::size_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr TokenId kKge = 4;
inline constexpr TokenId kInstOpen = 5;
inline constexpr TokenId kInstClose = 6;
inline constexpr std::size_t kNumSpecials = 7;

inline constexpr std::string_view kKgePlaceholder = "{kg_embedding}";

/// Splits text into token strings without consulting a vocabulary.
std::vector<std::string> split_tokens(std::string_view text);

class Vocab {
 public:
  /// Specials only.
  Vocab();
  /// Specials plus every token of the corpus, in sorted order.
  static Vocab build(std::span<const std::string> corpus);

  TokenId add(std::string_view token);
  std::optional<TokenId> find(std::string_view token) const;
  /// Unknown tokens map to kUnk.
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  std::size_t size() const { return tokens_.size(); }

  /// One JSON object {"token": ..., "id": ...} per line, ids ascending.
  void save_jsonl(const std::filesystem::path& path) const;
  static Vocab load_jsonl(const std::filesystem::path& path);

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

std::vector<TokenId> tokenize(const Vocab& vocab, std::string_view text);
/// Inverse of tokenize for canonically spaced text: tokens joined by single
/// spaces, except none before . , ? ! : ; ) ] or after ( [ and none around "\n".
std::string detokenize(const Vocab& vocab, std::span<const TokenId> ids);

}  // namespace kgelm::lm
