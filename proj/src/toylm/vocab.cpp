// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0

#include "kgelm/toylm/vocab.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <json.hpp>
#include <set>

#include "kgelm/error.hpp"

namespace kgelm::lm {

namespace {

constexpr std::array<std::string_view, kNumSpecials> kSpecials{
    "<pad>", "<bos>", "<eos>", "<unk>", kKgePlaceholder, "[INST]", "[/INST]"};
// Matched verbatim in running text, longest first.
constexpr std::array<std::string_view, 3> kInlineSpecials{kKgePlaceholder, "[/INST]", "[INST]"};

bool is_word_byte(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c >= 0x80;
}

}  // namespace

std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    bool matched = false;
    for (auto sp : kInlineSpecials) {
      if (text.substr(i, sp.size()) == sp) {
        out.emplace_back(sp);
        i += sp.size();
        matched = true;
        break;
      }
    }
    if (matched) continue;
    if (c == '\n') {
      out.emplace_back("\n");
      ++i;
    } else if (c == ' ' || c == '\t' || c == '\r' || c == '\f' || c == '\v') {
      ++i;
    } else if (is_word_byte(c)) {
      std::size_t j = i;
      while (j < text.size() && is_word_byte(static_cast<unsigned char>(text[j]))) ++j;
      out.emplace_back(text.substr(i, j - i));
      i = j;
    } else {
      out.emplace_back(1, static_cast<char>(c));
      ++i;
    }
  }
  return out;
}

Vocab::Vocab() {
  for (auto sp : kSpecials) add(sp);
}

Vocab Vocab::build(std::span<const std::string> corpus) {
  std::set<std::string> words;
  for (const auto& text : corpus) {
    for (auto& t : split_tokens(text)) words.insert(std::move(t));
  }
  Vocab v;
  for (const auto& w : words) v.add(w);
  return v;
}

TokenId Vocab::add(std::string_view token) {
  if (token.empty()) throw Error("Vocab: empty token");
  const std::string key(token);
  if (auto it = ids_.find(key); it != ids_.end()) return it->second;
  const TokenId id = tokens_.size();
  tokens_.push_back(key);
  ids_.emplace(key, id);
  return id;
}

std::optional<TokenId> Vocab::find(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocab::id(std::string_view token) const { return find(token).value_or(kUnk); }

const std::string& Vocab::token(TokenId id) const {
  if (id >= tokens_.size()) throw Error("Vocab: token id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

void Vocab::save_jsonl(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    out << nlohmann::json{{"token", tokens_[i]}, {"id", i}}.dump() << '\n';
  }
}

Vocab Vocab::load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  Vocab v;
  v.tokens_.clear();
  v.ids_.clear();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    const auto id = j.at("id").get<std::size_t>();
    if (id != v.tokens_.size()) throw Error(path.string() + ":" + std::to_string(lineno) + ": ids must be dense");
    v.add(j.at("token").get<std::string>());
    if (v.tokens_.size() != id + 1) throw Error(path.string() + ": duplicate token at id " + std::to_string(id));
  }
  for (std::size_t i = 0; i < kNumSpecials; ++i) {
    if (v.tokens_.size() <= i || v.tokens_[i] != kSpecials[i]) throw Error(path.string() + ": special tokens missing");
  }
  return v;
}

std::vector<TokenId> tokenize(const Vocab& vocab, std::string_view text) {
  std::vector<TokenId> ids;
  for (const auto& t : split_tokens(text)) ids.push_back(vocab.id(t));
  return ids;
}

std::string detokenize(const Vocab& vocab, std::span<const TokenId> ids) {
  static const std::set<std::string> no_space_before{".", ",", "?", "!", ":", ";", ")", "]", "\n"};
  static const std::set<std::string> no_space_after{"(", "[", "\n"};
  std::string out;
  const std::string* prev = nullptr;
  for (auto id : ids) {
    const auto& tok = vocab.token(id);
    if (prev && !no_space_before.count(tok) && !no_space_after.count(*prev)) out += ' ';
    out += tok;
    prev = &tok;
  }
  return out;
}

}  // namespace kgelm::lm
