// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Small pre-LayerNorm causal decoder with learned positions, an untied output
// head, and optional low-rank adapters on every linear layer.
//
// Parameter names:
//   embed.tok, embed.pos
//   blocks.{l}.ln1.{g,b}, blocks.{l}.attn.{q,k,v,o}.{W,b}
//   blocks.{l}.ln2.{g,b}, blocks.{l}.ff.{fc1,fc2}.{W,b}
//   ln_f.{g,b}, head.{W,b}
//   <linear>.lora_A, <linear>.lora_B while adapters are attached

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kgelm/numkit/autograd.hpp"
#include "kgelm/numkit/optim.hpp"
#include "kgelm/toylm/vocab.hpp"

namespace kgelm::lm {

struct LMConfig {
  std::size_t vocab_size = 0;
  std::size_t d_l = 128;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 512;
  std::size_t max_seq_len = 512;
  double embed_init_std = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

/// y = x W^T + b, plus s * (x A^T) B^T while an adapter is attached.
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, double init_std, std::uint64_t seed, std::string name);

  num::Var forward(const num::Var& x) const;

  void attach(std::size_t rank, double scaling, std::uint64_t seed);
  /// W <- W + s B A, then drops the adapter.
  void merge();
  bool has_adapter() const { return a_.defined(); }

  void collect(num::ParamList& out) const;
  void collect_adapter(num::ParamList& out) const;

  num::Var& weight() { return w_; }
  num::Var& bias() { return b_; }
  std::size_t in_dim() const { return w_.value().cols(); }
  std::size_t out_dim() const { return w_.value().rows(); }

 private:
  std::string name_;
  num::Var w_, b_, a_, bb_;
  double scaling_ = 0.0;
};

struct Block {
  num::Var ln1_g, ln1_b, ln2_g, ln2_b;
  Linear q, k, v, o, fc1, fc2;
};

class DecoderLM {
 public:
  explicit DecoderLM(const LMConfig& cfg);

  const LMConfig& config() const { return cfg_; }

  /// Plain embedding-table lookup, [S, d_l].
  num::Var embed(std::span<const TokenId> ids) const;
  /// Lookup with the j-th kKge position replaced by kges row j. kges may be
  /// undefined when ids hold no placeholder.
  num::Var embed_and_inject(std::span<const TokenId> ids, const num::Var& kges) const;

  /// Logits [S, vocab] for every position.
  num::Var forward(const num::Var& injected) const;
  /// Logits only at the listed positions, [rows.size(), vocab].
  num::Var forward(const num::Var& injected, std::span<const std::size_t> rows) const;

  /// Adds adapters (B = 0) to every linear layer and freezes all other
  /// parameters. Throws if adapters are already attached or rank is 0.
  void attach_lora(std::size_t rank, double scaling, std::uint64_t seed);
  void merge_lora();
  bool has_lora() const;

  /// Base parameters followed by adapter parameters.
  num::ParamList params() const;
  num::ParamList adapter_params() const;

  /// Selector: "*" (everything), "lora" (adapter matrices), or a dotted name
  /// prefix such as "embed", "blocks.1" or "head.W". Returns the match count;
  /// throws when nothing matches.
  std::size_t set_frozen(std::string_view selector, bool frozen);

  std::size_t count_parameters() const;
  std::size_t count_trainable() const;

  /// Argmax decoding; ties go to the lowest id. Stops before EOS or after
  /// max_new tokens. The returned ids exclude the prompt and the EOS.
  std::vector<TokenId> greedy_decode(std::span<const TokenId> prompt, const num::Var& kges,
                                     std::size_t max_new) const;

 private:
  num::Var hidden(const num::Var& injected) const;
  std::vector<const Linear*> linears() const;
  std::vector<Linear*> linears();

  LMConfig cfg_;
  num::Var tok_, pos_;
  std::vector<Block> blocks_;
  num::Var lnf_g_, lnf_b_;
  Linear head_;
};

/// Mean cross-entropy over masked positions. Throws when the mask is empty.
num::Var next_token_ce(const num::Var& logits, std::span<const TokenId> targets,
                       std::span<const unsigned char> mask);

std::string greedy_decode_text(const DecoderLM& lm, const Vocab& vocab, std::span<const TokenId> prompt,
                               const num::Var& kges, std::size_t max_new);

/// Closed-form adapter parameter count for a config: r (d_in + d_out) per
/// linear layer.
std::size_t lora_parameter_count(const LMConfig& cfg, std::size_t rank);

/// Checkpoints hold params() (adapters included when attached).
void save_lm(const DecoderLM& lm, const std::filesystem::path& path);
void load_lm(DecoderLM& lm, const std::filesystem::path& path);
/// Adapter matrices only.
void save_adapters(const DecoderLM& lm, const std::filesystem::path& path);
void load_adapters(DecoderLM& lm, const std::filesystem::path& path);

}  // namespace kgelm::lm
