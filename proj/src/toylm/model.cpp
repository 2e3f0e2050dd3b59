// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0

#include "kgelm/toylm/model.hpp"

#include <cmath>

#include "kgelm/error.hpp"
#include "kgelm/numkit/checkpoint.hpp"
#include "kgelm/numkit/rng.hpp"

namespace kgelm::lm {

using num::Tensor;
using num::Var;

void LMConfig::validate() const {
  if (vocab_size <= kNumSpecials) throw Error("lm config: vocab_size must exceed the special tokens");
  if (d_l == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0) throw Error("lm config: dims must be positive");
  if (d_l % n_heads != 0) {
    throw Error("lm config: d_l=" + std::to_string(d_l) + " not divisible by n_heads=" + std::to_string(n_heads));
  }
  if (max_seq_len < 2) throw Error("lm config: max_seq_len must be >= 2");
  if (!(embed_init_std > 0.0)) throw Error("lm config: embed_init_std must be > 0");
}

namespace {

Tensor normal_tensor(num::Shape shape, double std, std::uint64_t seed) {
  Tensor t(std::move(shape));
  num::Rng rng(seed);
  for (auto& x : t.data()) x = std * rng.normal();
  return t;
}

}  // namespace

Linear::Linear(std::size_t in, std::size_t out, double init_std, std::uint64_t seed, std::string name)
    : name_(std::move(name)) {
  w_ = Var(normal_tensor({out, in}, init_std, num::mix_seed(seed, num::hash_bytes(name_))), true, name_ + ".W");
  b_ = Var(Tensor({out}, 0.0), true, name_ + ".b");
}

Var Linear::forward(const Var& x) const {
  Var y = num::add_bias(num::matmul_nt(x, w_), b_);
  if (has_adapter()) y = num::add(y, num::scale(num::matmul_nt(num::matmul_nt(x, a_), bb_), scaling_));
  return y;
}

void Linear::attach(std::size_t rank, double scaling, std::uint64_t seed) {
  if (has_adapter()) throw Error(name_ + ": adapter already attached");
  const double std = 1.0 / std::sqrt(static_cast<double>(in_dim()));
  a_ = Var(normal_tensor({rank, in_dim()}, std, num::mix_seed(seed, num::hash_bytes(name_ + ".lora_A"))), true,
           name_ + ".lora_A");
  bb_ = Var(Tensor({out_dim(), rank}, 0.0), true, name_ + ".lora_B");
  scaling_ = scaling;
}

void Linear::merge() {
  if (!has_adapter()) throw Error(name_ + ": no adapter to merge");
  const Tensor& a = a_.value();
  const Tensor& b = bb_.value();
  Tensor& w = w_.mutable_value();
  const std::size_t r = a.rows();
  for (std::size_t i = 0; i < out_dim(); ++i) {
    for (std::size_t j = 0; j < in_dim(); ++j) {
      double delta = 0.0;
      for (std::size_t k = 0; k < r; ++k) delta += b.at(i, k) * a.at(k, j);
      w.at(i, j) += scaling_ * delta;
    }
  }
  a_ = Var();
  bb_ = Var();
  scaling_ = 0.0;
}

void Linear::collect(num::ParamList& out) const {
  out.push_back({name_ + ".W", w_});
  out.push_back({name_ + ".b", b_});
}

void Linear::collect_adapter(num::ParamList& out) const {
  if (!has_adapter()) return;
  out.push_back({name_ + ".lora_A", a_});
  out.push_back({name_ + ".lora_B", bb_});
}

DecoderLM::DecoderLM(const LMConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg_.d_l;
  const std::uint64_t seed = cfg_.seed;
  tok_ = Var(normal_tensor({cfg_.vocab_size, d}, cfg_.embed_init_std, num::mix_seed(seed, num::hash_bytes("embed.tok"))),
             true, "embed.tok");
  pos_ = Var(normal_tensor({cfg_.max_seq_len, d}, 0.1, num::mix_seed(seed, num::hash_bytes("embed.pos"))), true,
             "embed.pos");
  const double in_std = 1.0 / std::sqrt(static_cast<double>(d));
  const double ff_std = 1.0 / std::sqrt(static_cast<double>(cfg_.d_ff));
  const double resid = 1.0 / std::sqrt(2.0 * static_cast<double>(cfg_.n_layers));
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    Block b;
    b.ln1_g = Var(Tensor({d}, 1.0), true, p + "ln1.g");
    b.ln1_b = Var(Tensor({d}, 0.0), true, p + "ln1.b");
    b.ln2_g = Var(Tensor({d}, 1.0), true, p + "ln2.g");
    b.ln2_b = Var(Tensor({d}, 0.0), true, p + "ln2.b");
    b.q = Linear(d, d, in_std, seed, p + "attn.q");
    b.k = Linear(d, d, in_std, seed, p + "attn.k");
    b.v = Linear(d, d, in_std, seed, p + "attn.v");
    b.o = Linear(d, d, in_std * resid, seed, p + "attn.o");
    b.fc1 = Linear(d, cfg_.d_ff, in_std, seed, p + "ff.fc1");
    b.fc2 = Linear(cfg_.d_ff, d, ff_std * resid, seed, p + "ff.fc2");
    blocks_.push_back(std::move(b));
  }
  lnf_g_ = Var(Tensor({d}, 1.0), true, "ln_f.g");
  lnf_b_ = Var(Tensor({d}, 0.0), true, "ln_f.b");
  head_ = Linear(d, cfg_.vocab_size, in_std, seed, "head");
}

Var DecoderLM::embed(std::span<const TokenId> ids) const {
  for (auto id : ids) {
    if (id >= cfg_.vocab_size) throw Error("token id " + std::to_string(id) + " outside vocab");
  }
  return num::gather_rows(tok_, ids);
}

Var DecoderLM::embed_and_inject(std::span<const TokenId> ids, const Var& kges) const {
  std::vector<std::size_t> slots;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == kKge) slots.push_back(i);
  }
  const std::size_t n = kges.defined() ? kges.value().rows() : 0;
  if (kges.defined() && (kges.value().rank() != 2 || kges.value().cols() != cfg_.d_l)) {
    throw Error("embed_and_inject: kges must be [N, " + std::to_string(cfg_.d_l) + "], got " +
                num::shape_str(kges.shape()));
  }
  if (slots.size() != n) {
    throw Error("embed_and_inject: " + std::to_string(slots.size()) + " placeholders but " + std::to_string(n) +
                " KGE rows");
  }
  Var base = embed(ids);
  if (n == 0) return base;
  return num::replace_rows(base, slots, kges);
}

Var DecoderLM::hidden(const Var& injected) const {
  if (injected.value().rank() != 2 || injected.value().cols() != cfg_.d_l) {
    throw Error("forward: expected [S, " + std::to_string(cfg_.d_l) + "], got " + num::shape_str(injected.shape()));
  }
  const std::size_t s = injected.value().rows();
  if (s == 0) throw Error("forward: empty sequence");
  if (s > cfg_.max_seq_len) {
    throw Error("forward: sequence length " + std::to_string(s) + " exceeds max_seq_len " +
                std::to_string(cfg_.max_seq_len));
  }
  std::vector<std::size_t> positions(s);
  for (std::size_t i = 0; i < s; ++i) positions[i] = i;
  Var h = num::add(injected, num::gather_rows(pos_, positions));
  for (const auto& b : blocks_) {
    const Var a = num::layer_norm(h, b.ln1_g, b.ln1_b);
    const Var att = num::causal_attention(b.q.forward(a), b.k.forward(a), b.v.forward(a), cfg_.n_heads);
    h = num::add(h, b.o.forward(att));
    const Var m = num::layer_norm(h, b.ln2_g, b.ln2_b);
    h = num::add(h, b.fc2.forward(num::gelu(b.fc1.forward(m))));
  }
  return h;
}

Var DecoderLM::forward(const Var& injected) const {
  return head_.forward(num::layer_norm(hidden(injected), lnf_g_, lnf_b_));
}

Var DecoderLM::forward(const Var& injected, std::span<const std::size_t> rows) const {
  const Var h = num::select_rows(hidden(injected), rows);
  return head_.forward(num::layer_norm(h, lnf_g_, lnf_b_));
}

std::vector<const Linear*> DecoderLM::linears() const {
  std::vector<const Linear*> out;
  for (const auto& b : blocks_) {
    for (const Linear* l : {&b.q, &b.k, &b.v, &b.o, &b.fc1, &b.fc2}) out.push_back(l);
  }
  out.push_back(&head_);
  return out;
}

std::vector<Linear*> DecoderLM::linears() {
  std::vector<Linear*> out;
  for (auto& b : blocks_) {
    for (Linear* l : {&b.q, &b.k, &b.v, &b.o, &b.fc1, &b.fc2}) out.push_back(l);
  }
  out.push_back(&head_);
  return out;
}

void DecoderLM::attach_lora(std::size_t rank, double scaling, std::uint64_t seed) {
  if (rank == 0) throw Error("attach_lora: rank must be >= 1");
  if (has_lora()) throw Error("attach_lora: adapters already attached");
  for (auto& p : params()) {
    p.var.set_requires_grad(false);
    p.var.zero_grad();
  }
  for (Linear* l : linears()) l->attach(rank, scaling, seed);
}

void DecoderLM::merge_lora() {
  if (!has_lora()) throw Error("merge_lora: no adapters attached");
  for (Linear* l : linears()) l->merge();
}

bool DecoderLM::has_lora() const { return head_.has_adapter(); }

num::ParamList DecoderLM::params() const {
  num::ParamList out{{"embed.tok", tok_}, {"embed.pos", pos_}};
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const auto& b = blocks_[l];
    const std::string p = "blocks." + std::to_string(l) + ".";
    out.push_back({p + "ln1.g", b.ln1_g});
    out.push_back({p + "ln1.b", b.ln1_b});
    b.q.collect(out);
    b.k.collect(out);
    b.v.collect(out);
    b.o.collect(out);
    out.push_back({p + "ln2.g", b.ln2_g});
    out.push_back({p + "ln2.b", b.ln2_b});
    b.fc1.collect(out);
    b.fc2.collect(out);
  }
  out.push_back({"ln_f.g", lnf_g_});
  out.push_back({"ln_f.b", lnf_b_});
  head_.collect(out);
  for (auto& p : adapter_params()) out.push_back(std::move(p));
  return out;
}

num::ParamList DecoderLM::adapter_params() const {
  num::ParamList out;
  for (const Linear* l : linears()) l->collect_adapter(out);
  return out;
}

std::size_t DecoderLM::set_frozen(std::string_view selector, bool frozen) {
  if (selector.empty()) throw Error("set_frozen: empty selector");
  std::size_t matched = 0;
  for (auto& p : params()) {
    const std::string_view name = p.name;
    bool hit = false;
    if (selector == "*") {
      hit = true;
    } else if (selector == "lora") {
      hit = name.find(".lora_") != std::string_view::npos;
    } else {
      hit = name == selector ||
            (name.size() > selector.size() && name.substr(0, selector.size()) == selector && name[selector.size()] == '.');
    }
    if (!hit) continue;
    p.var.set_requires_grad(!frozen);
    if (frozen) p.var.zero_grad();
    ++matched;
  }
  if (matched == 0) throw Error("set_frozen: selector '" + std::string(selector) + "' matches no parameter");
  return matched;
}

std::size_t DecoderLM::count_parameters() const {
  std::size_t n = 0;
  for (const auto& p : params()) n += p.var.value().size();
  return n;
}

std::size_t DecoderLM::count_trainable() const {
  std::size_t n = 0;
  for (const auto& p : params()) {
    if (p.var.requires_grad()) n += p.var.value().size();
  }
  return n;
}

std::vector<TokenId> DecoderLM::greedy_decode(std::span<const TokenId> prompt, const Var& kges,
                                              std::size_t max_new) const {
  if (prompt.empty()) throw Error("greedy_decode: empty prompt");
  if (prompt.size() + max_new > cfg_.max_seq_len) {
    throw Error("greedy_decode: prompt of " + std::to_string(prompt.size()) + " tokens plus max_new " +
                std::to_string(max_new) + " exceeds max_seq_len " + std::to_string(cfg_.max_seq_len));
  }
  num::NoGradGuard no_grad;
  std::vector<TokenId> ids(prompt.begin(), prompt.end());
  std::vector<TokenId> out;
  for (std::size_t step = 0; step < max_new; ++step) {
    const std::size_t last = ids.size() - 1;
    const Var logits = forward(embed_and_inject(ids, kges), std::span<const std::size_t>(&last, 1));
    const auto row = logits.value().row(0);
    TokenId best = 0;
    for (TokenId t = 1; t < row.size(); ++t) {
      if (row[t] > row[best]) best = t;
    }
    if (best == kEos) break;
    out.push_back(best);
    ids.push_back(best);
  }
  return out;
}

Var next_token_ce(const Var& logits, std::span<const TokenId> targets, std::span<const unsigned char> mask) {
  bool any = false;
  for (auto m : mask) any = any || m != 0;
  if (!any) throw Error("next_token_ce: empty loss mask");
  return num::masked_cross_entropy(logits, targets, mask);
}

std::string greedy_decode_text(const DecoderLM& lm, const Vocab& vocab, std::span<const TokenId> prompt,
                               const Var& kges, std::size_t max_new) {
  const auto ids = lm.greedy_decode(prompt, kges, max_new);
  return detokenize(vocab, ids);
}

std::size_t lora_parameter_count(const LMConfig& cfg, std::size_t rank) {
  const std::size_t d = cfg.d_l;
  const std::size_t per_block = 4 * rank * (d + d) + rank * (d + cfg.d_ff) + rank * (cfg.d_ff + d);
  return cfg.n_layers * per_block + rank * (d + cfg.vocab_size);
}

void save_lm(const DecoderLM& lm, const std::filesystem::path& path) {
  const auto params = lm.params();
  num::save_checkpoint(path, params);
}

void load_lm(DecoderLM& lm, const std::filesystem::path& path) {
  auto params = lm.params();
  num::load_into(path, params);
}

void save_adapters(const DecoderLM& lm, const std::filesystem::path& path) {
  const auto params = lm.adapter_params();
  if (params.empty()) throw Error("save_adapters: no adapters attached");
  num::save_checkpoint(path, params);
}

void load_adapters(DecoderLM& lm, const std::filesystem::path& path) {
  auto params = lm.adapter_params();
  if (params.empty()) throw Error("load_adapters: attach adapters before loading");
  num::load_into(path, params);
}

}  // namespace kgelm::lm
