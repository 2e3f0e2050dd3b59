// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "kgelm/error.hpp"
#include "kgelm/numkit/optim.hpp"
#include "kgelm/toylm/model.hpp"
#include "test_util.hpp"

using namespace kgelm;
using namespace kgelm::lm;
using num::Tensor;
using num::Var;

namespace {

LMConfig tiny_config(std::size_t vocab = 12) {
  LMConfig c;
  c.vocab_size = vocab;
  c.d_l = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 16;
  c.max_seq_len = 16;
  c.seed = 3;
  return c;
}

num::Var& find_param(num::ParamList& ps, const std::string& name) {
  for (auto& p : ps) {
    if (p.name == name) return p.var;
  }
  FAIL("no parameter " << name);
  throw Error("unreachable");
}

std::uint64_t checksum_of(const DecoderLM& lm, std::string_view prefix) {
  num::ParamList sel;
  for (auto& p : lm.params()) {
    if (std::string_view(p.name).substr(0, prefix.size()) == prefix) sel.push_back(p);
  }
  REQUIRE_FALSE(sel.empty());
  return num::checksum(sel);
}

// Full-sequence next-token loss with the mask on the last two targets.
Var toy_loss(const DecoderLM& lm, const std::vector<TokenId>& seq) {
  std::vector<TokenId> in(seq.begin(), seq.end() - 1), tgt(seq.begin() + 1, seq.end());
  std::vector<unsigned char> mask(tgt.size(), 0);
  mask[mask.size() - 1] = mask[mask.size() - 2] = 1;
  return next_token_ce(lm.forward(lm.embed(in)), tgt, mask);
}

void train_steps(DecoderLM& lm, const std::vector<TokenId>& seq, int steps, double lr = 0.05) {
  auto params = lm.params();
  num::AdamState st;
  for (int i = 0; i < steps; ++i) {
    num::zero_grads(params);
    num::backward(toy_loss(lm, seq));
    num::adam_step(params, st, lr);
  }
}

const std::vector<TokenId> kSeq{kBos, 7, 8, 9, 10, 7, 11, kEos};

}  // namespace

TEST_CASE("tokenizer round trips canonical text and maps specials") {
  const std::vector<std::string> corpus{"[INST] Which value does alpha have?\nA) yes\nB) no [/INST]",
                                        "Graph: {kg_embedding} {kg_embedding} [/INST]\nAnswer: A"};
  const Vocab v = Vocab::build(corpus);
  for (const auto& s : corpus) CHECK(detokenize(v, tokenize(v, s)) == s);

  CHECK(tokenize(v, "{kg_embedding}") == std::vector<TokenId>{kKge});
  CHECK(tokenize(v, "[INST]") == std::vector<TokenId>{kInstOpen});
  CHECK(tokenize(v, "[/INST]") == std::vector<TokenId>{kInstClose});

  const auto ids = tokenize(v, "A) yes");
  REQUIRE(ids.size() >= 2);
  CHECK(v.token(ids[0]) == "A");
  CHECK(tokenize(v, "zebra") == std::vector<TokenId>{kUnk});

  CHECK(split_tokens("Graph:{kg_embedding}\n x_1, y") ==
        std::vector<std::string>{"Graph", ":", "{kg_embedding}", "\n", "x_1", ",", "y"});
  CHECK(split_tokens("   ").empty());
}

TEST_CASE("vocab JSONL round trip and malformed input") {
  const std::vector<std::string> corpus{"alpha beta, gamma."};
  const Vocab v = Vocab::build(corpus);
  CHECK(v.size() == kNumSpecials + 5);
  const auto dir = std::filesystem::temp_directory_path() / "kgelm_test_vocab";
  std::filesystem::create_directories(dir);
  v.save_jsonl(dir / "vocab.jsonl");
  CHECK(Vocab::load_jsonl(dir / "vocab.jsonl") == v);

  {
    std::ofstream bad(dir / "bad.jsonl");
    bad << "{\"token\": \"<pad>\", \"id\": 0}\n{\"token\": \"x\", \"id\": 5}\n";
  }
  CHECK_THROWS_AS(Vocab::load_jsonl(dir / "bad.jsonl"), Error);
  CHECK_THROWS_AS(Vocab::load_jsonl(dir / "missing.jsonl"), Error);
  CHECK_THROWS_AS(v.token(v.size()), Error);
}

TEST_CASE("embed_and_inject substitutes placeholder rows exactly") {
  const DecoderLM lm(tiny_config());
  num::Rng rng(1);
  const std::vector<TokenId> plain{kBos, 7, 8};
  CHECK(lm.embed_and_inject(plain, Var()).value() == lm.embed(plain).value());

  const std::vector<TokenId> ids{kBos, kKge, 7, kKge, 8};
  Tensor kges = testing::random_tensor({2, 8}, rng);
  for (std::size_t c = 0; c < 8; ++c) kges.at(1, c) = 0.0;
  const Tensor out = lm.embed_and_inject(ids, Var(kges)).value();
  const Tensor lookup = lm.embed(ids).value();
  for (std::size_t c = 0; c < 8; ++c) {
    CHECK(out.at(1, c) == kges.at(0, c));
    CHECK(out.at(3, c) == 0.0);
    for (std::size_t r : {0, 2, 4}) CHECK(out.at(r, c) == lookup.at(r, c));
  }

  CHECK_THROWS_AS(lm.embed_and_inject(ids, Var(testing::random_tensor({3, 8}, rng))), Error);
  CHECK_THROWS_AS(lm.embed_and_inject(ids, Var()), Error);
  CHECK_THROWS_AS(lm.embed_and_inject(plain, Var(testing::random_tensor({1, 8}, rng))), Error);
  CHECK_THROWS_AS(lm.embed(std::vector<TokenId>{99}), Error);
}

TEST_CASE("forward is causal and rejects long sequences") {
  const DecoderLM lm(tiny_config());
  num::Rng rng(2);
  Tensor x = testing::random_tensor({6, 8}, rng);
  const Tensor base = lm.forward(Var(x)).value();
  for (std::size_t t = 0; t + 1 < 6; ++t) {
    Tensor y = x;
    for (std::size_t c = 0; c < 8; ++c) y.at(t + 1, c) += 3.0 * rng.normal();
    const Tensor pert = lm.forward(Var(y)).value();
    for (std::size_t r = 0; r <= t; ++r) {
      for (std::size_t v = 0; v < pert.cols(); ++v) CHECK(pert.at(r, v) == doctest::Approx(base.at(r, v)).epsilon(1e-13));
    }
  }
  const std::vector<std::size_t> rows{5, 2};
  const Tensor some = lm.forward(Var(x), rows).value();
  for (std::size_t v = 0; v < some.cols(); ++v) {
    CHECK(some.at(0, v) == doctest::Approx(base.at(5, v)).epsilon(1e-12));
    CHECK(some.at(1, v) == doctest::Approx(base.at(2, v)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(lm.forward(Var(Tensor({17, 8}))), Error);
  CHECK_THROWS_AS(lm.forward(Var(Tensor({3, 7}))), Error);
}

TEST_CASE("zero input with zero head gives a uniform softmax") {
  DecoderLM lm(tiny_config());
  auto ps = lm.params();
  find_param(ps, "head.W").mutable_value().fill(0.0);
  const Tensor p = num::softmax_rows(lm.forward(Var(Tensor({4, 8})))).value();
  for (double x : p.data()) CHECK(x == doctest::Approx(1.0 / 12.0).epsilon(1e-14));
}

TEST_CASE("decoder gradients match finite differences") {
  DecoderLM lm(tiny_config());
  auto ps = lm.params();
  std::vector<Var> vars;
  for (auto& p : ps) vars.push_back(p.var);
  const double err = num::grad_check([&] { return toy_loss(lm, kSeq); }, vars, 1e-5);
  CHECK(err < 1e-4);

  // Gradient flows into injected rows as well.
  num::Rng rng(4);
  Var kges(testing::random_tensor({1, 8}, rng), true);
  const std::vector<TokenId> in{kBos, kKge, 7, 8};
  const std::vector<TokenId> tgt{kKge, 7, 8, 9};
  const std::vector<unsigned char> mask{0, 0, 1, 1};
  std::vector<Var> kv{kges};
  CHECK(num::grad_check([&] { return next_token_ce(lm.forward(lm.embed_and_inject(in, kges)), tgt, mask); }, kv) <
        1e-4);
}

TEST_CASE("next_token_ce examples and brute force") {
  Tensor onehot({3, 8}, -1e3);
  const std::vector<TokenId> tgt{1, 4, 6};
  for (std::size_t r = 0; r < 3; ++r) onehot.at(r, tgt[r]) = 1e3;
  const std::vector<unsigned char> all{1, 1, 1};
  CHECK(next_token_ce(Var(onehot), tgt, all).item() == doctest::Approx(0.0));
  CHECK(next_token_ce(Var(Tensor({3, 8})), tgt, all).item() == doctest::Approx(std::log(8.0)).epsilon(1e-14));
  CHECK_THROWS_AS(next_token_ce(Var(Tensor({3, 8})), tgt, std::vector<unsigned char>{0, 0, 0}), Error);

  num::Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Var logits(testing::random_tensor({5, 7}, rng, 2.0), true);
    std::vector<TokenId> t(5);
    std::vector<unsigned char> m(5);
    for (std::size_t i = 0; i < 5; ++i) {
      t[i] = rng.uniform_index(7);
      m[i] = static_cast<unsigned char>(rng.uniform_index(2));
    }
    m[trial % 5] = 1;
    double total = 0;
    int count = 0;
    for (std::size_t i = 0; i < 5; ++i) {
      if (!m[i]) continue;
      double z = 0;
      for (std::size_t v = 0; v < 7; ++v) z += std::exp(logits.value().at(i, v));
      total += -(logits.value().at(i, t[i]) - std::log(z));
      ++count;
    }
    const Var loss = next_token_ce(logits, t, m);
    CHECK(loss.item() == doctest::Approx(total / count).epsilon(1e-12));
    num::backward(loss);
    for (std::size_t i = 0; i < 5; ++i) {
      if (m[i]) continue;
      for (std::size_t v = 0; v < 7; ++v) CHECK(logits.grad().at(i, v) == 0.0);
    }
    std::vector<Var> lv{logits};
    logits.zero_grad();
    CHECK(num::grad_check([&] { return next_token_ce(logits, t, m); }, lv) < 1e-6);
  }
}

TEST_CASE("LoRA attach starts at the base model and merge preserves outputs") {
  const LMConfig cfg = tiny_config();
  DecoderLM lm(cfg);
  train_steps(lm, kSeq, 3);
  num::Rng rng(6);
  const Tensor x = testing::random_tensor({5, 8}, rng);
  const Tensor base = lm.forward(Var(x)).value();
  const std::size_t total_before = lm.count_parameters();

  lm.attach_lora(4, 0.5, 11);
  CHECK(lm.has_lora());
  CHECK(lm.forward(Var(x)).value() == base);
  CHECK(lm.count_trainable() == lora_parameter_count(cfg, 4));
  CHECK(lm.count_parameters() == total_before + lora_parameter_count(cfg, 4));
  // r (d_in + d_out) per linear: 4 attention maps, two feed-forward maps, head.
  const std::size_t by_hand = 2 * (4 * 4 * 16 + 4 * 24 + 4 * 24) + 4 * (8 + 12);
  CHECK(lora_parameter_count(cfg, 4) == by_hand);
  CHECK_THROWS_AS(lm.attach_lora(4, 0.5, 11), Error);

  const auto frozen_sum = checksum_of(lm, "blocks.0.attn.q.W");
  train_steps(lm, kSeq, 20);
  CHECK(checksum_of(lm, "blocks.0.attn.q.W") == frozen_sum);
  CHECK(lm.forward(Var(x)).value() != base);

  std::vector<Tensor> prompts;
  std::vector<Tensor> adapter_logits;
  for (int i = 0; i < 50; ++i) {
    prompts.push_back(testing::random_tensor({1 + rng.uniform_index(10), 8}, rng));
    adapter_logits.push_back(lm.forward(Var(prompts.back())).value());
  }
  lm.merge_lora();
  CHECK_FALSE(lm.has_lora());
  CHECK(lm.count_parameters() == total_before);
  double worst = 0;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const Tensor merged = lm.forward(Var(prompts[i])).value();
    for (std::size_t j = 0; j < merged.size(); ++j) worst = std::max(worst, std::abs(merged[j] - adapter_logits[i][j]));
  }
  CHECK(worst < 1e-5);
  CHECK_THROWS_AS(lm.merge_lora(), Error);
  CHECK_THROWS_AS(lm.attach_lora(0, 0.5, 1), Error);
}

TEST_CASE("greedy decoding") {
  const DecoderLM lm(tiny_config());
  const std::vector<TokenId> prompt{kBos, 7, 8};
  CHECK(lm.greedy_decode(prompt, Var(), 0).empty());
  CHECK(lm.greedy_decode(prompt, Var(), 5) == lm.greedy_decode(prompt, Var(), 5));
  CHECK_THROWS_AS(lm.greedy_decode(prompt, Var(), 14), Error);

  // All-equal logits: the lowest id wins.
  DecoderLM flat(tiny_config());
  auto fp = flat.params();
  find_param(fp, "head.W").mutable_value().fill(0.0);
  CHECK(flat.greedy_decode(prompt, Var(), 2) == std::vector<TokenId>{kPad, kPad});
}

TEST_CASE("constructed-logit LM emits the forced sequence") {
  // Tokens contribute nothing, position t is a one-hot spike on dim t, every
  // block writes zero to the residual stream, and the head reads dim t.
  const std::vector<TokenId> forced{7, 8, 7, kEos};
  DecoderLM lm(tiny_config(9));
  auto ps = lm.params();
  find_param(ps, "embed.tok").mutable_value().fill(0.0);
  Tensor& pos = find_param(ps, "embed.pos").mutable_value();
  pos.fill(0.0);
  for (std::size_t t = 0; t < 8; ++t) pos.at(t, t) = 10.0;
  for (const std::string l : {"0", "1"}) {
    for (const std::string n : {"attn.o.W", "attn.o.b", "ff.fc2.W", "ff.fc2.b"}) {
      find_param(ps, "blocks." + l + "." + n).mutable_value().fill(0.0);
    }
  }
  Tensor& head = find_param(ps, "head.W").mutable_value();
  head.fill(0.0);
  for (std::size_t i = 0; i < forced.size(); ++i) head.at(forced[i], i) = 5.0;

  const Vocab v = Vocab::build(std::vector<std::string>{"a b"});
  REQUIRE(v.size() == 9);
  const std::vector<TokenId> prompt{kBos};
  CHECK(lm.greedy_decode(prompt, Var(), 10) == std::vector<TokenId>{7, 8, 7});
  CHECK(greedy_decode_text(lm, v, prompt, Var(), 10) == "a b a");
  CHECK(lm.greedy_decode(prompt, Var(), 2) == std::vector<TokenId>{7, 8});
}

TEST_CASE("set_frozen controls which parameters move") {
  {
    DecoderLM lm(tiny_config());
    CHECK(lm.set_frozen("embed", true) == 2);
    const auto emb = checksum_of(lm, "embed");
    const auto blk = checksum_of(lm, "blocks");
    train_steps(lm, kSeq, 5);
    CHECK(checksum_of(lm, "embed") == emb);
    CHECK(checksum_of(lm, "blocks") != blk);
  }
  {
    DecoderLM lm(tiny_config());
    lm.set_frozen("*", true);
    CHECK(lm.count_trainable() == 0);
    const double before = toy_loss(lm, kSeq).item();
    train_steps(lm, kSeq, 3);
    CHECK(toy_loss(lm, kSeq).item() == before);
  }
  {
    DecoderLM lm(tiny_config());
    lm.set_frozen("*", true);
    lm.set_frozen("blocks.1", false);
    const auto b0 = checksum_of(lm, "blocks.0");
    const auto b1 = checksum_of(lm, "blocks.1");
    const auto emb = checksum_of(lm, "embed");
    const auto head = checksum_of(lm, "head");
    train_steps(lm, kSeq, 3);
    CHECK(checksum_of(lm, "blocks.0") == b0);
    CHECK(checksum_of(lm, "blocks.1") != b1);
    CHECK(checksum_of(lm, "embed") == emb);
    CHECK(checksum_of(lm, "head") == head);
  }
  DecoderLM lm(tiny_config());
  CHECK_THROWS_AS(lm.set_frozen("decoder", true), Error);
  CHECK_THROWS_AS(lm.set_frozen("lora", true), Error);
  CHECK_THROWS_AS(lm.set_frozen("", true), Error);
  CHECK(lm.set_frozen("head.W", true) == 1);
}

TEST_CASE("checkpoints round trip base weights and adapters") {
  const auto dir = std::filesystem::temp_directory_path() / "kgelm_test_lm";
  std::filesystem::create_directories(dir);
  DecoderLM a(tiny_config());
  train_steps(a, kSeq, 2);
  save_lm(a, dir / "lm.ckpt");
  LMConfig other = tiny_config();
  other.seed = 99;
  DecoderLM b(other);
  load_lm(b, dir / "lm.ckpt");
  CHECK(num::checksum(a.params()) == num::checksum(b.params()));

  a.attach_lora(2, 1.0, 5);
  train_steps(a, kSeq, 2);
  save_adapters(a, dir / "lora.ckpt");
  b.attach_lora(2, 1.0, 6);
  load_adapters(b, dir / "lora.ckpt");
  CHECK(num::checksum(a.params()) == num::checksum(b.params()));

  DecoderLM c(tiny_config());
  CHECK_THROWS_AS(save_adapters(c, dir / "none.ckpt"), Error);
  LMConfig wider = tiny_config();
  wider.d_ff = 32;
  DecoderLM d(wider);
  CHECK_THROWS_AS(load_lm(d, dir / "lm.ckpt"), Error);
}

TEST_CASE("lm config validation") {
  LMConfig c = tiny_config();
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), Error);
  c = tiny_config();
  c.vocab_size = 5;
  CHECK_THROWS_AS(c.validate(), Error);
  c = tiny_config();
  c.d_ff = 0;
  CHECK_THROWS_AS(DecoderLM{c}, Error);
}
