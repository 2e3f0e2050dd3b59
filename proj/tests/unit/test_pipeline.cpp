// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "kgelm/numkit/optim.hpp"
#include "kgelm/numkit/rng.hpp"
#include "kgelm/pipeline/diagnostics.hpp"
#include "kgelm/pipeline/evaluate.hpp"
#include "kgelm/pipeline/workflow.hpp"

using namespace kgelm;
using namespace kgelm::pipe;

namespace {

std::size_t count_of(const std::string& s, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = s.find(needle); pos != std::string::npos; pos = s.find(needle, pos + needle.size())) ++n;
  return n;
}

QAExample sample_question() {
  return QAExample{"q1", std::nullopt, "What is the finding site of vorin?",
                   {{"A", "heart"}, {"B", "lung"}, {"C", "skin"}, {"D", "bone"}}, "B"};
}

RunConfig tiny_config() {
  RunConfig c;
  c.kg_entities = 60;
  c.d_g = 8;
  c.d_l = 16;
  c.n_heads = 2;
  c.n_layers = 1;
  c.d_ff = 32;
  c.d_h = 16;
  c.n_hidden = 1;
  c.lora_rank = 2;
  c.micro_batch = 8;
  c.pretrain_examples = 16;
  c.seeds = {0};
  return c;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("kgelm_test_pipeline_" + name);
}

num::Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  num::Rng rng(seed);
  num::Tensor t({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) t.at(i, j) = rng.normal();
  }
  return t;
}

enc::NodeEmbeddingTable table_of(const num::Tensor& m) {
  std::vector<std::string> cuis;
  for (std::size_t i = 0; i < m.rows(); ++i) cuis.push_back("C" + std::to_string(i));
  return enc::NodeEmbeddingTable(cuis, m);
}

}  // namespace

TEST_CASE("qa prompt carries one placeholder per KGE slot") {
  const auto ex = sample_question();
  for (std::size_t n : {0u, 1u, 4u, 9u}) {
    const auto p = format_qa_prompt(ex, n, PromptMode::kge);
    CHECK(count_of(p, lm::kKgePlaceholder) == n);
    CHECK(p.ends_with("Answer:"));
  }
  const auto none = format_qa_prompt(ex, 4, PromptMode::none);
  CHECK(count_of(none, lm::kKgePlaceholder) == 0);
  CHECK(none.find("Graph:") == std::string::npos);
  CHECK(none.find("Input: What is the finding site") != std::string::npos);
  CHECK(none.find("B) lung\n") != std::string::npos);

  auto with_ctx = ex;
  with_ctx.context = "A patient.";
  CHECK(format_qa_prompt(with_ctx, 0, PromptMode::none).find("Input: A patient. What is") != std::string::npos);

  const std::vector<VerbalTriple> triples{{"vorin", "finding site", "lung"}};
  const auto tp = format_qa_prompt(ex, 4, PromptMode::triples_text, triples);
  CHECK(tp.find("Graph: [{vorin, finding site, lung}]") != std::string::npos);
  CHECK(format_qa_training_text(ex, 1, PromptMode::kge).ends_with("Answer: B"));
}

TEST_CASE("triples context is bounded by entities and neighbours") {
  const auto skg = kg::generate_synthetic_kg(tiny_config().kg_config());
  std::vector<std::string> cuis;
  for (std::size_t i = 0; i < 12; ++i) cuis.push_back(skg.graph.entity(skg.concepts[i]).cui);
  const auto triples = build_triples_context(skg.graph, cuis, 10, 2, 7);
  CHECK(triples.size() <= 20);
  std::vector<std::string> subjects;
  for (const auto& t : triples) subjects.push_back(t.subject);
  for (std::size_t i = 10; i < 12; ++i) {
    CHECK(std::find(subjects.begin(), subjects.end(), skg.graph.entity(skg.concepts[i]).label) == subjects.end());
  }
  CHECK(build_triples_context(skg.graph, cuis, 10, 2, 7) == triples);
}

TEST_CASE("qa jsonl round trip and foreign formats") {
  auto a = sample_question();
  auto b = sample_question();
  b.id = "q2";
  b.context = "ctx";
  const std::vector<QAExample> xs{a, b};
  const auto path = temp_file("qa.jsonl");
  write_qa_jsonl(path, xs);
  CHECK(read_qa_jsonl(path) == xs);

  {
    std::ofstream out(path);
    out << R"({"id":"m1","question":"Q?","opa":"x","opb":"y","opc":"z","opd":"w","cop":3})" << "\n";
    out << R"({"id":"m2","question":"Q?","options":{"A":"x","B":"y"},"answer_idx":"B"})" << "\n";
  }
  const auto foreign = read_qa_jsonl(path);
  REQUIRE(foreign.size() == 2);
  CHECK(foreign[0].answer_key == "C");
  CHECK(foreign[0].options.size() == 4);
  CHECK(foreign[1].answer_key == "B");
  std::filesystem::remove(path);
}

TEST_CASE("synthetic qa has one question per fact") {
  const auto skg = kg::generate_synthetic_kg(tiny_config().kg_config());
  const auto qa = make_synthetic_qa(skg);
  CHECK(qa.size() == skg.facts.size());
  for (const auto& ex : qa) {
    ex.validate();
    CHECK(ex.options.size() == tiny_config().kg_values_per_attribute);
  }
  const auto split = split_qa(qa, 0.7, 0.1, 3);
  CHECK(split.train.size() + split.valid.size() + split.test.size() == qa.size());
}

TEST_CASE("phase-1 dataset sizes") {
  const auto skg = kg::generate_synthetic_kg(tiny_config().kg_config());
  const auto base = gen_phase1_dataset(skg.graph, false, 0);
  CHECK(base.size() == skg.graph.num_entities());
  for (const auto& r : base) {
    CHECK(r.cuis.size() == 1);
    CHECK(count_of(r.prompt, lm::kKgePlaceholder) == 1);
  }
  const auto aug = gen_phase1_dataset(skg.graph, true, 0);
  CHECK(aug.size() >= base.size());
  CHECK(aug.size() <= 2 * base.size());
  for (std::size_t i = base.size(); i < aug.size(); ++i) {
    CHECK(aug[i].cuis.size() >= 2);
    CHECK(aug[i].cuis.size() <= 10);
    CHECK(count_of(aug[i].prompt, lm::kKgePlaceholder) == aug[i].cuis.size());
  }
}

TEST_CASE("answer parser") {
  const auto ex = sample_question();
  CHECK(parse_answer("B", &ex) == "B");
  CHECK(parse_answer(" b) lung", &ex) == "B");
  CHECK(parse_answer("prompt text Answer: C", &ex) == "C");
  CHECK(parse_answer("C)", &ex) == "C");
  CHECK_FALSE(parse_answer("E", &ex));
  CHECK_FALSE(parse_answer("lung", &ex));
  CHECK_FALSE(parse_answer("", &ex));
  CHECK_FALSE(parse_answer("AB", &ex));
  CHECK(parse_answer("E") == "E");
}

TEST_CASE("evaluation accounting") {
  std::vector<QAExample> xs;
  for (int i = 0; i < 7; ++i) {
    auto ex = sample_question();
    ex.id = "q" + std::to_string(i);
    ex.answer_key = std::string(1, static_cast<char>('A' + i % 4));
    xs.push_back(ex);
  }
  const auto oracle = evaluate_completions(xs, [](const QAExample& ex) { return ex.answer_key; });
  CHECK(oracle.accuracy() == 1.0);
  CHECK(oracle.na == 0);

  int k = 0;
  const auto mixed = evaluate_completions(xs, [&](const QAExample& ex) {
    switch (k++ % 3) {
      case 0: return ex.answer_key;
      case 1: return std::string(ex.answer_key == "A" ? "B" : "A");
      default: return std::string("no idea");
    }
  });
  CHECK(mixed.n == xs.size());
  CHECK(mixed.correct + mixed.incorrect + mixed.na == mixed.n);
  CHECK(mixed.correct == 3);
  CHECK(mixed.na == 2);
  CHECK(mixed.accuracy() + mixed.error_rate() + mixed.na_rate() == doctest::Approx(1.0));

  EvalReport rep;
  rep.per_seed = {oracle, mixed};
  CHECK(rep.mean_accuracy() == doctest::Approx((1.0 + 3.0 / 7.0) / 2));
  CHECK(rep.std_accuracy() == doctest::Approx(std::sqrt(2.0) * (1.0 - 3.0 / 7.0) / 2));
  CHECK(rep.to_json()["per_seed"].size() == 2);
}

TEST_CASE("spearman uses midranks") {
  const std::vector<double> a{1, 2, 3, 4};
  const std::vector<double> b{10, 20, 30, 40};
  CHECK(spearman(a, b) == doctest::Approx(1.0));
  const std::vector<double> rev{4, 3, 2, 1};
  CHECK(spearman(a, rev) == doctest::Approx(-1.0));
  const std::vector<double> tied{1, 1, 2, 3};
  // ranks 1.5 1.5 3 4 against 1 2 3 4
  const double expected = 4.5 / std::sqrt(4.5 * 5.0);
  CHECK(spearman(tied, a) == doctest::Approx(expected).epsilon(1e-12));
  CHECK_THROWS(spearman(std::vector<double>{1}, std::vector<double>{1}));
}

TEST_CASE("structure metrics on known maps") {
  const auto m = random_matrix(80, 6, 1);
  const auto pre = table_of(m);
  const auto id = structure_metrics(pre, pre, 5, 0);
  CHECK(id.knn_jaccard == 1.0);
  CHECK(id.distance_spearman == doctest::Approx(1.0).epsilon(1e-12));

  // Rotation in the (0, 1) plane plus a uniform scale.
  num::Tensor rot = m;
  const double c = std::cos(0.7), s = std::sin(0.7);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    rot.at(i, 0) = 3 * (c * m.at(i, 0) - s * m.at(i, 1));
    rot.at(i, 1) = 3 * (s * m.at(i, 0) + c * m.at(i, 1));
    for (std::size_t j = 2; j < m.cols(); ++j) rot.at(i, j) = 3 * m.at(i, j);
  }
  const auto r = structure_metrics(pre, table_of(rot), 5, 0);
  CHECK(r.distance_spearman == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(r.knn_jaccard == doctest::Approx(1.0));

  const auto other = structure_metrics(pre, table_of(random_matrix(80, 6, 99)), 5, 0);
  CHECK(other.knn_jaccard < 0.2);
  CHECK(std::abs(other.distance_spearman) < 0.2);

  CHECK_THROWS(structure_metrics(pre, pre, 80, 0));
  CHECK_THROWS(structure_metrics(pre, table_of(random_matrix(79, 6, 2)), 5, 0));
  CHECK(structure_metrics(pre, pre, 5, 0, 30).n == 30);
}

TEST_CASE("sequence encoding marks the target and eos") {
  const auto vocab = lm::Vocab::build(std::vector<std::string>{"a b c"});
  const auto seq = encode_sequence(vocab, "a b", "c");
  REQUIRE(seq.ids.size() == 5);
  CHECK(seq.ids.front() == lm::kBos);
  CHECK(seq.ids.back() == lm::kEos);
  CHECK(seq.loss_rows == std::vector<std::size_t>{2, 3});
  CHECK(seq.targets == std::vector<lm::TokenId>{vocab.id("c"), lm::kEos});
  CHECK(seq.inputs().size() == 4);
}

TEST_CASE("gradient accumulation matches one large batch") {
  auto cfg = tiny_config();
  const auto world = build_world(cfg);
  const auto corpus = make_pretraining_corpus(world.skg.graph, 16, 1);

  cfg.micro_batch = 8;
  cfg.grad_accum = 1;
  lm::DecoderLM one(cfg.lm_config(world.vocab.size()));
  pretrain_base_lm(one, world.vocab, corpus, cfg);

  cfg.micro_batch = 4;
  cfg.grad_accum = 2;
  lm::DecoderLM two(cfg.lm_config(world.vocab.size()));
  pretrain_base_lm(two, world.vocab, corpus, cfg);

  const auto p1 = one.params();
  const auto p2 = two.params();
  double worst = 0;
  for (std::size_t i = 0; i < p1.size(); ++i) {
    const auto& a = p1[i].var.value();
    const auto& b = p2[i].var.value();
    for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, std::abs(a.data()[k] - b.data()[k]));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("phase one trains the adapters and leaves embeddings alone") {
  auto cfg = tiny_config();
  cfg.alpha = 0;
  cfg.beta = 0;
  cfg.phase1_epochs = 4;
  cfg.phase1_lr = 1e-2;
  const auto world = build_world(cfg);
  const auto kges = enc::init_node_features(world.skg.graph, cfg.d_g, 0);
  lm::DecoderLM lm(cfg.lm_config(world.vocab.size()));
  const auto embed_before = num::checksum(lm.params().front().var.value());
  const auto all_before = num::checksum(lm.params());
  map::MappingNetwork mapper(cfg.mapper_config());
  const auto records = gen_phase1_dataset(world.skg.graph, false, 0);
  const auto curve = train_phase1(lm, mapper, kges, world.vocab, records, cfg);
  CHECK(curve.epoch_loss.back() < curve.epoch_loss.front());
  CHECK_FALSE(lm.has_lora());
  CHECK(num::checksum(lm.params().front().var.value()) == embed_before);
  CHECK(num::checksum(lm.params()) != all_before);
}

TEST_CASE("finetune keeps the mapper fixed") {
  auto cfg = tiny_config();
  cfg.finetune_epochs = 1;
  const auto world = build_world(cfg);
  const auto kges = enc::init_node_features(world.skg.graph, cfg.d_g, 0);
  lm::DecoderLM lm(cfg.lm_config(world.vocab.size()));
  map::MappingNetwork mapper(cfg.mapper_config());
  const ground::AliasIndex index(world.skg.graph);
  const QAContext ctx(&world.skg.graph, &index, map_table(mapper, kges));
  CHECK_THROWS(finetune(lm, mapper, world.vocab, world.qa.train, ctx, cfg, 0));

  mapper.freeze();
  const auto mapper_before = num::checksum(mapper.params());
  const auto embed_before = num::checksum(lm.params().front().var.value());
  MetricsLog log;
  finetune(lm, mapper, world.vocab, world.qa.train, ctx, cfg, 0, &log);
  CHECK(num::checksum(mapper.params()) == mapper_before);
  CHECK(num::checksum(lm.params().front().var.value()) == embed_before);
  CHECK_FALSE(log.records().empty());

  const auto r = evaluate(lm, world.vocab, world.qa.test, ctx, cfg, 0);
  CHECK(r.n == world.qa.test.size());
  CHECK(r.correct + r.incorrect + r.na == r.n);
}

TEST_CASE("qa context grounding and padding") {
  auto cfg = tiny_config();
  const auto world = build_world(cfg);
  const auto kges = enc::init_node_features(world.skg.graph, cfg.d_l, 0);
  const ground::AliasIndex index(world.skg.graph);
  const QAContext ctx(&world.skg.graph, &index, kges);
  const auto& ex = world.qa.test.front();
  for (std::size_t n : {0u, 1u, 4u}) {
    cfg.n_kge = n;
    const auto p = ctx.prepare(ex, cfg);
    CHECK(count_of(p.prompt, lm::kKgePlaceholder) == n);
    CHECK((n == 0 ? !p.kges.defined() : p.kges.value().rows() == n));
    CHECK(p.grounding.n_selected + p.grounding.n_padded == n);
  }
  cfg.mode = PromptMode::none;
  CHECK(ctx.prepare(ex, cfg).grounding.result.unique_cuis.empty());
}

TEST_CASE("metrics log writes one json object per line") {
  const auto path = temp_file("metrics.jsonl");
  {
    MetricsLog log(path);
    log.log("a.loss", 1.5, 2, 3);
    log.log("b", 0.25, 2, 4);
  }
  std::ifstream in(path);
  std::string line;
  std::vector<nlohmann::json> rows;
  while (std::getline(in, line)) rows.push_back(nlohmann::json::parse(line));
  REQUIRE(rows.size() == 2);
  CHECK(rows[0]["metric"] == "a.loss");
  CHECK(rows[1]["step"] == 4);
  std::filesystem::remove(path);
}
