// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0
//
// kgelm: command-line driver for the synthetic graph, encoders, phase I,
// finetuning, evaluation and diagnostics.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "kgelm/encoders/link_eval.hpp"
#include "kgelm/error.hpp"
#include "kgelm/kgstore/graph.hpp"
#include "kgelm/pipeline/diagnostics.hpp"
#include "kgelm/pipeline/workflow.hpp"

namespace fs = std::filesystem;
using namespace kgelm;
using namespace kgelm::pipe;

namespace {

struct Options {
  RunConfig cfg;
  std::string mode = "kge";
  std::string encoder = "egraphsage";
  std::string denominator = "targets";
  fs::path out = "run";
};

void add_run_options(CLI::App& app, Options& o) {
  auto& c = o.cfg;
  app.add_option("--seed", c.seed, "Seed for graph, encoder, base LM and phase I");
  app.add_option("--seeds", c.seeds, "Finetune and evaluation seeds")->delimiter(',');
  app.add_option("--mode", o.mode, "kge, triples_text or none");
  app.add_option("--n_kge", c.n_kge);
  app.add_option("--ground_options", c.ground_options);
  app.add_option("--triples_max_entities", c.triples_max_entities);
  app.add_option("--triples_neighbors", c.triples_neighbors);
  app.add_option("--kg_entities", c.kg_entities);
  app.add_option("--kg_relations", c.kg_relations);
  app.add_option("--kg_degree_mean", c.kg_degree_mean);
  app.add_option("--kg_values_per_attribute", c.kg_values_per_attribute);
  app.add_option("--kg_homophily", c.kg_homophily);
  app.add_option("--encoder", o.encoder, "graphsage, egraphsage, distmult or rdf2vec");
  app.add_option("--d_g", c.d_g);
  app.add_option("--encoder_epochs", c.encoder_epochs);
  app.add_option("--d_l", c.d_l);
  app.add_option("--n_layers", c.n_layers);
  app.add_option("--n_heads", c.n_heads);
  app.add_option("--d_ff", c.d_ff);
  app.add_option("--max_seq_len", c.max_seq_len);
  app.add_option("--lora_rank", c.lora_rank);
  app.add_option("--lora_scaling", c.lora_scaling);
  app.add_option("--d_h", c.d_h);
  app.add_option("--n_hidden", c.n_hidden);
  app.add_option("--tau", c.tau);
  app.add_option("--alpha", c.alpha);
  app.add_option("--beta", c.beta);
  app.add_option("--ntxent_denominator", o.denominator, "targets or mixed");
  app.add_option("--pretrain_examples", c.pretrain_examples);
  app.add_option("--pretrain_epochs", c.pretrain_epochs);
  app.add_option("--pretrain_lr", c.pretrain_lr);
  app.add_option("--phase1_epochs", c.phase1_epochs);
  app.add_option("--phase1_lr", c.phase1_lr);
  app.add_option("--phase1_augmented", c.phase1_augmented);
  app.add_option("--phase1_template", c.phase1_template);
  app.add_option("--finetune_epochs", c.finetune_epochs);
  app.add_option("--finetune_lr", c.finetune_lr);
  app.add_option("--micro_batch", c.micro_batch);
  app.add_option("--grad_accum", c.grad_accum);
  app.add_option("--warmup_ratio", c.warmup_ratio);
  app.add_option("--eval_max_new", c.eval_max_new);
}

void finalize(Options& o) {
  o.cfg.mode = parse_mode(o.mode);
  o.cfg.encoder = enc::parse_kind(o.encoder);
  o.cfg.ntxent_denominator = map::parse_denominator(o.denominator);
  o.cfg.validate();
  fs::create_directories(o.out);
}

void write_json(const fs::path& path, const nlohmann::ordered_json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

fs::path table_path(const Options& o) { return o.out / ("kge_" + std::string(enc::kind_name(o.cfg.encoder)) + ".csv"); }

/// Reuses the encoder output in --out when present.
enc::NodeEmbeddingTable encoder_table(const World& w, const Options& o) {
  const auto path = table_path(o);
  if (fs::exists(path)) {
    auto t = enc::read_embedding_csv(path);
    if (t.covers(w.skg.graph) && t.dim() == o.cfg.d_g) return t;
  }
  auto t = train_encoder(w.skg.graph, o.cfg);
  enc::write_embedding_csv(t, path);
  return t;
}

struct Loaded {
  std::unique_ptr<lm::DecoderLM> lm;
  std::unique_ptr<map::MappingNetwork> mapper;
};

Loaded load_phase1(const World& w, const Options& o) {
  for (const char* f : {"lm.ckpt", "mapper.ckpt"}) {
    if (!fs::exists(o.out / f)) throw Error((o.out / f).string() + " not found; run `kgelm phase1` first");
  }
  Loaded l{std::make_unique<lm::DecoderLM>(o.cfg.lm_config(w.vocab.size())),
           std::make_unique<map::MappingNetwork>(o.cfg.mapper_config())};
  lm::load_lm(*l.lm, o.out / "lm.ckpt");
  map::load_mapper(*l.mapper, o.out / "mapper.ckpt");
  l.mapper->freeze();
  return l;
}

int cmd_kg_synth(Options& o) {
  const auto w = build_world(o.cfg);
  kg::save_graph(w.skg.graph, o.out / "triples.tsv", o.out / "entities.jsonl");
  w.vocab.save_jsonl(o.out / "vocab.jsonl");
  write_qa_jsonl(o.out / "qa_train.jsonl", w.qa.train);
  write_qa_jsonl(o.out / "qa_valid.jsonl", w.qa.valid);
  write_qa_jsonl(o.out / "qa_test.jsonl", w.qa.test);
  write_json(o.out / "config.json", o.cfg.to_json());
  nlohmann::ordered_json j;
  j["entities"] = w.skg.graph.num_entities();
  j["relations"] = w.skg.graph.num_relations();
  j["edges"] = w.skg.graph.num_edges();
  j["questions"] = w.qa.train.size() + w.qa.valid.size() + w.qa.test.size();
  j["vocab"] = w.vocab.size();
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_kg_load(const fs::path& triples, const fs::path& entities, const fs::path& phase1_out) {
  const auto g = kg::load_graph(triples, entities);
  nlohmann::ordered_json j;
  j["entities"] = g.num_entities();
  j["relations"] = g.num_relations();
  j["edges"] = g.num_edges();
  j["aliases"] = g.alias_table().size();
  if (!phase1_out.empty()) {
    std::ofstream out(phase1_out);
    for (const auto& r : gen_phase1_dataset(g, false, 0)) {
      nlohmann::ordered_json row;
      row["prompt"] = r.prompt;
      row["target"] = r.target;
      row["cuis"] = r.cuis;
      out << row.dump() << "\n";
    }
  }
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_encoder_train(Options& o) {
  const auto w = build_world(o.cfg);
  const auto t = train_encoder(w.skg.graph, o.cfg);
  enc::write_embedding_csv(t, table_path(o));
  std::cout << table_path(o).string() << "\n";
  return 0;
}

int cmd_encoder_eval(Options& o, const std::vector<std::string>& kinds) {
  const auto w = build_world(o.cfg);
  const auto split = kg::split_edges(w.skg.graph, 0.2, o.cfg.seed);
  const auto train_graph = kg::edge_subgraph(w.skg.graph, split.train);
  nlohmann::ordered_json j;
  for (const auto& k : kinds) {
    RunConfig c = o.cfg;
    c.encoder = enc::parse_kind(k);
    auto ec = c.encoder_config();
    ec.allow_isolated = true;
    const auto t = train_encoder(train_graph, ec);
    j[k] = enc::eval_edge_classification(t, w.skg.graph, split.train, split.test, o.cfg.seed);
  }
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_phase1(Options& o) {
  const auto w = build_world(o.cfg);
  const auto table = encoder_table(w, o);
  MetricsLog log(o.out / "metrics.jsonl");
  std::unique_ptr<lm::DecoderLM> base;
  const auto base_path = o.out / "base_lm.ckpt";
  if (fs::exists(base_path)) {
    base = std::make_unique<lm::DecoderLM>(o.cfg.lm_config(w.vocab.size()));
    lm::load_lm(*base, base_path);
  } else {
    base = make_base_lm(w, o.cfg, &log);
    lm::save_lm(*base, base_path);
  }
  const auto p1 = run_phase1(w, *base, table, o.cfg, &log);
  lm::save_lm(*p1.lm, o.out / "lm.ckpt");
  map::save_mapper(*p1.mapper, o.out / "mapper.ckpt");
  w.vocab.save_jsonl(o.out / "vocab.jsonl");
  write_json(o.out / "config.json", o.cfg.to_json());
  std::cout << (o.out / "lm.ckpt").string() << "\n" << (o.out / "mapper.ckpt").string() << "\n";
  return 0;
}

int cmd_finetune(Options& o) {
  const auto w = build_world(o.cfg);
  const auto table = encoder_table(w, o);
  auto l = load_phase1(w, o);
  const ground::AliasIndex index(w.skg.graph);
  const QAContext ctx(&w.skg.graph, &index, map_table(*l.mapper, table));
  MetricsLog log(o.out / ("metrics_finetune_" + o.mode + ".jsonl"));
  for (const auto seed : o.cfg.seeds) {
    RunConfig c = o.cfg;
    c.seed = seed;
    auto model = clone_lm(*l.lm);
    finetune(*model, *l.mapper, w.vocab, w.qa.train, ctx, c, seed, &log);
    const auto path = o.out / ("lm_ft_" + o.mode + "_" + std::to_string(seed) + ".ckpt");
    lm::save_lm(*model, path);
    std::cout << path.string() << "\n";
  }
  return 0;
}

int cmd_eval(Options& o) {
  const auto w = build_world(o.cfg);
  const auto table = encoder_table(w, o);
  auto l = load_phase1(w, o);
  MetricsLog log(o.out / ("metrics_eval_" + o.mode + ".jsonl"));
  const auto report = run_benchmark(w, *l.lm, *l.mapper, table, o.cfg, &log);

  const ground::AliasIndex index(w.skg.graph);
  const QAContext ctx(&w.skg.graph, &index, map_table(*l.mapper, table));
  std::vector<ground::GroundingRecord> records;
  for (const auto& ex : w.qa.test) records.push_back(ctx.prepare(ex, o.cfg).grounding);
  ground::write_grounding_report(o.out / ("grounding_" + o.mode + ".jsonl"), records);

  auto j = report.to_json();
  j["questions"] = w.qa.train.size() + w.qa.valid.size() + w.qa.test.size();
  j["test_questions"] = w.qa.test.size();
  write_json(o.out / ("eval_" + o.mode + ".json"), j);
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_probe(Options& o, const std::string& question, std::size_t max_new) {
  const auto w = build_world(o.cfg);
  const auto table = encoder_table(w, o);
  auto l = load_phase1(w, o);
  const ground::AliasIndex index(w.skg.graph);
  const auto r = probe(*l.lm, w.vocab, index, map_table(*l.mapper, table), question, o.cfg.n_kge, o.cfg.seed, max_new);
  nlohmann::ordered_json j;
  j["prompt"] = r.prompt;
  j["completion"] = r.completion;
  j["cuis"] = r.grounding.result.unique_cuis;
  j["n_selected"] = r.grounding.n_selected;
  j["n_padded"] = r.grounding.n_padded;
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_diag_structure(Options& o, std::size_t k, std::size_t max_nodes) {
  const auto w = build_world(o.cfg);
  const auto table = encoder_table(w, o);
  auto l = load_phase1(w, o);
  const auto m = structure_metrics(table, map_table(*l.mapper, table), k, o.cfg.seed, max_nodes);
  write_json(o.out / "diag_structure.json", m.to_json());
  std::cout << m.to_json().dump() << "\n";
  return 0;
}

int cmd_export(Options& o, bool mapped, const fs::path& path) {
  const auto w = build_world(o.cfg);
  const auto table = encoder_table(w, o);
  if (mapped) {
    auto l = load_phase1(w, o);
    enc::write_embedding_csv(map_table(*l.mapper, table), path);
  } else {
    enc::write_embedding_csv(table, path);
  }
  std::cout << path.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kgelm: graph-embedding augmented toy language model"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "TOML file with run options");
  Options o;
  add_run_options(app, o);
  app.add_option("--out", o.out, "Artifact directory");

  auto* kg = app.add_subcommand("kg", "Graph utilities")->require_subcommand(1);
  auto* synth = kg->add_subcommand("synth", "Generate the synthetic graph, vocabulary and QA splits");
  auto* load = kg->add_subcommand("load", "Load a triples/entities pair and report its size");
  fs::path triples, entities, phase1_out;
  load->add_option("--triples", triples)->required()->check(CLI::ExistingFile);
  load->add_option("--entities", entities)->required()->check(CLI::ExistingFile);
  load->add_option("--phase1-out", phase1_out, "Also write phase-I instruction records here");

  auto* encoder = app.add_subcommand("encoder", "Graph encoders")->require_subcommand(1);
  auto* enc_train = encoder->add_subcommand("train", "Train the configured encoder and write its CSV");
  std::string kind_override;
  enc_train->add_option("--kind", kind_override);
  auto* enc_eval = encoder->add_subcommand("eval-links", "Edge-type classification on a held-out split");
  std::vector<std::string> kinds{"graphsage", "egraphsage", "distmult", "rdf2vec"};
  enc_eval->add_option("--kinds", kinds)->delimiter(',');

  auto* phase1 = app.add_subcommand("phase1", "Base LM pretraining (if needed) and phase-I training");
  auto* ft = app.add_subcommand("finetune", "Finetune adapters per seed with the mapper frozen");
  auto* ev = app.add_subcommand("eval", "Finetune and evaluate per seed on the test split");
  auto* pr = app.add_subcommand("probe", "Greedy completion of a free-form question");
  std::string question;
  std::size_t max_new = 8;
  pr->add_option("--question", question)->required();
  pr->add_option("--max-new", max_new);
  auto* diag = app.add_subcommand("diag", "Diagnostics")->require_subcommand(1);
  auto* structure = diag->add_subcommand("structure", "Neighbourhood structure before and after mapping");
  std::size_t k = 10, max_nodes = 500;
  structure->add_option("--k", k);
  structure->add_option("--max-nodes", max_nodes);
  auto* exp = app.add_subcommand("export-emb", "Write raw or mapped embeddings as CSV");
  bool mapped = false;
  fs::path exp_path;
  exp->add_flag("--mapped", mapped);
  exp->add_option("--path", exp_path)->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (!kind_override.empty()) o.encoder = kind_override;
    finalize(o);
    if (*synth) return cmd_kg_synth(o);
    if (*load) return cmd_kg_load(triples, entities, phase1_out);
    if (*enc_train) return cmd_encoder_train(o);
    if (*enc_eval) return cmd_encoder_eval(o, kinds);
    if (*phase1) return cmd_phase1(o);
    if (*ft) return cmd_finetune(o);
    if (*ev) return cmd_eval(o);
    if (*pr) return cmd_probe(o, question, max_new);
    if (*structure) return cmd_diag_structure(o, k, max_nodes);
    if (*exp) return cmd_export(o, mapped, exp_path);
  } catch (const std::exception& e) {
    std::cerr << "kgelm: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
