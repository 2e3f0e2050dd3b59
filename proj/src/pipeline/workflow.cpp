// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0

#include "kgelm/pipeline/workflow.hpp"

#include "kgelm/encoders/distmult.hpp"
#include "kgelm/encoders/graphsage.hpp"
#include "kgelm/encoders/rdf2vec.hpp"
#include "kgelm/error.hpp"
#include "kgelm/numkit/rng.hpp"

namespace kgelm::pipe {

World build_world(const RunConfig& cfg) {
  cfg.validate();
  World w{kg::generate_synthetic_kg(cfg.kg_config()), {}, {}};
  w.qa = split_qa(make_synthetic_qa(w.skg), 0.7, 0.1, num::mix_seed(cfg.seed, 0x5a11));
  w.vocab = lm::Vocab::build(vocabulary_corpus(w.skg.graph));
  return w;
}

enc::NodeEmbeddingTable train_encoder(const kg::Graph& g, const RunConfig& cfg) {
  return train_encoder(g, cfg.encoder_config());
}

enc::NodeEmbeddingTable train_encoder(const kg::Graph& g, const enc::EncoderConfig& ec) {
  switch (ec.kind) {
    case enc::EncoderKind::graphsage: return enc::train_graphsage(g, ec).table;
    case enc::EncoderKind::egraphsage: return enc::train_egraphsage(g, ec).table;
    case enc::EncoderKind::distmult: return enc::train_distmult(g, ec).entities;
    case enc::EncoderKind::rdf2vec: return enc::rdf2vec_embed(g, ec);
  }
  throw Error("train_encoder: unknown encoder kind");
}

std::unique_ptr<lm::DecoderLM> clone_lm(const lm::DecoderLM& src) {
  if (src.has_lora()) throw Error("clone_lm: merge adapters first");
  auto dst = std::make_unique<lm::DecoderLM>(src.config());
  copy_weights(*dst, src);
  return dst;
}

void copy_weights(lm::DecoderLM& dst, const lm::DecoderLM& src) {
  auto d = dst.params();
  const auto s = src.params();
  if (d.size() != s.size()) throw Error("copy_weights: parameter lists differ");
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i].name != s[i].name || d[i].var.value().rows() != s[i].var.value().rows() ||
        d[i].var.value().cols() != s[i].var.value().cols()) {
      throw Error("copy_weights: mismatch at " + d[i].name);
    }
    d[i].var.mutable_value() = s[i].var.value();
  }
}

std::unique_ptr<lm::DecoderLM> make_base_lm(const World& world, const RunConfig& cfg, MetricsLog* log) {
  auto lm = std::make_unique<lm::DecoderLM>(cfg.lm_config(world.vocab.size()));
  const auto corpus = make_pretraining_corpus(world.skg.graph, cfg.pretrain_examples, num::mix_seed(cfg.seed, 0xc0));
  pretrain_base_lm(*lm, world.vocab, corpus, cfg, log);
  return lm;
}

Phase1Output run_phase1(const World& world, const lm::DecoderLM& base, const enc::NodeEmbeddingTable& kges,
                        const RunConfig& cfg, MetricsLog* log) {
  Phase1Output out{clone_lm(base), std::make_unique<map::MappingNetwork>(cfg.mapper_config())};
  const auto records =
      gen_phase1_dataset(world.skg.graph, cfg.phase1_augmented, num::mix_seed(cfg.seed, 0x91), cfg.phase1_template);
  train_phase1(*out.lm, *out.mapper, kges, world.vocab, records, cfg, log);
  out.mapper->freeze();
  return out;
}

EvalReport run_benchmark(const World& world, const lm::DecoderLM& lm, const map::MappingNetwork& mapper,
                         const enc::NodeEmbeddingTable& kges, const RunConfig& cfg, MetricsLog* log) {
  if (!mapper.frozen()) throw Error("run_benchmark: mapper must be frozen");
  const ground::AliasIndex index(world.skg.graph);
  const QAContext ctx(&world.skg.graph, &index, map_table(mapper, kges));
  EvalReport report;
  report.mode = cfg.mode;
  report.n_kge = cfg.mode == PromptMode::kge ? cfg.effective_n() : 0;
  for (const auto seed : cfg.seeds) {
    RunConfig c = cfg;
    c.seed = seed;
    auto model = clone_lm(lm);
    finetune(*model, mapper, world.vocab, world.qa.train, ctx, c, seed, log);
    auto r = evaluate(*model, world.vocab, world.qa.test, ctx, c, seed);
    if (log) {
      const std::string tag = "eval." + std::string(mode_name(cfg.mode));
      log->log(tag + ".accuracy", r.accuracy(), seed, 0);
      log->log(tag + ".na_rate", r.na_rate(), seed, 0);
    }
    report.per_seed.push_back(std::move(r));
  }
  return report;
}

}  // namespace kgelm::pipe
