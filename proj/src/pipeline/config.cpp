// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0

#include "kgelm/pipeline/config.hpp"

#include "kgelm/error.hpp"

namespace kgelm::pipe {

void RunConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error("run config: " + what); };
  if (seeds.empty()) fail("seeds must not be empty");
  if (micro_batch < 2) fail("micro_batch must be >= 2 (the contrastive loss needs two rows)");
  if (grad_accum == 0) fail("grad_accum must be >= 1");
  if (lora_rank == 0) fail("lora_rank must be >= 1");
  if (!(pretrain_lr > 0) || !(phase1_lr > 0) || !(finetune_lr > 0)) fail("learning rates must be > 0");
  if (warmup_ratio < 0 || warmup_ratio > 1) fail("warmup_ratio must be in [0, 1]");
  if (eval_max_new == 0) fail("eval_max_new must be >= 1");
  if (alpha < 0 || beta < 0) fail("alpha and beta must be >= 0");
  kg_config();
  encoder_config().validate();
  mapper_config().validate();
  lm_config(lm::kNumSpecials + 1).validate();
}

kg::SyntheticConfig RunConfig::kg_config() const {
  kg::SyntheticConfig c;
  c.n_entities = kg_entities;
  c.n_relations = kg_relations;
  c.degree_mean = kg_degree_mean;
  c.values_per_attribute = kg_values_per_attribute;
  c.seed = seed;
  c.homophily = kg_homophily;
  return c;
}

enc::EncoderConfig RunConfig::encoder_config() const {
  auto c = enc::default_config(encoder);
  c.d_g = d_g;
  c.seed = seed;
  if (encoder_epochs > 0) c.epochs = encoder_epochs;
  return c;
}

lm::LMConfig RunConfig::lm_config(std::size_t vocab_size) const {
  lm::LMConfig c;
  c.vocab_size = vocab_size;
  c.d_l = d_l;
  c.n_layers = n_layers;
  c.n_heads = n_heads;
  c.d_ff = d_ff;
  c.max_seq_len = max_seq_len;
  c.seed = seed;
  return c;
}

map::MapperConfig RunConfig::mapper_config() const {
  map::MapperConfig c;
  c.d_g = d_g;
  c.d_h = d_h;
  c.n_hidden = n_hidden;
  c.d_l = d_l;
  c.tau = tau;
  c.alpha = alpha;
  c.beta = beta;
  c.ntxent_denominator = ntxent_denominator;
  c.seed = seed;
  return c;
}

nlohmann::ordered_json RunConfig::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["seeds"] = seeds;
  j["mode"] = mode_name(mode);
  j["n_kge"] = n_kge;
  j["ground_options"] = ground_options;
  j["triples_max_entities"] = triples_max_entities;
  j["triples_neighbors"] = triples_neighbors;
  j["kg_entities"] = kg_entities;
  j["kg_relations"] = kg_relations;
  j["kg_degree_mean"] = kg_degree_mean;
  j["kg_values_per_attribute"] = kg_values_per_attribute;
  j["kg_homophily"] = kg_homophily;
  j["encoder"] = enc::kind_name(encoder);
  j["d_g"] = d_g;
  j["encoder_epochs"] = encoder_epochs;
  j["d_l"] = d_l;
  j["n_layers"] = n_layers;
  j["n_heads"] = n_heads;
  j["d_ff"] = d_ff;
  j["max_seq_len"] = max_seq_len;
  j["lora_rank"] = lora_rank;
  j["lora_scaling"] = lora_scaling;
  j["d_h"] = d_h;
  j["n_hidden"] = n_hidden;
  j["tau"] = tau;
  j["alpha"] = alpha;
  j["beta"] = beta;
  j["ntxent_denominator"] = map::denominator_name(ntxent_denominator);
  j["pretrain_examples"] = pretrain_examples;
  j["pretrain_epochs"] = pretrain_epochs;
  j["pretrain_lr"] = pretrain_lr;
  j["phase1_epochs"] = phase1_epochs;
  j["phase1_lr"] = phase1_lr;
  j["phase1_augmented"] = phase1_augmented;
  j["phase1_template"] = phase1_template;
  j["finetune_epochs"] = finetune_epochs;
  j["finetune_lr"] = finetune_lr;
  j["micro_batch"] = micro_batch;
  j["grad_accum"] = grad_accum;
  j["warmup_ratio"] = warmup_ratio;
  j["eval_max_new"] = eval_max_new;
  return j;
}

}  // namespace kgelm::pipe
