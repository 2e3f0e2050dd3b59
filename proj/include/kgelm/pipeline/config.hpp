// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "kgelm/encoders/embedding_table.hpp"
#include "kgelm/kgstore/synth.hpp"
#include "kgelm/mapper/mapper.hpp"
#include "kgelm/pipeline/prompts.hpp"
#include "kgelm/toylm/model.hpp"

namespace kgelm::pipe {

/// Everything a run needs. Defaults are the desk-scale settings.
struct RunConfig {
  std::uint64_t seed = 0;                       // graph, encoder, base LM and phase I
  std::vector<std::uint64_t> seeds{0, 1, 2};    // finetune and evaluation
  PromptMode mode = PromptMode::kge;
  std::size_t n_kge = 4;
  bool ground_options = false;
  std::size_t triples_max_entities = 10;
  std::size_t triples_neighbors = 2;

  // Synthetic graph.
  std::size_t kg_entities = 800;
  std::size_t kg_relations = 6;
  double kg_degree_mean = 3.0;
  std::size_t kg_values_per_attribute = 4;
  double kg_homophily = 0.8;

  // Encoder.
  enc::EncoderKind encoder = enc::EncoderKind::egraphsage;
  std::size_t d_g = 64;
  std::size_t encoder_epochs = 0;  // 0 keeps the encoder's default

  // Language model.
  std::size_t d_l = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t max_seq_len = 192;
  std::size_t lora_rank = 16;
  double lora_scaling = 2.0;

  // Mapper.
  std::size_t d_h = 128;
  std::size_t n_hidden = 4;
  double tau = 1.0;
  double alpha = 1.0;
  double beta = 1.0;
  map::NtXentDenominator ntxent_denominator = map::NtXentDenominator::targets;

  // Base LM pretraining.
  std::size_t pretrain_examples = 3000;
  std::size_t pretrain_epochs = 1;
  double pretrain_lr = 3e-3;

  // Phase I.
  std::size_t phase1_epochs = 1;
  double phase1_lr = 1e-3;
  bool phase1_augmented = false;
  std::string phase1_template{kPhase1Template};

  // Finetune.
  std::size_t finetune_epochs = 6;
  double finetune_lr = 5e-3;

  std::size_t micro_batch = 16;
  std::size_t grad_accum = 1;
  double warmup_ratio = 0.03;
  std::size_t eval_max_new = 3;

  /// Throws on the first inconsistent field.
  void validate() const;
  /// N as used for prompts: 0 unless mode is kge.
  std::size_t effective_n() const { return mode == PromptMode::kge ? n_kge : 0; }

  kg::SyntheticConfig kg_config() const;
  enc::EncoderConfig encoder_config() const;
  lm::LMConfig lm_config(std::size_t vocab_size) const;
  map::MapperConfig mapper_config() const;

  nlohmann::ordered_json to_json() const;
};

}  // namespace kgelm::pipe
