// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end stages shared by the CLI and the acceptance suite.

#pragma once

#include <cstdint>
#include <memory>

#include "kgelm/encoders/embedding_table.hpp"
#include "kgelm/grounding/grounding.hpp"
#include "kgelm/kgstore/synth.hpp"
#include "kgelm/mapper/mapper.hpp"
#include "kgelm/pipeline/config.hpp"
#include "kgelm/pipeline/evaluate.hpp"
#include "kgelm/pipeline/prompts.hpp"
#include "kgelm/pipeline/training.hpp"
#include "kgelm/toylm/model.hpp"
#include "kgelm/toylm/vocab.hpp"

namespace kgelm::pipe {

/// Synthetic graph, its QA splits (70/10/20) and the vocabulary.
struct World {
  kg::SyntheticKG skg;
  QASplit qa;
  lm::Vocab vocab;
};

World build_world(const RunConfig& cfg);

/// Dispatches on cfg.encoder.
enc::NodeEmbeddingTable train_encoder(const kg::Graph& g, const RunConfig& cfg);
enc::NodeEmbeddingTable train_encoder(const kg::Graph& g, const enc::EncoderConfig& cfg);

struct Phase1Output {
  std::unique_ptr<lm::DecoderLM> lm;
  std::unique_ptr<map::MappingNetwork> mapper;
};

/// Fresh base LM pretrained on the in-context corpus.
std::unique_ptr<lm::DecoderLM> make_base_lm(const World& world, const RunConfig& cfg, MetricsLog* log = nullptr);

/// Phase I on top of a base LM (copied, not modified).
Phase1Output run_phase1(const World& world, const lm::DecoderLM& base, const enc::NodeEmbeddingTable& kges,
                        const RunConfig& cfg, MetricsLog* log = nullptr);

/// Same architecture and weights, no adapters.
std::unique_ptr<lm::DecoderLM> clone_lm(const lm::DecoderLM& src);
void copy_weights(lm::DecoderLM& dst, const lm::DecoderLM& src);

/// For each seed in cfg.seeds: finetune a copy of lm in cfg.mode, then score
/// the test split.
EvalReport run_benchmark(const World& world, const lm::DecoderLM& lm, const map::MappingNetwork& mapper,
                         const enc::NodeEmbeddingTable& kges, const RunConfig& cfg, MetricsLog* log = nullptr);

}  // namespace kgelm::pipe
