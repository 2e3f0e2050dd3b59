// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Base LM pretraining, phase-I joint training of mapper and LM, and QA
// finetuning with the mapper frozen.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kgelm/encoders/embedding_table.hpp"
#include "kgelm/grounding/grounding.hpp"
#include "kgelm/kgstore/graph.hpp"
#include "kgelm/mapper/mapper.hpp"
#include "kgelm/pipeline/config.hpp"
#include "kgelm/pipeline/prompts.hpp"
#include "kgelm/toylm/model.hpp"
#include "kgelm/toylm/vocab.hpp"

namespace kgelm::pipe {

/// JSONL metric records {"metric", "value", "seed", "step"}, written as they arrive.
class MetricsLog {
 public:
  MetricsLog() = default;
  explicit MetricsLog(const std::filesystem::path& path);

  void log(std::string_view metric, double value, std::uint64_t seed, std::uint64_t step);
  const std::vector<nlohmann::ordered_json>& records() const { return records_; }

 private:
  std::optional<std::ofstream> out_;
  std::vector<nlohmann::ordered_json> records_;
};

/// BOS + prompt + target + EOS, with the loss on the target tokens and EOS.
struct Sequence {
  std::vector<lm::TokenId> ids;
  /// Input positions whose next token is a target, and those targets.
  std::vector<std::size_t> loss_rows;
  std::vector<lm::TokenId> targets;

  std::span<const lm::TokenId> inputs() const { return std::span(ids).first(ids.size() - 1); }
};

Sequence encode_sequence(const lm::Vocab& vocab, std::string_view prompt, std::string_view target);

/// Mean next-token cross-entropy over the loss rows. When first_correct is
/// given it is set to whether the first target token is the argmax.
num::Var sequence_loss(const lm::DecoderLM& lm, const Sequence& seq, const num::Var& kges,
                       bool* first_correct = nullptr);

struct TrainCurve {
  std::vector<double> step_loss;
  std::vector<double> epoch_loss;
  std::vector<double> epoch_accuracy;  // teacher-forced first-token accuracy; finetune only
};

/// Full-parameter next-token training on (prompt, target) pairs.
TrainCurve pretrain_base_lm(lm::DecoderLM& lm, const lm::Vocab& vocab,
                            std::span<const std::pair<std::string, std::string>> corpus, const RunConfig& cfg,
                            MetricsLog* log = nullptr);

/// Mean token embedding of each label, [labels.size(), d_l].
num::Tensor label_embeddings(const lm::DecoderLM& lm, const lm::Vocab& vocab, std::span<const std::string> labels);

/// Attaches adapters, trains mapper and adapters on
/// alpha * L_c + beta * L_bt + L_ce with the embedding layer frozen, then
/// merges the adapters. `kges` holds the graph embeddings (d_g) for every cui
/// in the records.
TrainCurve train_phase1(lm::DecoderLM& lm, map::MappingNetwork& mapper, const enc::NodeEmbeddingTable& kges,
                        const lm::Vocab& vocab, std::span<const InstructionRecord> records, const RunConfig& cfg,
                        MetricsLog* log = nullptr);

/// f_k applied to every row of the table (no graph recorded).
enc::NodeEmbeddingTable map_table(const map::MappingNetwork& mapper, const enc::NodeEmbeddingTable& table);

/// Grounding plus prompt rendering for QA examples. Graph and index may be
/// null for mode none.
class QAContext {
 public:
  QAContext() = default;
  QAContext(const kg::Graph* graph, const ground::AliasIndex* index, enc::NodeEmbeddingTable mapped);

  struct Prepared {
    std::string prompt;
    num::Var kges;  // [N, d_l] in kge mode with N > 0, else undefined
    ground::GroundingRecord grounding;
  };

  Prepared prepare(const QAExample& ex, const RunConfig& cfg) const;

 private:
  const kg::Graph* graph_ = nullptr;
  const ground::AliasIndex* index_ = nullptr;
  enc::NodeEmbeddingTable mapped_;
};

/// Re-attaches adapters and trains them on answer tokens only. The mapper
/// must already be frozen; the embedding layer stays frozen. Adapters are
/// merged on return.
TrainCurve finetune(lm::DecoderLM& lm, const map::MappingNetwork& mapper, const lm::Vocab& vocab,
                    std::span<const QAExample> train, const QAContext& ctx, const RunConfig& cfg, std::uint64_t seed,
                    MetricsLog* log = nullptr);

}  // namespace kgelm::pipe
