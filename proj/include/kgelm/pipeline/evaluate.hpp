// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "kgelm/pipeline/config.hpp"
#include "kgelm/pipeline/prompts.hpp"
#include "kgelm/pipeline/training.hpp"
#include "kgelm/toylm/model.hpp"
#include "kgelm/toylm/vocab.hpp"

namespace kgelm::pipe {

/// Option letter from a completion, uppercased. Reads after the first
/// "Answer:" when present and accepts "X", "X)" and "X) text". A letter that
/// is not one of ex's options counts as unparseable.
std::optional<std::string> parse_answer(std::string_view completion, const QAExample* ex = nullptr);

struct EvalResult {
  std::uint64_t seed = 0;
  std::size_t n = 0;
  std::size_t correct = 0;
  std::size_t incorrect = 0;
  std::size_t na = 0;
  std::vector<std::string> completions;

  double accuracy() const;
  double error_rate() const;
  double na_rate() const;
};

/// Scores the completion returned for each example.
using Completer = std::function<std::string(const QAExample&)>;
EvalResult evaluate_completions(std::span<const QAExample> examples, const Completer& complete, std::uint64_t seed = 0);

/// Greedy decoding of every prompt.
EvalResult evaluate(const lm::DecoderLM& lm, const lm::Vocab& vocab, std::span<const QAExample> examples,
                    const QAContext& ctx, const RunConfig& cfg, std::uint64_t seed);

struct EvalReport {
  PromptMode mode = PromptMode::kge;
  std::size_t n_kge = 0;
  std::vector<EvalResult> per_seed;

  double mean_accuracy() const;
  /// Sample standard deviation over seeds (0 for a single seed).
  double std_accuracy() const;
  double mean_na_rate() const;
  nlohmann::ordered_json to_json() const;
};

}  // namespace kgelm::pipe
