// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Prompt templates, instruction records, QA examples and the synthetic
// KG-dependent QA benchmark.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "kgelm/kgstore/graph.hpp"
#include "kgelm/kgstore/synth.hpp"

namespace kgelm::pipe {

enum class PromptMode { kge, triples_text, none };

std::string_view mode_name(PromptMode mode);
PromptMode parse_mode(std::string_view name);

inline constexpr std::string_view kPhase1Template =
    "[INST] What is the medical concept represented by {kg_embedding}? [/INST]";
inline constexpr std::string_view kAugmentedTemplate = "[INST] Explain to me these medical concepts: {list} [/INST]";

struct InstructionRecord {
  std::string prompt;  // holds one placeholder per cui
  std::string target;
  std::vector<std::string> cuis;
};

/// Base mode: one record per entity, in entity order, from a template holding
/// exactly one "{kg_embedding}". Augmented mode appends one record per
/// entity-count group of 2 to 10 distinct entities.
std::vector<InstructionRecord> gen_phase1_dataset(const kg::Graph& g, bool augmented, std::uint64_t seed,
                                                  std::string_view tmpl = kPhase1Template);

struct QAExample {
  std::string id;
  std::optional<std::string> context;
  std::string question;
  std::vector<std::pair<std::string, std::string>> options;  // letter -> text, in display order
  std::string answer_key;

  /// Throws naming the id when there are fewer than 2 options, a letter
  /// repeats, or the answer key is not an option letter.
  void validate() const;
  const std::string* option(std::string_view letter) const;

  friend bool operator==(const QAExample&, const QAExample&) = default;
};

struct VerbalTriple {
  std::string subject;
  std::string relation;
  std::string object;

  friend bool operator==(const VerbalTriple&, const VerbalTriple&) = default;
};

/// "[{s, p, o}, {s, p, o}]"
std::string render_triples(std::span<const VerbalTriple> triples);

/// The instruction prompt, ending in "Answer:". In kge mode the Graph field
/// holds n placeholders; triples_text renders `triples` there instead; none
/// drops the field (and ignores n).
std::string format_qa_prompt(const QAExample& ex, std::size_t n, PromptMode mode,
                             std::span<const VerbalTriple> triples = {});
/// Prompt followed by " {answer_key}".
std::string format_qa_training_text(const QAExample& ex, std::size_t n, PromptMode mode,
                                    std::span<const VerbalTriple> triples = {});

/// The text handed to the entity linker: context, question and, when
/// with_options is set, every option text.
std::string grounding_text(const QAExample& ex, bool with_options);

/// Up to neighbors_per_entity outgoing neighbors for each of the first
/// max_entities cuis, verbalized with labels and relation phrases.
std::vector<VerbalTriple> build_triples_context(const kg::Graph& g, std::span<const std::string> cuis,
                                                std::size_t max_entities, std::size_t neighbors_per_entity,
                                                std::uint64_t seed);

/// One JSON object per line: {"id", "context", "question", "options": {"A": ...}, "answer"}.
/// The reader also accepts MedQA-style "answer_idx" and MedMCQA-style
/// "opa".."opd" / "cop" (1-based) fields.
void write_qa_jsonl(const std::filesystem::path& path, std::span<const QAExample> examples);
std::vector<QAExample> read_qa_jsonl(const std::filesystem::path& path);

/// One question per attribute fact: "What is the <relation phrase> of
/// <concept label>?" with the attribute's sibling values as options, in the
/// attribute's value order.
std::vector<QAExample> make_synthetic_qa(const kg::SyntheticKG& skg);

struct QASplit {
  std::vector<QAExample> train, valid, test;
};

/// Seeded shuffle, then train/valid/test by the given fractions (test takes the rest).
QASplit split_qa(std::vector<QAExample> examples, double train_fraction, double valid_fraction, std::uint64_t seed);

/// Generic (prompt, target) corpus for the base LM: copy tasks cycling over
/// every alias, and QA prompts whose answer is stated in the prompt itself (as
/// context or as graph triples). Subjects, relations and options are drawn at
/// random, independently of the graph's edges, so no graph fact leaks.
std::vector<std::pair<std::string, std::string>> make_pretraining_corpus(const kg::Graph& g, std::size_t n_examples,
                                                                         std::uint64_t seed);

/// Every string the tokenizer has to cover: templates, aliases, relation phrases.
std::vector<std::string> vocabulary_corpus(const kg::Graph& g);

}  // namespace kgelm::pipe
