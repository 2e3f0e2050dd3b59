// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0

#include "kgelm/pipeline/prompts.hpp"

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <set>

#include "kgelm/error.hpp"
#include "kgelm/numkit/rng.hpp"
#include "kgelm/toylm/vocab.hpp"

namespace kgelm::pipe {

namespace {

constexpr std::string_view kQaHeader =
    "[INST] Please address the following medical question based on the Input text and any useful information "
    "you may find in the given concepts from a medical graph.\nInput: ";
constexpr std::string_view kQaInstruction = "Answer with the best option directly. Ignore irrelevant information.";
constexpr std::string_view kQaTail = " [/INST]\nAnswer:";

std::string replace_once(std::string s, std::string_view what, std::string_view with) {
  const auto pos = s.find(what);
  if (pos == std::string::npos) throw Error("template is missing " + std::string(what));
  s.replace(pos, what.size(), with);
  return s;
}

std::size_t count_of(std::string_view s, std::string_view what) {
  std::size_t n = 0;
  for (auto pos = s.find(what); pos != std::string_view::npos; pos = s.find(what, pos + what.size())) ++n;
  return n;
}

std::string letter(std::size_t i) { return std::string(1, static_cast<char>('A' + i)); }

}  // namespace

std::string_view mode_name(PromptMode mode) {
  switch (mode) {
    case PromptMode::kge:
      return "kge";
    case PromptMode::triples_text:
      return "triples_text";
    case PromptMode::none:
      return "none";
  }
  return "?";
}

PromptMode parse_mode(std::string_view name) {
  if (name == "kge") return PromptMode::kge;
  if (name == "triples_text") return PromptMode::triples_text;
  if (name == "none") return PromptMode::none;
  throw Error("unknown prompt mode '" + std::string(name) + "' (expected kge, triples_text or none)");
}

std::vector<InstructionRecord> gen_phase1_dataset(const kg::Graph& g, bool augmented, std::uint64_t seed,
                                                  std::string_view tmpl) {
  if (count_of(tmpl, lm::kKgePlaceholder) != 1) throw Error("phase-I template must hold exactly one {kg_embedding}");
  std::vector<InstructionRecord> out;
  for (const auto& e : g.entities()) out.push_back({std::string(tmpl), e.label, {e.cui}});
  if (!augmented) return out;
  num::Rng rng(num::mix_seed(seed, num::hash_bytes("phase1.augmented")));
  const std::size_t n = g.num_entities();
  if (n < 2) return out;
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t size = 2 + rng.uniform_index(std::min<std::size_t>(9, n - 1));
    const auto picks = rng.sample_indices(n, size);
    InstructionRecord rec;
    std::string slots;
    for (std::size_t i = 0; i < picks.size(); ++i) {
      const auto& e = g.entity(static_cast<kg::EntityId>(picks[i]));
      if (i > 0) {
        slots += ", ";
        rec.target += ", ";
      }
      slots += lm::kKgePlaceholder;
      rec.target += e.label;
      rec.cuis.push_back(e.cui);
    }
    rec.prompt = replace_once(std::string(kAugmentedTemplate), "{list}", slots);
    out.push_back(std::move(rec));
  }
  return out;
}

void QAExample::validate() const {
  if (options.size() < 2) throw Error("QA example " + id + ": needs at least 2 options");
  std::set<std::string> seen;
  for (const auto& [l, text] : options) {
    if (l.empty() || !seen.insert(l).second) throw Error("QA example " + id + ": bad or repeated option letter '" + l + "'");
  }
  if (!seen.count(answer_key)) throw Error("QA example " + id + ": answer '" + answer_key + "' is not an option");
}

const std::string* QAExample::option(std::string_view l) const {
  for (const auto& [k, text] : options) {
    if (k == l) return &text;
  }
  return nullptr;
}

std::string render_triples(std::span<const VerbalTriple> triples) {
  std::string s = "[";
  for (std::size_t i = 0; i < triples.size(); ++i) {
    if (i > 0) s += ", ";
    s += "{" + triples[i].subject + ", " + triples[i].relation + ", " + triples[i].object + "}";
  }
  return s + "]";
}

std::string format_qa_prompt(const QAExample& ex, std::size_t n, PromptMode mode,
                             std::span<const VerbalTriple> triples) {
  std::string s(kQaHeader);
  if (ex.context && !ex.context->empty()) s += *ex.context + " ";
  s += ex.question + "\nOptions:\n";
  for (const auto& [l, text] : ex.options) s += l + ") " + text + "\n";
  s += kQaInstruction;
  if (mode == PromptMode::kge) {
    s += "\nGraph:";
    for (std::size_t i = 0; i < n; ++i) s += " " + std::string(lm::kKgePlaceholder);
  } else if (mode == PromptMode::triples_text) {
    s += "\nGraph: " + render_triples(triples);
  }
  return s + std::string(kQaTail);
}

std::string format_qa_training_text(const QAExample& ex, std::size_t n, PromptMode mode,
                                    std::span<const VerbalTriple> triples) {
  return format_qa_prompt(ex, n, mode, triples) + " " + ex.answer_key;
}

std::string grounding_text(const QAExample& ex, bool with_options) {
  std::string s;
  if (ex.context) s += *ex.context + "\n";
  s += ex.question;
  if (with_options) {
    for (const auto& [l, text] : ex.options) s += "\n" + text;
  }
  return s;
}

std::vector<VerbalTriple> build_triples_context(const kg::Graph& g, std::span<const std::string> cuis,
                                                std::size_t max_entities, std::size_t neighbors_per_entity,
                                                std::uint64_t seed) {
  std::vector<VerbalTriple> out;
  const std::size_t used = std::min(max_entities, cuis.size());
  for (std::size_t i = 0; i < used; ++i) {
    const auto& subject = g.entity(g.id_of(cuis[i]));
    for (const auto& nb : kg::sample_neighbors(g, cuis[i], neighbors_per_entity, num::mix_seed(seed, i))) {
      out.push_back({subject.label, kg::relation_phrase(g.relation_name(nb.relation)), g.entity(nb.entity).label});
    }
  }
  return out;
}

void write_qa_jsonl(const std::filesystem::path& path, std::span<const QAExample> examples) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& ex : examples) {
    nlohmann::ordered_json opts = nlohmann::ordered_json::object();
    for (const auto& [l, text] : ex.options) opts[l] = text;
    nlohmann::ordered_json j;
    j["id"] = ex.id;
    j["context"] = ex.context ? nlohmann::ordered_json(*ex.context) : nlohmann::ordered_json(nullptr);
    j["question"] = ex.question;
    j["options"] = opts;
    j["answer"] = ex.answer_key;
    out << j.dump() << '\n';
  }
}

std::vector<QAExample> read_qa_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<QAExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    try {
      const auto j = nlohmann::ordered_json::parse(line);
      QAExample ex;
      ex.id = j.contains("id") ? (j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump())
                               : "line" + std::to_string(lineno);
      if (j.contains("context") && j["context"].is_string()) ex.context = j["context"].get<std::string>();
      ex.question = j.at("question").get<std::string>();
      if (j.contains("options")) {
        for (const auto& [k, v] : j["options"].items()) ex.options.emplace_back(k, v.get<std::string>());
      } else {
        for (const char* key : {"opa", "opb", "opc", "opd", "ope"}) {
          if (j.contains(key)) ex.options.emplace_back(letter(ex.options.size()), j[key].get<std::string>());
        }
      }
      if (j.contains("answer_idx")) {
        ex.answer_key = j["answer_idx"].get<std::string>();
      } else if (j.contains("cop")) {
        const int cop = j["cop"].get<int>();
        if (cop < 1) throw Error("cop must be 1-based");
        ex.answer_key = letter(static_cast<std::size_t>(cop - 1));
      } else {
        ex.answer_key = j.at("answer").get<std::string>();
      }
      ex.validate();
      out.push_back(std::move(ex));
    } catch (const nlohmann::json::exception& e) {
      throw Error(where + ": " + e.what());
    } catch (const Error& e) {
      throw Error(where + ": " + e.what());
    }
  }
  return out;
}

std::vector<QAExample> make_synthetic_qa(const kg::SyntheticKG& skg) {
  const auto& g = skg.graph;
  std::vector<QAExample> out;
  for (const auto& f : skg.facts) {
    const auto a = static_cast<std::size_t>(
        std::find(skg.attribute_relations.begin(), skg.attribute_relations.end(), f.relation) -
        skg.attribute_relations.begin());
    if (a >= skg.attribute_relations.size()) throw Error("make_synthetic_qa: fact with non-attribute relation");
    const auto& concept_entity = g.entity(f.concept_id);
    QAExample ex;
    ex.id = "q-" + concept_entity.cui;
    ex.question = "What is the " + kg::relation_phrase(g.relation_name(f.relation)) + " of " + concept_entity.label + "?";
    const auto& values = skg.attribute_values[a];
    for (std::size_t i = 0; i < values.size(); ++i) {
      ex.options.emplace_back(letter(i), g.entity(values[i]).label);
      if (values[i] == f.value) ex.answer_key = letter(i);
    }
    ex.validate();
    out.push_back(std::move(ex));
  }
  return out;
}

QASplit split_qa(std::vector<QAExample> examples, double train_fraction, double valid_fraction, std::uint64_t seed) {
  if (train_fraction < 0 || valid_fraction < 0 || train_fraction + valid_fraction > 1.0) {
    throw Error("split_qa: fractions must be non-negative and sum to at most 1");
  }
  num::Rng rng(num::mix_seed(seed, num::hash_bytes("split_qa")));
  rng.shuffle(examples);
  const auto n = examples.size();
  const auto n_train = static_cast<std::size_t>(train_fraction * static_cast<double>(n) + 0.5);
  const auto n_valid = std::min(n - n_train, static_cast<std::size_t>(valid_fraction * static_cast<double>(n) + 0.5));
  QASplit s;
  s.train.assign(examples.begin(), examples.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.valid.assign(examples.begin() + static_cast<std::ptrdiff_t>(n_train),
                 examples.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
  s.test.assign(examples.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid), examples.end());
  return s;
}

std::vector<std::pair<std::string, std::string>> make_pretraining_corpus(const kg::Graph& g, std::size_t n_examples,
                                                                         std::uint64_t seed) {
  if (g.num_entities() < 6 || g.num_relations() < 2) throw Error("make_pretraining_corpus: graph too small");
  num::Rng rng(num::mix_seed(seed, num::hash_bytes("pretrain")));
  std::vector<std::string> aliases;
  for (const auto& e : g.entities()) {
    for (const auto& a : e.aliases) aliases.push_back(a);
  }
  std::vector<std::string> phrases;
  for (const auto& r : g.relations()) phrases.push_back(kg::relation_phrase(r));
  auto label_of = [&](std::size_t i) { return g.entity(static_cast<kg::EntityId>(i)).label; };

  std::vector<std::pair<std::string, std::string>> out;
  std::size_t next_alias = 0;
  for (std::size_t i = 0; i < n_examples; ++i) {
    const auto kind = i % 5;
    if (kind == 0 || kind == 1) {
      const std::string w = aliases[next_alias++ % aliases.size()];
      if (kind == 0) {
        out.emplace_back(replace_once(std::string(kPhase1Template), lm::kKgePlaceholder, w), w);
      } else {
        const std::string w2 = aliases[rng.uniform_index(aliases.size())];
        out.emplace_back("[INST] Repeat: " + w + " " + w2 + " [/INST]", w + " " + w2);
      }
      continue;
    }
    // QA whose answer is given in the prompt.
    const auto ents = rng.sample_indices(g.num_entities(), 6);
    const auto rels = rng.sample_indices(phrases.size(), 2);
    const std::string subject = label_of(ents[0]);
    QAExample ex;
    ex.id = "pre" + std::to_string(i);
    ex.question = "What is the " + phrases[rels[0]] + " of " + subject + "?";
    for (std::size_t k = 0; k < 4; ++k) ex.options.emplace_back(letter(k), label_of(ents[1 + k]));
    const auto gold = rng.uniform_index(4);
    ex.answer_key = letter(gold);
    const std::string value = ex.options[gold].second;
    std::string prompt;
    if (kind == 2) {
      ex.context = "The " + phrases[rels[0]] + " of " + subject + " is " + value + ".";
      prompt = format_qa_prompt(ex, 0, PromptMode::none);
    } else {
      std::vector<VerbalTriple> tr{{subject, phrases[rels[0]], value}, {subject, phrases[rels[1]], label_of(ents[5])}};
      if (rng.uniform() < 0.5) std::swap(tr[0], tr[1]);
      prompt = format_qa_prompt(ex, 0, PromptMode::triples_text, tr);
    }
    out.emplace_back(std::move(prompt), ex.answer_key);
  }
  return out;
}

std::vector<std::string> vocabulary_corpus(const kg::Graph& g) {
  QAExample probe{"v", std::string("context"), "question", {{"A", "x"}, {"B", "y"}, {"C", "z"}, {"D", "w"}}, "A"};
  std::vector<std::string> corpus{std::string(kPhase1Template), std::string(kAugmentedTemplate),
                                  format_qa_training_text(probe, 1, PromptMode::kge),
                                  format_qa_prompt(probe, 0, PromptMode::triples_text,
                                                   std::vector<VerbalTriple>{{"a", "b", "c"}, {"d", "e", "f"}}),
                                  "[INST] Repeat: [/INST] The of is . E"};
  for (const auto& e : g.entities()) {
    for (const auto& a : e.aliases) corpus.push_back(a);
  }
  for (const auto& r : g.relations()) corpus.push_back(kg::relation_phrase(r) + " " + r);
  return corpus;
}

}  // namespace kgelm::pipe
