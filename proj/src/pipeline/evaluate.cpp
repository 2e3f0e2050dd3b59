// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0

#include "kgelm/pipeline/evaluate.hpp"

#include <cctype>
#include <cmath>
#include <regex>

#include "kgelm/error.hpp"

namespace kgelm::pipe {

std::optional<std::string> parse_answer(std::string_view completion, const QAExample* ex) {
  static const std::regex grammar(R"(^\s*([A-Za-z])(\)[\s\S]*|\s*)$)");
  std::string text(completion);
  if (const auto pos = text.find("Answer:"); pos != std::string::npos) text = text.substr(pos + 7);
  std::smatch m;
  if (!std::regex_match(text, m, grammar)) return std::nullopt;
  std::string letter(1, static_cast<char>(std::toupper(static_cast<unsigned char>(m[1].str()[0]))));
  if (ex && !ex->option(letter)) return std::nullopt;
  return letter;
}

double EvalResult::accuracy() const { return n ? static_cast<double>(correct) / static_cast<double>(n) : 0.0; }
double EvalResult::error_rate() const { return n ? static_cast<double>(incorrect) / static_cast<double>(n) : 0.0; }
double EvalResult::na_rate() const { return n ? static_cast<double>(na) / static_cast<double>(n) : 0.0; }

EvalResult evaluate_completions(std::span<const QAExample> examples, const Completer& complete, std::uint64_t seed) {
  EvalResult r;
  r.seed = seed;
  for (const auto& ex : examples) {
    std::string c = complete(ex);
    const auto letter = parse_answer(c, &ex);
    if (!letter) {
      ++r.na;
    } else if (*letter == ex.answer_key) {
      ++r.correct;
    } else {
      ++r.incorrect;
    }
    r.completions.push_back(std::move(c));
    ++r.n;
  }
  return r;
}

EvalResult evaluate(const lm::DecoderLM& lm, const lm::Vocab& vocab, std::span<const QAExample> examples,
                    const QAContext& ctx, const RunConfig& cfg, std::uint64_t seed) {
  return evaluate_completions(
      examples,
      [&](const QAExample& ex) {
        const auto p = ctx.prepare(ex, cfg);
        std::vector<lm::TokenId> ids{lm::kBos};
        for (auto id : lm::tokenize(vocab, p.prompt)) ids.push_back(id);
        return lm::greedy_decode_text(lm, vocab, ids, p.kges, cfg.eval_max_new);
      },
      seed);
}

double EvalReport::mean_accuracy() const {
  if (per_seed.empty()) return 0.0;
  double s = 0;
  for (const auto& r : per_seed) s += r.accuracy();
  return s / static_cast<double>(per_seed.size());
}

double EvalReport::std_accuracy() const {
  if (per_seed.size() < 2) return 0.0;
  const double mean = mean_accuracy();
  double ss = 0;
  for (const auto& r : per_seed) ss += (r.accuracy() - mean) * (r.accuracy() - mean);
  return std::sqrt(ss / static_cast<double>(per_seed.size() - 1));
}

double EvalReport::mean_na_rate() const {
  if (per_seed.empty()) return 0.0;
  double s = 0;
  for (const auto& r : per_seed) s += r.na_rate();
  return s / static_cast<double>(per_seed.size());
}

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["mode"] = mode_name(mode);
  j["n_kge"] = n_kge;
  j["accuracy_mean"] = mean_accuracy();
  j["accuracy_std"] = std_accuracy();
  j["na_rate"] = mean_na_rate();
  auto seeds = nlohmann::ordered_json::array();
  for (const auto& r : per_seed) {
    nlohmann::ordered_json s;
    s["seed"] = r.seed;
    s["n"] = r.n;
    s["correct"] = r.correct;
    s["incorrect"] = r.incorrect;
    s["na"] = r.na;
    s["accuracy"] = r.accuracy();
    s["na_rate"] = r.na_rate();
    seeds.push_back(std::move(s));
  }
  j["per_seed"] = std::move(seeds);
  return j;
}

}  // namespace kgelm::pipe
