// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0

#include "kgelm/pipeline/training.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <unordered_map>

#include "kgelm/error.hpp"
#include "kgelm/numkit/optim.hpp"
#include "kgelm/numkit/rng.hpp"

namespace kgelm::pipe {

using num::Tensor;
using num::Var;

MetricsLog::MetricsLog(const std::filesystem::path& path) {
  out_.emplace(path);
  if (!*out_) throw Error("cannot write " + path.string());
}

void MetricsLog::log(std::string_view metric, double value, std::uint64_t seed, std::uint64_t step) {
  nlohmann::ordered_json j;
  j["metric"] = metric;
  j["value"] = value;
  j["seed"] = seed;
  j["step"] = step;
  if (out_) *out_ << j.dump() << '\n' << std::flush;
  records_.push_back(std::move(j));
}

Sequence encode_sequence(const lm::Vocab& vocab, std::string_view prompt, std::string_view target) {
  Sequence s;
  s.ids.push_back(lm::kBos);
  for (auto id : lm::tokenize(vocab, prompt)) s.ids.push_back(id);
  const std::size_t first_target = s.ids.size();
  for (auto id : lm::tokenize(vocab, target)) s.ids.push_back(id);
  s.ids.push_back(lm::kEos);
  for (std::size_t i = first_target; i < s.ids.size(); ++i) {
    s.loss_rows.push_back(i - 1);
    s.targets.push_back(s.ids[i]);
  }
  return s;
}

Var sequence_loss(const lm::DecoderLM& lm, const Sequence& seq, const Var& kges, bool* first_correct) {
  const Var logits = lm.forward(lm.embed_and_inject(seq.inputs(), kges), seq.loss_rows);
  if (first_correct) {
    const auto row = logits.value().row(0);
    std::size_t best = 0;
    for (std::size_t v = 1; v < row.size(); ++v) {
      if (row[v] > row[best]) best = v;
    }
    *first_correct = best == seq.targets.front();
  }
  const std::vector<unsigned char> mask(seq.targets.size(), 1);
  return lm::next_token_ce(logits, seq.targets, mask);
}

namespace {

// Returns the loss to backpropagate for one micro-batch. inv_batch is one over
// the number of examples in the whole optimizer step.
using BatchFn = std::function<Var(std::span<const std::size_t> idx, double inv_batch, std::size_t& correct)>;

TrainCurve run_loop(num::ParamList params, std::size_t n, std::size_t epochs, double lr, const RunConfig& cfg,
                    std::uint64_t seed, const std::string& tag, MetricsLog* log, const BatchFn& fn) {
  TrainCurve curve;
  if (n == 0) throw Error(tag + ": empty training set");
  const std::size_t per_step = cfg.micro_batch * cfg.grad_accum;
  const std::size_t steps_per_epoch = (n + per_step - 1) / per_step;
  const std::size_t total = std::max<std::size_t>(1, epochs * steps_per_epoch);
  const num::ScheduleConfig sched{lr, total + 1, cfg.warmup_ratio};
  num::AdamState state;
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    num::Rng rng(num::mix_seed(seed, num::hash_bytes(tag), epoch));
    rng.shuffle(order);
    double epoch_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const std::size_t begin = s * per_step;
      const std::size_t end = std::min(n, begin + per_step);
      const double inv_batch = 1.0 / static_cast<double>(end - begin);
      num::zero_grads(params);
      double step_loss = 0.0;
      for (std::size_t mb = begin; mb < end; mb += cfg.micro_batch) {
        const std::span<const std::size_t> idx(order.data() + mb, std::min(end, mb + cfg.micro_batch) - mb);
        const Var loss = fn(idx, inv_batch, correct);
        if (!std::isfinite(loss.item())) {
          throw Error(tag + ": non-finite loss at step " + std::to_string(step));
        }
        num::backward(loss);
        step_loss += loss.item();
      }
      num::adam_step(params, state, num::cosine_lr(sched, step + 1));
      curve.step_loss.push_back(step_loss);
      if (log) log->log(tag + ".loss", step_loss, seed, step);
      epoch_sum += step_loss * static_cast<double>(end - begin);
      ++step;
    }
    curve.epoch_loss.push_back(epoch_sum / static_cast<double>(n));
    curve.epoch_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(n));
    if (log) log->log(tag + ".epoch_loss", curve.epoch_loss.back(), seed, epoch);
  }
  return curve;
}

}  // namespace

TrainCurve pretrain_base_lm(lm::DecoderLM& lm, const lm::Vocab& vocab,
                            std::span<const std::pair<std::string, std::string>> corpus, const RunConfig& cfg,
                            MetricsLog* log) {
  std::vector<Sequence> seqs;
  for (const auto& [p, t] : corpus) seqs.push_back(encode_sequence(vocab, p, t));
  auto params = lm.params();
  return run_loop(params, seqs.size(), cfg.pretrain_epochs, cfg.pretrain_lr, cfg, cfg.seed, "pretrain", log,
                  [&](std::span<const std::size_t> idx, double inv_batch, std::size_t&) {
                    Var total;
                    for (auto i : idx) {
                      const Var l = num::scale(sequence_loss(lm, seqs[i], Var()), inv_batch);
                      total = total.defined() ? num::add(total, l) : l;
                    }
                    return total;
                  });
}

Tensor label_embeddings(const lm::DecoderLM& lm, const lm::Vocab& vocab, std::span<const std::string> labels) {
  num::NoGradGuard no_grad;
  Tensor out({labels.size(), lm.config().d_l}, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto ids = lm::tokenize(vocab, labels[i]);
    if (ids.empty()) throw Error("label '" + labels[i] + "' has no tokens");
    const Tensor rows = lm.embed(ids).value();
    for (std::size_t r = 0; r < rows.rows(); ++r) {
      for (std::size_t c = 0; c < rows.cols(); ++c) out.at(i, c) += rows.at(r, c) / static_cast<double>(rows.rows());
    }
  }
  return out;
}

TrainCurve train_phase1(lm::DecoderLM& lm, map::MappingNetwork& mapper, const enc::NodeEmbeddingTable& kges,
                        const lm::Vocab& vocab, std::span<const InstructionRecord> records, const RunConfig& cfg,
                        MetricsLog* log) {
  if (mapper.frozen()) throw Error("train_phase1: the mapping network is frozen");
  if (kges.dim() != mapper.config().d_g) throw Error("train_phase1: KGE dim does not match the mapper");
  if (lm.config().d_l != mapper.config().d_l) throw Error("train_phase1: mapper d_l does not match the LM");

  struct Prepared {
    Sequence seq;
    std::vector<std::size_t> rows;  // rows of the KGE matrix
  };
  std::vector<Prepared> prep;
  std::vector<std::string> labels;
  std::vector<std::string> cuis;
  std::unordered_map<std::string, std::size_t> row_of;
  for (const auto& rec : records) {
    Prepared p{encode_sequence(vocab, rec.prompt, rec.target), {}};
    const auto slots = static_cast<std::size_t>(std::count(p.seq.ids.begin(), p.seq.ids.end(), lm::kKge));
    if (slots != rec.cuis.size()) {
      throw Error("train_phase1: record for " + (rec.cuis.empty() ? std::string("?") : rec.cuis.front()) + " has " +
                  std::to_string(slots) + " placeholders but " + std::to_string(rec.cuis.size()) + " cuis");
    }
    for (const auto& c : rec.cuis) {
      auto [it, fresh] = row_of.emplace(c, cuis.size());
      if (fresh) cuis.push_back(c);
      p.rows.push_back(it->second);
    }
    prep.push_back(std::move(p));
  }
  Tensor x_all({std::max<std::size_t>(1, cuis.size()), kges.dim()}, 0.0);
  std::unordered_map<std::string, std::string> label_of;
  for (const auto& rec : records) {
    if (rec.cuis.size() == 1) label_of.emplace(rec.cuis.front(), rec.target);
  }
  for (std::size_t i = 0; i < cuis.size(); ++i) {
    const auto v = kges.vector(cuis[i]);
    std::copy(v.begin(), v.end(), x_all.row(i).begin());
    auto it = label_of.find(cuis[i]);
    if (it == label_of.end()) throw Error("train_phase1: no single-entity record gives a label for " + cuis[i]);
    labels.push_back(it->second);
  }
  const Tensor y_all = label_embeddings(lm, vocab, labels);
  const Var x_const(x_all);
  const Var y_const(y_all);

  lm.attach_lora(cfg.lora_rank, cfg.lora_scaling, cfg.seed);
  lm.set_frozen("embed", true);
  const auto embed_sum = [&] {
    num::ParamList e;
    for (auto& p : lm.params()) {
      if (p.name.rfind("embed.", 0) == 0) e.push_back(p);
    }
    return num::checksum(e);
  };
  const auto embed_before = embed_sum();

  auto params = lm.adapter_params();
  for (auto& p : mapper.params()) params.push_back(p);
  std::uint64_t micro_step = 0;
  auto curve = run_loop(
      params, prep.size(), cfg.phase1_epochs, cfg.phase1_lr, cfg, cfg.seed, "phase1", log,
      [&](std::span<const std::size_t> idx, double inv_batch, std::size_t&) {
        std::vector<std::size_t> batch_rows;
        for (auto i : idx) {
          for (auto r : prep[i].rows) batch_rows.push_back(r);
        }
        const Var x = num::select_rows(x_const, batch_rows);
        const Var mapped = mapper.forward_map(x);
        const double share = inv_batch * static_cast<double>(idx.size());
        Var total;
        double l_c = 0.0;
        if (batch_rows.size() >= 2 && cfg.alpha > 0.0) {
          const Var lc = map::nt_xent_loss(mapped, num::select_rows(y_const, batch_rows), cfg.tau,
                                           cfg.ntxent_denominator);
          l_c = lc.item();
          total = num::scale(lc, cfg.alpha * share);
        }
        double l_bt = 0.0;
        if (cfg.beta > 0.0) {
          const Var lbt = map::back_translation_loss(mapper, x);
          l_bt = lbt.item();
          total = total.defined() ? num::add(total, num::scale(lbt, cfg.beta)) : num::scale(lbt, cfg.beta);
        }
        double l_ce = 0.0;
        std::size_t offset = 0;
        for (auto i : idx) {
          std::vector<std::size_t> mine(prep[i].rows.size());
          std::iota(mine.begin(), mine.end(), offset);
          offset += mine.size();
          const Var ce = sequence_loss(lm, prep[i].seq, num::select_rows(mapped, mine));
          l_ce += ce.item() / static_cast<double>(idx.size());
          const Var term = num::scale(ce, inv_batch);
          total = total.defined() ? num::add(total, term) : term;
        }
        if (log) {
          log->log("phase1.l_c", l_c, cfg.seed, micro_step);
          log->log("phase1.l_bt", l_bt, cfg.seed, micro_step);
          log->log("phase1.l_ce", l_ce, cfg.seed, micro_step);
        }
        ++micro_step;
        return total;
      });
  lm.merge_lora();
  if (embed_sum() != embed_before) throw Error("train_phase1: embedding layer changed despite being frozen");
  return curve;
}

enc::NodeEmbeddingTable map_table(const map::MappingNetwork& mapper, const enc::NodeEmbeddingTable& table) {
  num::NoGradGuard no_grad;
  const Var mapped = mapper.forward_map(Var(table.matrix()));
  return enc::NodeEmbeddingTable(table.cuis(), mapped.value());
}

QAContext::QAContext(const kg::Graph* graph, const ground::AliasIndex* index, enc::NodeEmbeddingTable mapped)
    : graph_(graph), index_(index), mapped_(std::move(mapped)) {}

QAContext::Prepared QAContext::prepare(const QAExample& ex, const RunConfig& cfg) const {
  Prepared p;
  p.grounding.example_id = ex.id;
  const std::size_t n = cfg.effective_n();
  const std::uint64_t ex_seed = num::mix_seed(cfg.seed, num::hash_bytes(ex.id));
  if (cfg.mode != PromptMode::none) {
    if (!index_ || !graph_) throw Error("QA example " + ex.id + ": grounding requires a graph and alias index");
    p.grounding.result = ground::link_entities(*index_, grounding_text(ex, cfg.ground_options));
  }
  const auto& cuis = p.grounding.result.unique_cuis;
  std::vector<VerbalTriple> triples;
  if (cfg.mode == PromptMode::triples_text) {
    triples = build_triples_context(*graph_, cuis, cfg.triples_max_entities, cfg.triples_neighbors, ex_seed);
    p.grounding.n_selected = std::min(cuis.size(), cfg.triples_max_entities);
  } else if (cfg.mode == PromptMode::kge && n > 0) {
    auto sel = ground::select_kges(mapped_, cuis, n, ex_seed);
    p.grounding.n_selected = sel.selected.size();
    p.grounding.n_padded = sel.n_padded;
    p.kges = Var(std::move(sel.rows));
  }
  p.prompt = format_qa_prompt(ex, n, cfg.mode, triples);
  return p;
}

TrainCurve finetune(lm::DecoderLM& lm, const map::MappingNetwork& mapper, const lm::Vocab& vocab,
                    std::span<const QAExample> train, const QAContext& ctx, const RunConfig& cfg, std::uint64_t seed,
                    MetricsLog* log) {
  if (!mapper.frozen()) throw Error("finetune: the mapping network must be frozen");
  struct Prepared {
    Sequence seq;
    Var kges;
  };
  std::vector<Prepared> prep;
  for (const auto& ex : train) {
    auto p = ctx.prepare(ex, cfg);
    Prepared q{encode_sequence(vocab, p.prompt, ex.answer_key), p.kges};
    const auto slots = static_cast<std::size_t>(std::count(q.seq.ids.begin(), q.seq.ids.end(), lm::kKge));
    const std::size_t rows = q.kges.defined() ? q.kges.value().rows() : 0;
    if (slots != rows) {
      throw Error("finetune: example " + ex.id + " has " + std::to_string(slots) + " placeholders but " +
                  std::to_string(rows) + " KGE rows");
    }
    if (q.seq.ids.size() - 1 > lm.config().max_seq_len) {
      throw Error("finetune: example " + ex.id + " needs " + std::to_string(q.seq.ids.size() - 1) +
                  " positions, max_seq_len is " + std::to_string(lm.config().max_seq_len));
    }
    prep.push_back(std::move(q));
  }
  lm.attach_lora(cfg.lora_rank, cfg.lora_scaling, seed);
  lm.set_frozen("embed", true);
  auto params = lm.adapter_params();
  auto curve = run_loop(params, prep.size(), cfg.finetune_epochs, cfg.finetune_lr, cfg, seed, "finetune", log,
                        [&](std::span<const std::size_t> idx, double inv_batch, std::size_t& correct) {
                          Var total;
                          for (auto i : idx) {
                            bool ok = false;
                            const Var l = num::scale(sequence_loss(lm, prep[i].seq, prep[i].kges, &ok), inv_batch);
                            correct += ok ? 1 : 0;
                            total = total.defined() ? num::add(total, l) : l;
                          }
                          return total;
                        });
  if (log) {
    for (std::size_t e = 0; e < curve.epoch_accuracy.size(); ++e) {
      log->log("finetune.train_acc", curve.epoch_accuracy[e], seed, e);
    }
  }
  lm.merge_lora();
  return curve;
}

}  // namespace kgelm::pipe
