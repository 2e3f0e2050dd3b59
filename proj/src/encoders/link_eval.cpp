// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0

#include "kgelm/encoders/link_eval.hpp"

#include <cmath>
#include <set>

#include "kgelm/error.hpp"
#include "kgelm/numkit/autograd.hpp"
#include "kgelm/numkit/optim.hpp"
#include "kgelm/numkit/rng.hpp"

namespace kgelm::enc {

namespace {

num::Tensor endpoint_features(const num::Tensor& emb, const kg::Graph& g, std::span<const std::size_t> edges) {
  const std::size_t d = emb.cols();
  num::Tensor x({edges.size(), 2 * d});
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const auto& t = g.edges().at(edges[i]);
    auto row = x.row(i);
    std::copy(emb.row(t.subject).begin(), emb.row(t.subject).end(), row.begin());
    std::copy(emb.row(t.object).begin(), emb.row(t.object).end(), row.begin() + static_cast<std::ptrdiff_t>(d));
  }
  return x;
}

}  // namespace

double eval_edge_classification(const NodeEmbeddingTable& table, const kg::Graph& g,
                                std::span<const std::size_t> train_edges, std::span<const std::size_t> test_edges,
                                std::uint64_t seed, const EdgeClassifierConfig& cfg) {
  if (train_edges.empty() || test_edges.empty()) throw Error("eval_edge_classification: empty edge list");
  const std::set<std::size_t> train_set(train_edges.begin(), train_edges.end());
  std::set<kg::RelationId> train_rels;
  for (auto i : train_edges) train_rels.insert(g.edges().at(i).predicate);
  for (auto i : test_edges) {
    if (train_set.count(i)) throw Error("eval_edge_classification: edge " + std::to_string(i) + " is in both splits");
    const auto r = g.edges().at(i).predicate;
    if (!train_rels.count(r)) {
      throw Error("eval_edge_classification: relation " + g.relation_name(r) + " has no training edges");
    }
  }

  const num::Tensor emb = table.aligned_to(g);
  num::Tensor xtr = endpoint_features(emb, g, train_edges);
  num::Tensor xte = endpoint_features(emb, g, test_edges);
  // Standardize columns with train statistics.
  const std::size_t f = xtr.cols();
  for (std::size_t c = 0; c < f; ++c) {
    double mu = 0.0, var = 0.0;
    for (std::size_t r = 0; r < xtr.rows(); ++r) mu += xtr.at(r, c);
    mu /= static_cast<double>(xtr.rows());
    for (std::size_t r = 0; r < xtr.rows(); ++r) var += (xtr.at(r, c) - mu) * (xtr.at(r, c) - mu);
    const double sd = std::sqrt(var / static_cast<double>(xtr.rows())) + 1e-8;
    for (std::size_t r = 0; r < xtr.rows(); ++r) xtr.at(r, c) = (xtr.at(r, c) - mu) / sd;
    for (std::size_t r = 0; r < xte.rows(); ++r) xte.at(r, c) = (xte.at(r, c) - mu) / sd;
  }

  const std::size_t n_rel = g.num_relations();
  std::vector<std::size_t> ytr;
  for (auto i : train_edges) ytr.push_back(g.edges()[i].predicate);
  const std::vector<unsigned char> mask(ytr.size(), 1);

  num::Rng rng(num::mix_seed(seed, num::hash_bytes("edge_classifier")));
  num::Tensor w0({n_rel, f});
  for (auto& x : w0.data()) x = 0.01 * rng.normal();
  num::ParamList params{{"clf.W", num::Var(std::move(w0), true)}, {"clf.b", num::Var(num::Tensor({n_rel}, 0.0), true)}};
  const num::Var x = num::constant(std::move(xtr));
  num::AdamState adam;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const num::Var logits = num::add_bias(num::matmul_nt(x, params[0].var), params[1].var);
    num::Var loss = num::masked_cross_entropy(logits, ytr, mask);
    if (cfg.weight_decay > 0.0) {
      loss = num::add(loss, num::scale(num::sum(num::mul(params[0].var, params[0].var)), cfg.weight_decay));
    }
    num::zero_grads(params);
    num::backward(loss);
    num::adam_step(params, adam, cfg.lr);
  }

  std::size_t correct = 0;
  const auto& w = params[0].var.value();
  const auto& b = params[1].var.value();
  for (std::size_t i = 0; i < test_edges.size(); ++i) {
    std::size_t best = 0;
    double best_v = -INFINITY;
    for (std::size_t r = 0; r < n_rel; ++r) {
      double v = b[r];
      for (std::size_t c = 0; c < f; ++c) v += w.at(r, c) * xte.at(i, c);
      if (v > best_v) {
        best_v = v;
        best = r;
      }
    }
    if (best == g.edges()[test_edges[i]].predicate) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test_edges.size());
}

}  // namespace kgelm::enc
