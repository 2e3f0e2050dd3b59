// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0

#include "kgelm/encoders/rdf2vec.hpp"

#include <algorithm>
#include <cmath>

#include "kgelm/error.hpp"
#include "kgelm/numkit/rng.hpp"

namespace kgelm::enc {

std::vector<Walk> generate_walks(const kg::Graph& g, std::size_t walk_length, std::size_t walks_per_node,
                                 std::uint64_t seed) {
  const std::size_t n = g.num_entities();
  std::vector<Walk> walks;
  walks.reserve(n * walks_per_node);
  for (std::size_t v = 0; v < n; ++v) {
    num::Rng rng(num::mix_seed(seed, v));
    for (std::size_t w = 0; w < walks_per_node; ++w) {
      Walk walk{v};
      auto cur = static_cast<kg::EntityId>(v);
      for (std::size_t step = 0; step < walk_length; ++step) {
        const auto outs = g.out(cur);
        if (outs.empty()) break;
        const auto& nb = outs[rng.uniform_index(outs.size())];
        walk.push_back(n + nb.relation);
        walk.push_back(nb.entity);
        cur = nb.entity;
      }
      walks.push_back(std::move(walk));
    }
  }
  return walks;
}

NodeEmbeddingTable rdf2vec_embed(const kg::Graph& g, const EncoderConfig& cfg) {
  cfg.validate();
  if (cfg.kind != EncoderKind::rdf2vec) throw Error("rdf2vec_embed: config kind is not rdf2vec");
  const std::size_t n = g.num_entities(), vocab = n + g.num_relations(), d = cfg.d_g;
  for (std::size_t v = 0; v < n && !cfg.allow_isolated; ++v) {
    if (g.degree(static_cast<kg::EntityId>(v)) == 0) {
      throw Error("rdf2vec_embed: entity " + g.entity(static_cast<kg::EntityId>(v)).cui + " has no edges");
    }
  }
  auto walks = generate_walks(g, cfg.walk_length, cfg.walks_per_node, cfg.seed);

  // Negative-sampling distribution: unigram counts raised to 3/4.
  std::vector<double> cdf(vocab, 0.0);
  for (const auto& w : walks) {
    for (auto tok : w) cdf[tok] += 1.0;
  }
  double acc = 0.0;
  for (auto& c : cdf) {
    acc += std::pow(c, 0.75);
    c = acc;
  }
  num::Rng rng(num::mix_seed(cfg.seed, num::hash_bytes("rdf2vec.sgns")));
  auto draw_negative = [&] {
    const double u = rng.uniform() * acc;
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), vocab - 1);
  };

  num::Tensor in({vocab, d}), out({vocab, d}, 0.0);
  for (auto& x : in.data()) x = (rng.uniform() - 0.5) / static_cast<double>(d);

  std::size_t total_tokens = 0;
  for (const auto& w : walks) total_tokens += w.size();
  const double budget = static_cast<double>(total_tokens * std::max<std::size_t>(cfg.epochs, 1));
  double processed = 0.0;
  std::vector<double> grad_in(d);

  auto train_pair = [&](std::size_t center, std::size_t context, double lr) {
    auto vin = in.row(center);
    std::fill(grad_in.begin(), grad_in.end(), 0.0);
    for (std::size_t j = 0; j <= cfg.negatives_per_positive; ++j) {
      const std::size_t target = j == 0 ? context : draw_negative();
      if (j > 0 && target == context) continue;
      const double label = j == 0 ? 1.0 : 0.0;
      auto vout = out.row(target);
      double f = 0.0;
      for (std::size_t k = 0; k < d; ++k) f += vin[k] * vout[k];
      const double gcoef = (label - 1.0 / (1.0 + std::exp(-f))) * lr;
      for (std::size_t k = 0; k < d; ++k) {
        grad_in[k] += gcoef * vout[k];
        vout[k] += gcoef * vin[k];
      }
    }
    for (std::size_t k = 0; k < d; ++k) vin[k] += grad_in[k];
  };

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(walks);
    for (const auto& w : walks) {
      const double lr = cfg.lr * std::max(1e-4, 1.0 - processed / budget);
      for (std::size_t i = 0; i < w.size(); ++i) {
        const std::size_t lo = i >= cfg.window ? i - cfg.window : 0;
        const std::size_t hi = std::min(w.size() - 1, i + cfg.window);
        for (std::size_t j = lo; j <= hi; ++j) {
          if (j != i) train_pair(w[i], w[j], lr);
        }
      }
      processed += static_cast<double>(w.size());
    }
  }

  num::Tensor rows({n, d});
  std::copy(in.data().begin(), in.data().begin() + static_cast<std::ptrdiff_t>(n * d), rows.data().begin());
  if (!rows.all_finite()) throw Error("RDF2Vec training diverged (non-finite embedding)");
  return table_from_graph_rows(g, std::move(rows));
}

}  // namespace kgelm::enc
