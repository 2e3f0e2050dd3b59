// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0

#include "kgelm/mapper/mapper.hpp"

#include <cmath>

#include "kgelm/error.hpp"
#include "kgelm/numkit/checkpoint.hpp"
#include "kgelm/numkit/rng.hpp"

namespace kgelm::map {

using num::Var;

std::string_view denominator_name(NtXentDenominator d) {
  return d == NtXentDenominator::targets ? "targets" : "mixed";
}

NtXentDenominator parse_denominator(std::string_view name) {
  if (name == "targets") return NtXentDenominator::targets;
  if (name == "mixed") return NtXentDenominator::mixed;
  throw Error("unknown ntxent_denominator '" + std::string(name) + "' (expected targets or mixed)");
}

void MapperConfig::validate() const {
  if (d_g == 0 || d_h == 0 || n_hidden == 0 || d_l == 0) throw Error("mapper config: dims must be positive");
  if (!(tau > 0.0)) throw Error("mapper config: tau must be > 0");
}

Mlp::Mlp(const std::vector<std::size_t>& dims, std::uint64_t seed, const std::string& prefix) : prefix_(prefix) {
  if (dims.size() < 2) throw Error("Mlp: need at least input and output dims");
  num::Rng rng(num::mix_seed(seed, num::hash_bytes(prefix)));
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    num::Tensor w({dims[l + 1], dims[l]});
    const double std = std::sqrt(2.0 / static_cast<double>(dims[l]));
    for (auto& x : w.data()) x = std * rng.normal();
    weights_.emplace_back(std::move(w), true, prefix + ".W" + std::to_string(l));
    biases_.emplace_back(num::Tensor({dims[l + 1]}, 0.0), true, prefix + ".b" + std::to_string(l));
  }
}

Var Mlp::forward(const Var& x) const {
  if (x.value().rank() != 2 || x.value().cols() != in_dim()) {
    throw Error(prefix_ + ": expected input [B, " + std::to_string(in_dim()) + "], got " + num::shape_str(x.shape()));
  }
  Var h = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    h = num::add_bias(num::matmul_nt(h, weights_[l]), biases_[l]);
    if (l + 1 < weights_.size()) h = num::relu(h);
  }
  return h;
}

std::size_t Mlp::in_dim() const { return weights_.front().value().cols(); }
std::size_t Mlp::out_dim() const { return weights_.back().value().rows(); }

num::ParamList Mlp::params() const {
  num::ParamList out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back({prefix_ + ".W" + std::to_string(l), weights_[l]});
    out.push_back({prefix_ + ".b" + std::to_string(l), biases_[l]});
  }
  return out;
}

namespace {

std::vector<std::size_t> layer_dims(std::size_t in, std::size_t hidden, std::size_t n_hidden, std::size_t out) {
  std::vector<std::size_t> dims{in};
  for (std::size_t i = 0; i < n_hidden; ++i) dims.push_back(hidden);
  dims.push_back(out);
  return dims;
}

}  // namespace

MappingNetwork::MappingNetwork(const MapperConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  f_ = Mlp(layer_dims(cfg.d_g, cfg.d_h, cfg.n_hidden, cfg.d_l), cfg.seed, "mapper.f");
  g_ = Mlp(layer_dims(cfg.d_l, cfg.d_h, cfg.n_hidden, cfg.d_g), cfg.seed, "mapper.g");
}

Var MappingNetwork::forward_map(const Var& x) const { return f_.forward(x); }

Var MappingNetwork::back_map(const Var& y) const {
  if (frozen_) throw Error("g_k disabled: the mapping network is frozen");
  return g_.forward(y);
}

num::ParamList MappingNetwork::params() const {
  auto out = f_.params();
  for (auto& p : g_.params()) out.push_back(std::move(p));
  return out;
}

void MappingNetwork::freeze() {
  for (auto& p : params()) {
    p.var.set_requires_grad(false);
    p.var.zero_grad();
  }
  frozen_ = true;
}

std::size_t count_parameters(const MapperConfig& cfg) {
  cfg.validate();
  auto mlp = [](const std::vector<std::size_t>& dims) {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) n += dims[l] * dims[l + 1] + dims[l + 1];
    return n;
  };
  return mlp(layer_dims(cfg.d_g, cfg.d_h, cfg.n_hidden, cfg.d_l)) +
         mlp(layer_dims(cfg.d_l, cfg.d_h, cfg.n_hidden, cfg.d_g));
}

Var nt_xent_loss(const Var& mapped, const Var& targets, double tau, NtXentDenominator denominator) {
  if (mapped.value().rank() != 2 || mapped.shape() != targets.shape()) {
    throw Error("nt_xent_loss: shape mismatch " + num::shape_str(mapped.shape()) + " vs " +
                num::shape_str(targets.shape()));
  }
  const std::size_t b = mapped.value().rows();
  if (b < 2) throw Error("nt_xent_loss: batch size must be >= 2, got " + std::to_string(b));
  if (!(tau > 0.0)) throw Error("nt_xent_loss: tau must be > 0");
  if (!mapped.value().all_finite() || !targets.value().all_finite()) throw Error("nt_xent_loss: non-finite input");

  const Var sim = num::scale(num::matmul_nt(mapped, targets), 1.0 / tau);
  Var lse = num::logsumexp_offdiag_rows(sim);
  if (denominator == NtXentDenominator::mixed) {
    // log(e^a + e^b) = a + softplus(b - a)
    const Var self = num::logsumexp_offdiag_rows(num::scale(num::matmul_nt(mapped, mapped), 1.0 / tau));
    lse = num::add(lse, num::softplus(num::sub(self, lse)));
  }
  return num::mean(num::sub(lse, num::diag(sim)));
}

Var back_translation_loss(const MappingNetwork& net, const Var& x) {
  const Var back = net.back_map(net.forward_map(x));
  const Var cos = num::cosine_rows(x, back);
  return num::add_scalar(num::scale(num::sum(cos), -1.0), static_cast<double>(x.value().rows()));
}

Var combined_loss(const Var& l_c, const Var& l_bt, const Var& l_ce, double alpha, double beta) {
  return num::add(num::add(num::scale(l_c, alpha), num::scale(l_bt, beta)), l_ce);
}

double combined_loss(double l_c, double l_bt, double l_ce, double alpha, double beta) {
  return alpha * l_c + beta * l_bt + l_ce;
}

void save_mapper(const MappingNetwork& net, const std::filesystem::path& path) {
  const auto params = net.params();
  num::save_checkpoint(path, params);
}

void load_mapper(MappingNetwork& net, const std::filesystem::path& path) {
  auto params = net.params();
  num::load_into(path, params);
}

}  // namespace kgelm::map
