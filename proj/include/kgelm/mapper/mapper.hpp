// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Mapping network pair: f_k translates graph embeddings (d_g) into the LM
// embedding space (d_l); g_k maps back and only serves the back-translation
// regularizer. Both are MLPs with n_hidden ReLU layers of width d_h and a
// linear output layer.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "kgelm/numkit/autograd.hpp"
#include "kgelm/numkit/optim.hpp"

namespace kgelm::map {

/// Which similarities fill the contrastive denominator for row i:
/// targets = mapped_i . target_k, mixed = those plus mapped_i . mapped_k
/// (k != i in both cases).
enum class NtXentDenominator { targets, mixed };

std::string_view denominator_name(NtXentDenominator d);
NtXentDenominator parse_denominator(std::string_view name);

struct MapperConfig {
  std::size_t d_g = 256;
  std::size_t d_h = 128;
  std::size_t n_hidden = 4;
  std::size_t d_l = 4096;
  double tau = 1.0;
  double alpha = 1.0;
  double beta = 1.0;
  NtXentDenominator ntxent_denominator = NtXentDenominator::targets;
  std::uint64_t seed = 0;

  void validate() const;
};

class Mlp {
 public:
  Mlp() = default;
  /// dims = {in, hidden..., out}; He-normal weights, zero biases.
  Mlp(const std::vector<std::size_t>& dims, std::uint64_t seed, const std::string& prefix);

  num::Var forward(const num::Var& x) const;
  std::size_t in_dim() const;
  std::size_t out_dim() const;

  std::vector<num::Var>& weights() { return weights_; }  // [out, in]
  std::vector<num::Var>& biases() { return biases_; }
  const std::vector<num::Var>& weights() const { return weights_; }
  const std::vector<num::Var>& biases() const { return biases_; }
  num::ParamList params() const;

 private:
  std::vector<num::Var> weights_;
  std::vector<num::Var> biases_;
  std::string prefix_;
};

class MappingNetwork {
 public:
  explicit MappingNetwork(const MapperConfig& cfg);

  const MapperConfig& config() const { return cfg_; }

  /// f_k: [B, d_g] -> [B, d_l]. Throws on a width mismatch.
  num::Var forward_map(const num::Var& x) const;
  /// g_k: [B, d_l] -> [B, d_g]. Throws "g_k disabled" once frozen.
  num::Var back_map(const num::Var& y) const;

  Mlp& f() { return f_; }
  Mlp& g() { return g_; }
  const Mlp& f() const { return f_; }
  const Mlp& g() const { return g_; }

  /// f_k then g_k parameters, named "mapper.f.*" / "mapper.g.*".
  num::ParamList params() const;

  /// Stops all further updates and disables g_k.
  void freeze();
  bool frozen() const { return frozen_; }

 private:
  MapperConfig cfg_;
  Mlp f_;
  Mlp g_;
  bool frozen_ = false;
};

/// Exact weight + bias count of f_k and g_k.
std::size_t count_parameters(const MapperConfig& cfg);

/// mean_i [ -m_i.t_i/tau + log sum_{k != i} exp(sim_ik/tau) ]. The positive
/// pair is left out of the denominator, so uniform similarities give
/// log(B-1) and the loss can go below zero. Throws for B < 2, shape
/// mismatch, non-positive tau or non-finite inputs.
num::Var nt_xent_loss(const num::Var& mapped, const num::Var& targets, double tau,
                      NtXentDenominator denominator = NtXentDenominator::targets);

/// sum_i (1 - cos(x_i, g_k(f_k(x_i)))). Throws on zero-norm rows or when frozen.
num::Var back_translation_loss(const MappingNetwork& net, const num::Var& x);

/// alpha * l_c + beta * l_bt + l_ce.
num::Var combined_loss(const num::Var& l_c, const num::Var& l_bt, const num::Var& l_ce, double alpha,
                       double beta);
double combined_loss(double l_c, double l_bt, double l_ce, double alpha, double beta);

void save_mapper(const MappingNetwork& net, const std::filesystem::path& path);
/// Loads weights into a network built from the same config.
void load_mapper(MappingNetwork& net, const std::filesystem::path& path);

}  // namespace kgelm::map
