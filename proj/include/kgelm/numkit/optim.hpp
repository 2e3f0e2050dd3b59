// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "kgelm/numkit/autograd.hpp"

namespace kgelm::num {

struct NamedVar {
  std::string name;
  Var var;
};
using ParamList = std::vector<NamedVar>;

/// Moments for one ordered parameter list. m[i], v[i] shadow params[i].
struct AdamState {
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

/// One Adam update (no weight decay) of every parameter that currently
/// requires grad; frozen entries are skipped and keep their bytes. A parameter
/// with no grad buffer is treated as having a zero gradient.
void adam_step(std::span<NamedVar> params, AdamState& state, double lr);

void zero_grads(std::span<NamedVar> params);

struct ScheduleConfig {
  double peak_lr = 1e-5;
  std::uint64_t total_steps = 1;
  double warmup_ratio = 0.03;

  std::uint64_t warmup_steps() const;
};

/// Linear warmup to peak, then half-cosine decay to zero at total_steps.
double cosine_lr(const ScheduleConfig& cfg, std::uint64_t step);

/// max |analytic - numeric| / max(1, |analytic|, |numeric|) over every entry
/// of every parameter, numeric by central differences with step h.
double grad_check(const std::function<Var()>& loss_fn, std::span<Var> params, double h = 1e-5);

/// FNV-1a over the raw bytes of each value tensor, in list order.
std::uint64_t checksum(std::span<const NamedVar> params);
std::uint64_t checksum(const Tensor& t);

}  // namespace kgelm::num
