// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0

#include "kgelm/numkit/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>

#include "kgelm/error.hpp"

namespace kgelm::num {

void adam_step(std::span<NamedVar> params, AdamState& state, double lr) {
  if (!(lr > 0.0)) throw Error("adam_step: learning rate must be positive");
  if (state.m.empty() && !params.empty()) {
    state.m.reserve(params.size());
    state.v.reserve(params.size());
    for (const auto& p : params) {
      state.m.emplace_back(p.var.shape(), 0.0);
      state.v.emplace_back(p.var.shape(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw Error("adam_step: state does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].shape() != params[i].var.shape()) {
      throw Error("adam_step: moment shape mismatch for " + params[i].name);
    }
    if (params[i].var.has_grad()) {
      for (double g : params[i].var.grad().data()) {
        if (std::isnan(g)) throw Error("adam_step: NaN gradient in parameter " + params[i].name);
      }
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Var& p = params[i].var;
    if (!p.requires_grad()) continue;
    auto& m = state.m[i];
    auto& v = state.v[i];
    auto& w = p.mutable_value();
    const bool has = p.has_grad();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double g = has ? p.grad()[j] : 0.0;
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

void zero_grads(std::span<NamedVar> params) {
  for (auto& p : params) p.var.zero_grad();
}

std::uint64_t ScheduleConfig::warmup_steps() const {
  return static_cast<std::uint64_t>(std::llround(warmup_ratio * static_cast<double>(total_steps)));
}

double cosine_lr(const ScheduleConfig& cfg, std::uint64_t step) {
  if (!(cfg.peak_lr > 0.0)) throw Error("cosine_lr: peak_lr must be positive");
  if (cfg.warmup_ratio < 0.0 || cfg.warmup_ratio > 1.0) throw Error("cosine_lr: warmup_ratio outside [0,1]");
  if (step > cfg.total_steps) {
    throw Error("cosine_lr: step " + std::to_string(step) + " beyond total_steps " +
                std::to_string(cfg.total_steps));
  }
  const auto warm = cfg.warmup_steps();
  if (step < warm) return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(warm);
  if (cfg.total_steps == warm) return cfg.peak_lr;
  const double progress =
      static_cast<double>(step - warm) / static_cast<double>(cfg.total_steps - warm);
  return cfg.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double grad_check(const std::function<Var()>& loss_fn, std::span<Var> params, double h) {
  if (!(h > 0.0)) throw Error("grad_check: h must be positive");
  for (auto& p : params) p.zero_grad();
  const Var loss = loss_fn();
  if (!std::isfinite(loss.item())) throw Error("grad_check: non-finite loss");
  backward(loss);
  double worst = 0.0;
  NoGradGuard guard;
  for (auto& p : params) {
    const Tensor analytic = p.has_grad() ? p.grad() : Tensor(p.shape(), 0.0);
    auto& w = p.mutable_value();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double orig = w[j];
      w[j] = orig + h;
      const double fp = loss_fn().item();
      w[j] = orig - h;
      const double fm = loss_fn().item();
      w[j] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[j];
      if (!std::isfinite(fp) || !std::isfinite(fm) || !std::isfinite(a)) {
        throw Error("grad_check: non-finite value at parameter " + p.name());
      }
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

namespace {
void fnv_mix(std::uint64_t& h, const Tensor& t) {
  const auto* bytes = reinterpret_cast<const unsigned char*>(t.data().data());
  for (std::size_t i = 0; i < t.size() * sizeof(double); ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
}
}  // namespace

std::uint64_t checksum(std::span<const NamedVar> params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : params) fnv_mix(h, p.var.value());
  return h;
}

std::uint64_t checksum(const Tensor& t) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  fnv_mix(h, t);
  return h;
}

}  // namespace kgelm::num
