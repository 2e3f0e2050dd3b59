// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "kgelm/error.hpp"
#include "kgelm/mapper/mapper.hpp"
#include "kgelm/numkit/optim.hpp"
#include "test_util.hpp"

using namespace kgelm;
using namespace kgelm::map;
using num::Var;

namespace {

// Loop-only reference: row i's positive is targets[i]; denominators skip k == i.
double brute_ntxent(const num::Tensor& m, const num::Tensor& t, double tau, bool mixed) {
  const std::size_t b = m.rows(), d = m.cols();
  auto dot = [&](const num::Tensor& x, std::size_t i, const num::Tensor& y, std::size_t k) {
    double s = 0;
    for (std::size_t c = 0; c < d; ++c) s += x.at(i, c) * y.at(k, c);
    return s;
  };
  double total = 0;
  for (std::size_t i = 0; i < b; ++i) {
    double denom = 0;
    for (std::size_t k = 0; k < b; ++k) {
      if (k == i) continue;
      denom += std::exp(dot(m, i, t, k) / tau);
      if (mixed) denom += std::exp(dot(m, i, m, k) / tau);
    }
    total += -std::log(std::exp(dot(m, i, t, i) / tau) / denom);
  }
  return total / static_cast<double>(b);
}

// Closed-form count of one MLP from its layer widths.
std::size_t mlp_count(std::size_t in, std::size_t hidden, std::size_t n_hidden, std::size_t out) {
  std::size_t n = in * hidden + hidden;
  n += (n_hidden - 1) * (hidden * hidden + hidden);
  n += hidden * out + out;
  return n;
}

MapperConfig small_config() {
  MapperConfig cfg;
  cfg.d_g = 5;
  cfg.d_h = 16;
  cfg.n_hidden = 2;
  cfg.d_l = 3;
  cfg.seed = 1;
  return cfg;
}

// Small positive biases keep every ReLU row alive in the tiny test nets.
MappingNetwork live_network(const MapperConfig& cfg) {
  MappingNetwork net(cfg);
  num::Rng rng(cfg.seed + 100);
  for (auto* mlp : {&net.f(), &net.g()}) {
    for (auto& b : mlp->biases()) {
      for (auto& v : b.mutable_value().data()) v = 0.1 + 0.1 * rng.uniform();
    }
  }
  return net;
}

// Sets f_k and g_k to the identity on d dims (needs d_g = d_h = d_l).
void make_identity(Mlp& mlp, double out_scale) {
  for (std::size_t l = 0; l < mlp.weights().size(); ++l) {
    auto& w = mlp.weights()[l].mutable_value();
    w.fill(0.0);
    for (std::size_t i = 0; i < w.rows(); ++i) w.at(i, i) = l + 1 == mlp.weights().size() ? out_scale : 1.0;
    mlp.biases()[l].mutable_value().fill(0.0);
  }
}

}  // namespace

TEST_CASE("nt_xent_loss: matches the loop reference on random batches") {
  num::Rng rng(0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = 2 + rng.uniform_index(7);
    const std::size_t d = 1 + rng.uniform_index(6);
    const double tau = std::array<double, 3>{0.07, 0.5, 1.0}[rng.uniform_index(3)];
    const auto m = testing::random_tensor({b, d}, rng, 0.5);
    const auto t = testing::random_tensor({b, d}, rng, 0.5);
    for (bool mixed : {false, true}) {
      const auto mode = mixed ? NtXentDenominator::mixed : NtXentDenominator::targets;
      const double got = nt_xent_loss(num::constant(m), num::constant(t), tau, mode).item();
      CHECK(got == doctest::Approx(brute_ntxent(m, t, tau, mixed)).epsilon(1e-9));
    }
  }
}

TEST_CASE("nt_xent_loss: analytic cases") {
  // Uniform similarity: every row reduces to log(B-1).
  for (std::size_t b : {2u, 3u, 8u}) {
    const num::Tensor ones({b, 4}, 0.5);
    CHECK(std::abs(nt_xent_loss(num::constant(ones), num::constant(ones), 1.0).item() - std::log(b - 1.0)) < 1e-12);
  }
  // Orthonormal rows, tau = 1: positive dot 1, single negative dot 0.
  const auto eye = num::Tensor::matrix(2, 2, {1, 0, 0, 1});
  CHECK(nt_xent_loss(num::constant(eye), num::constant(eye), 1.0).item() == doctest::Approx(-1.0));
  // Large temperature flattens any batch toward log(B-1).
  num::Rng rng(4);
  const auto m = testing::random_tensor({5, 3}, rng), t = testing::random_tensor({5, 3}, rng);
  CHECK(nt_xent_loss(num::constant(m), num::constant(t), 1e9).item() == doctest::Approx(std::log(4.0)).epsilon(1e-6));
}

TEST_CASE("nt_xent_loss: invariant to a joint row permutation") {
  num::Rng rng(8);
  const auto m = testing::random_tensor({6, 4}, rng), t = testing::random_tensor({6, 4}, rng);
  std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  const Var pm = num::select_rows(num::constant(m), perm), pt = num::select_rows(num::constant(t), perm);
  CHECK(nt_xent_loss(pm, pt, 0.5).item() ==
        doctest::Approx(nt_xent_loss(num::constant(m), num::constant(t), 0.5).item()).epsilon(1e-12));
}

TEST_CASE("nt_xent_loss: errors") {
  const num::Tensor one({1, 3}, 1.0), two({2, 3}, 1.0), two4({2, 4}, 1.0);
  CHECK_THROWS_AS(nt_xent_loss(num::constant(one), num::constant(one), 1.0), Error);
  CHECK_THROWS_AS(nt_xent_loss(num::constant(two), num::constant(two4), 1.0), Error);
  CHECK_THROWS_AS(nt_xent_loss(num::constant(two), num::constant(two), 0.0), Error);
  num::Tensor bad = two;
  bad[1] = NAN;
  CHECK_THROWS_AS(nt_xent_loss(num::constant(bad), num::constant(two), 1.0), Error);
}

TEST_CASE("count_parameters: closed-form layer arithmetic") {
  MapperConfig cfg;
  cfg.d_g = 256;
  cfg.d_h = 128;
  cfg.n_hidden = 4;
  cfg.d_l = 4096;
  const std::size_t f = mlp_count(256, 128, 4, 4096), g = mlp_count(4096, 128, 4, 256);
  CHECK(g == 606976);
  CHECK(count_parameters(cfg) == f + g);
  CHECK(std::llround(static_cast<double>(count_parameters(cfg)) / 1e4) == 122);  // "1.22M"

  MapperConfig uniform;
  uniform.d_g = uniform.d_h = uniform.d_l = 32;
  uniform.n_hidden = 1;
  CHECK(count_parameters(uniform) == 4 * (32 * 32 + 32));

  MapperConfig doubled = cfg;
  doubled.d_l = 2 * cfg.d_l;
  CHECK(count_parameters(doubled) - count_parameters(cfg) == (128 * 4096 + 4096) + (4096 * 128));

  const MappingNetwork net(small_config());
  std::size_t actual = 0;
  for (const auto& p : net.params()) actual += p.var.value().size();
  CHECK(actual == count_parameters(small_config()));
}

TEST_CASE("forward_map: zero weights, batch independence, layer-by-layer oracle") {
  const auto cfg = small_config();
  MappingNetwork net(cfg);
  num::Rng rng(2);
  const auto x = testing::random_tensor({2, cfg.d_g}, rng);

  // Independent re-evaluation with explicit loops.
  std::vector<double> row(x.row(1).begin(), x.row(1).end());
  for (std::size_t l = 0; l < net.f().weights().size(); ++l) {
    const auto& w = net.f().weights()[l].value();
    const auto& b = net.f().biases()[l].value();
    std::vector<double> next(w.rows());
    for (std::size_t o = 0; o < w.rows(); ++o) {
      next[o] = b[o];
      for (std::size_t i = 0; i < w.cols(); ++i) next[o] += w.at(o, i) * row[i];
      if (l + 1 < net.f().weights().size()) next[o] = std::max(0.0, next[o]);
    }
    row = next;
  }
  const auto batch = net.forward_map(num::constant(x)).value();
  for (std::size_t c = 0; c < cfg.d_l; ++c) CHECK(batch.at(1, c) == doctest::Approx(row[c]).epsilon(1e-12));

  const auto single = net.forward_map(num::select_rows(num::constant(x), std::vector<std::size_t>{1})).value();
  for (std::size_t c = 0; c < cfg.d_l; ++c) CHECK(single.at(0, c) == doctest::Approx(batch.at(1, c)).epsilon(1e-12));

  for (auto& p : net.params()) p.var.mutable_value().fill(0.0);
  const auto zero = net.forward_map(num::constant(x)).value();
  CHECK(std::all_of(zero.data().begin(), zero.data().end(), [](double v) { return v == 0.0; }));

  CHECK_THROWS_AS(net.forward_map(num::constant(num::Tensor({2, cfg.d_g + 1}, 1.0))), Error);
}

TEST_CASE("back_translation_loss: identity, antipodal and scaled round trips") {
  MapperConfig cfg;
  cfg.d_g = cfg.d_h = cfg.d_l = 3;
  cfg.n_hidden = 2;
  num::Rng rng(6);
  // Positive inputs keep the ReLU layers exact.
  num::Tensor x({4, 3});
  for (auto& v : x.data()) v = 0.1 + rng.uniform();
  for (double scale : {1.0, -1.0, 3.0}) {
    MappingNetwork net(cfg);
    make_identity(net.f(), 1.0);
    make_identity(net.g(), scale);
    const double expect = scale < 0 ? 2.0 * 4 : 0.0;
    CHECK(back_translation_loss(net, num::constant(x)).item() == doctest::Approx(expect).epsilon(1e-12));
  }
  MappingNetwork net(cfg);
  num::Tensor zero_row = x;
  for (std::size_t c = 0; c < 3; ++c) zero_row.at(2, c) = 0.0;
  CHECK_THROWS_AS(back_translation_loss(net, num::constant(zero_row)), Error);
}

TEST_CASE("back_translation_loss: invariant to positive rescaling of input rows") {
  const auto cfg = small_config();
  num::Rng rng(12);
  const auto x = testing::random_tensor({3, cfg.d_g}, rng);
  num::Tensor scaled = x;
  for (std::size_t r = 0; r < 3; ++r) {
    for (auto& v : scaled.row(r)) v *= static_cast<double>(r + 2);
  }
  // With biases the round trip is not homogeneous in x, so zero them.
  MappingNetwork nobias(cfg);
  for (auto& b : nobias.f().biases()) b.mutable_value().fill(0.0);
  for (auto& b : nobias.g().biases()) b.mutable_value().fill(0.0);
  CHECK(back_translation_loss(nobias, num::constant(scaled)).item() ==
        doctest::Approx(back_translation_loss(nobias, num::constant(x)).item()).epsilon(1e-10));
}

TEST_CASE("combined_loss: arithmetic and gradient composition") {
  CHECK(combined_loss(0.5, 0.25, 1.0, 0.0, 0.0) == 1.0);
  CHECK(combined_loss(0.5, 0.25, 1.0, 1.0, 1.0) == 1.75);

  const auto cfg = small_config();
  MappingNetwork net = live_network(cfg);
  num::Rng rng(3);
  const auto x = num::constant(testing::random_tensor({4, cfg.d_g}, rng));
  const auto y = num::constant(testing::random_tensor({4, cfg.d_l}, rng));
  const auto w_ce = num::constant(testing::random_tensor({4, cfg.d_l}, rng));
  auto params = net.params();
  std::vector<Var> vars;
  for (auto& p : params) vars.push_back(p.var);

  auto total = [&] {
    const Var mapped = net.forward_map(x);
    return combined_loss(nt_xent_loss(mapped, y, 0.5), back_translation_loss(net, x),
                         num::sum(num::mul(num::tanh(mapped), w_ce)), 0.7, 1.3);
  };
  CHECK(num::grad_check(total, vars) < 1e-4);
  CHECK(num::grad_check([&] { return nt_xent_loss(net.forward_map(x), y, 0.07, NtXentDenominator::mixed); }, vars) <
        1e-4);
  CHECK(num::grad_check([&] { return back_translation_loss(net, x); }, vars) < 1e-4);

  // Gradient of the weighted sum equals the weighted sum of gradients.
  auto grads_of = [&](const std::function<Var()>& fn) {
    num::zero_grads(params);
    num::backward(fn());
    std::vector<double> g;
    for (auto& p : params) {
      if (p.var.has_grad()) {
        g.insert(g.end(), p.var.grad().data().begin(), p.var.grad().data().end());
      } else {
        g.insert(g.end(), p.var.value().size(), 0.0);
      }
    }
    return g;
  };
  const auto g_all = grads_of(total);
  const auto g_c = grads_of([&] { return nt_xent_loss(net.forward_map(x), y, 0.5); });
  const auto g_bt = grads_of([&] { return back_translation_loss(net, x); });
  const auto g_ce = grads_of([&] { return num::sum(num::mul(num::tanh(net.forward_map(x)), w_ce)); });
  for (std::size_t i = 0; i < g_all.size(); ++i) {
    CHECK(g_all[i] == doctest::Approx(0.7 * g_c[i] + 1.3 * g_bt[i] + g_ce[i]).epsilon(1e-9));
  }
}

TEST_CASE("freeze: parameters stay bit-identical, g_k disabled, forward unchanged") {
  const auto cfg = small_config();
  MappingNetwork net(cfg);
  num::Rng rng(5);
  const auto x = num::constant(testing::random_tensor({3, cfg.d_g}, rng));
  const auto y = num::constant(testing::random_tensor({3, cfg.d_l}, rng));
  const auto before = net.forward_map(x).value();
  net.freeze();
  CHECK(net.frozen());
  auto params = net.params();
  const auto sum_before = num::checksum(params);
  num::AdamState adam;
  for (int step = 0; step < 10; ++step) {
    num::zero_grads(params);
    const Var loss = nt_xent_loss(net.forward_map(x), y, 1.0);
    num::backward(loss);
    num::adam_step(params, adam, 0.1);
  }
  CHECK(num::checksum(params) == sum_before);
  CHECK(net.forward_map(x).value() == before);
  try {
    back_translation_loss(net, x);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("g_k disabled") != std::string::npos);
  }
}

TEST_CASE("save_mapper / load_mapper round trip") {
  const auto path = std::filesystem::temp_directory_path() / "kgelm_test_mapper.ckpt";
  MappingNetwork a(small_config());
  save_mapper(a, path);
  auto other_cfg = small_config();
  other_cfg.seed = 99;
  MappingNetwork b(other_cfg);
  CHECK(num::checksum(a.params()) != num::checksum(b.params()));
  load_mapper(b, path);
  CHECK(num::checksum(a.params()) == num::checksum(b.params()));
  auto wrong = small_config();
  wrong.d_h = 7;
  MappingNetwork c(wrong);
  CHECK_THROWS_AS(load_mapper(c, path), Error);
}

TEST_CASE("MapperConfig: validation and denominator names") {
  auto cfg = small_config();
  cfg.tau = 0.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  CHECK(parse_denominator("mixed") == NtXentDenominator::mixed);
  CHECK(parse_denominator(denominator_name(NtXentDenominator::targets)) == NtXentDenominator::targets);
  CHECK_THROWS_AS(parse_denominator("both"), Error);
}
