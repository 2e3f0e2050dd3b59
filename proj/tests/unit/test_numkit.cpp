// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "kgelm/error.hpp"
#include "kgelm/numkit/autograd.hpp"
#include "kgelm/numkit/checkpoint.hpp"
#include "kgelm/numkit/optim.hpp"
#include "kgelm/numkit/rng.hpp"
#include "test_util.hpp"

using namespace kgelm;
using namespace kgelm::num;
using kgelm::testing::random_param;
using kgelm::testing::random_tensor;

TEST_CASE("tensor rejects data that does not match its shape") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), Error);
  CHECK_THROWS_AS(Tensor({0, 3}), Error);
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
}

TEST_CASE("backward of sum and dot") {
  Var x(Tensor::vector({1.0, 2.0, 3.0}), true);
  backward(sum(x));
  CHECK(x.grad() == Tensor::vector({1.0, 1.0, 1.0}));

  Var y(Tensor::vector({1.0, 2.0}), true);
  backward(dot(y, y));
  CHECK(y.grad() == Tensor::vector({2.0, 4.0}));
}

TEST_CASE("backward rejects non-scalar losses and cycles") {
  Var x(Tensor::vector({1.0, 2.0}), true);
  CHECK_THROWS_AS(backward(scale(x, 2.0)), Error);

  Var a = scale(x, 2.0);
  Var b = scale(a, 3.0);
  Var loss = sum(b);
  a.node()->parents.push_back(loss.node());  // hand-built cycle
  CHECK_THROWS_AS(backward(loss), Error);
  a.node()->parents.pop_back();
}

TEST_CASE("two backward calls accumulate exactly twice the gradient") {
  Rng rng(3);
  Var w = random_param({3, 4}, rng);
  Var x(random_tensor({5, 4}, rng));
  Var loss = sum(tanh(matmul_nt(x, w)));
  backward(loss);
  const Tensor once = w.grad();
  backward(loss);
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(w.grad()[i] == 2.0 * once[i]);
}

TEST_CASE("random two-layer network matches finite differences") {
  Rng rng(11);
  Var w1 = random_param({6, 4}, rng, 0.5);
  Var b1 = random_param({6}, rng, 0.1);
  Var w2 = random_param({3, 6}, rng, 0.5);
  Var b2 = random_param({3}, rng, 0.1);
  Var x(random_tensor({5, 4}, rng));
  auto f = [&] {
    Var h = tanh(add_bias(matmul_nt(x, w1), b1));
    Var out = add_bias(matmul_nt(h, w2), b2);
    return mean(mul(out, out));
  };
  std::vector<Var> params{w1, b1, w2, b2};
  CHECK(grad_check(f, params, 1e-5) < 1e-4);
}

TEST_CASE("grad_check of a plain sum is exact") {
  Rng rng(1);
  std::vector<Var> params{random_param({4}, rng), random_param({2, 2}, rng)};
  auto f = [&] { return add(sum(params[0]), sum(params[1])); };
  CHECK(grad_check(f, params, 1e-5) < 1e-10);
}

TEST_CASE("grad_check rejects non-finite losses") {
  Var p(Tensor::vector({1.0}), true);
  std::vector<Var> params{p};
  auto f = [&] { return sum(scale(p, std::numeric_limits<double>::infinity())); };
  CHECK_THROWS_AS(grad_check(f, params, 1e-5), Error);
}

TEST_CASE("every differentiable op passes a finite-difference check") {
  Rng rng(42);
  const double tol = 1e-4;

  SUBCASE("elementwise") {
    Var a = random_param({3, 4}, rng);
    Var b = random_param({3, 4}, rng);
    Var pos(Tensor({3, 4}, 0.0), true);
    for (auto& v : pos.mutable_value().data()) v = 0.5 + rng.uniform();
    std::vector<Var> ps{a, b, pos};
    auto f = [&] {
      Var t = add(mul(gelu(a), relu(b)), sub(exp(scale(a, 0.3)), tanh(b)));
      return add(add(sum(add_scalar(t, 1.0)), sum(log(pos))), add(sum(softplus(a)), sum(rows_dot(a, b))));
    };
    CHECK(grad_check(f, ps) < tol);
  }
  SUBCASE("matrix products, bias, transpose, concat") {
    Var a = random_param({3, 4}, rng);
    Var b = random_param({4, 2}, rng);
    Var c = random_param({5, 4}, rng);
    Var bias = random_param({2}, rng);
    std::vector<Var> ps{a, b, c, bias};
    auto f = [&] {
      Var m = add_bias(matmul(a, b), bias);          // [3,2]
      Var n = matmul_nt(a, c);                        // [3,5]
      Var cat = concat_cols(m, n);                    // [3,7]
      return add(sum(mul(cat, cat)), sum(transpose(n)));
    };
    CHECK(grad_check(f, ps) < tol);
  }
  SUBCASE("row softmax family") {
    Var x = random_param({4, 4}, rng);
    std::vector<Var> ps{x};
    Var w(random_tensor({4, 4}, rng));
    auto f = [&] {
      return add(add(sum(mul(softmax_rows(x), w)), sum(mul(log_softmax_rows(x), w))),
                 add(sum(logsumexp_offdiag_rows(x)), sum(diag(x))));
    };
    CHECK(grad_check(f, ps) < tol);
  }
  SUBCASE("cosine, normalization, layer norm") {
    Var a = random_param({3, 5}, rng);
    Var b = random_param({3, 5}, rng);
    Var g = random_param({5}, rng);
    Var beta = random_param({5}, rng);
    Var w(random_tensor({3, 5}, rng));
    std::vector<Var> ps{a, b, g, beta};
    auto f = [&] {
      return add(add(sum(cosine_rows(a, b)), sum(mul(l2_normalize_rows(a), w))),
                 sum(mul(layer_norm(b, g, beta), w)));
    };
    CHECK(grad_check(f, ps) < tol);
  }
  SUBCASE("indexing") {
    Var table = random_param({6, 3}, rng);
    Var src = random_param({2, 3}, rng);
    Var w(random_tensor({4, 3}, rng));
    const std::vector<std::size_t> ids{1, 4, 1, 5};
    const std::vector<std::size_t> pos{0, 2};
    const std::vector<std::vector<std::size_t>> groups{{0, 1}, {}, {2, 3, 5}, {4}};
    std::vector<Var> ps{table, src};
    auto f = [&] {
      Var rows = gather_rows(table, ids);
      Var injected = replace_rows(rows, pos, src);
      return add(sum(mul(injected, w)), sum(mul(aggregate_mean(table, groups), w)));
    };
    CHECK(grad_check(f, ps) < tol);
  }
  SUBCASE("causal attention") {
    Var q = random_param({5, 8}, rng);
    Var k = random_param({5, 8}, rng);
    Var v = random_param({5, 8}, rng);
    Var w(random_tensor({5, 8}, rng));
    std::vector<Var> ps{q, k, v};
    auto f = [&] { return sum(mul(causal_attention(q, k, v, 2), w)); };
    CHECK(grad_check(f, ps) < tol);
  }
  SUBCASE("masked cross entropy") {
    Var logits = random_param({4, 6}, rng);
    const std::vector<std::size_t> targets{1, 0, 5, 2};
    const std::vector<unsigned char> mask{1, 0, 1, 1};
    std::vector<Var> ps{logits};
    auto f = [&] { return masked_cross_entropy(logits, targets, mask); };
    CHECK(grad_check(f, ps) < tol);
  }
}

TEST_CASE("ops are deterministic") {
  Rng r1(5), r2(5);
  Var a(random_tensor({4, 8}, r1));
  Var b(random_tensor({4, 8}, r2));
  CHECK(causal_attention(a, a, a, 2).value() == causal_attention(b, b, b, 2).value());
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  ParamList ps{{"w", Var(Tensor::vector({1.0, -2.0}), true)}};
  ps[0].var.mutable_value();
  ps[0].var.node()->grad = Tensor({2}, 0.0);
  AdamState st;
  adam_step(ps, st, 0.1);
  CHECK(st.step == 1);
  CHECK(ps[0].var.value() == Tensor::vector({1.0, -2.0}));
}

TEST_CASE("adam: first step with unit gradient moves by about lr") {
  // m_hat = 1, v_hat = 1 after bias correction, so delta = lr / (1 + eps).
  ParamList ps{{"w", Var(Tensor::scalar(0.5), true)}};
  ps[0].var.node()->grad = Tensor::scalar(1.0);
  AdamState st;
  adam_step(ps, st, 0.01);
  CHECK(ps[0].var.item() == doctest::Approx(0.5 - 0.01 / (1.0 + 1e-8)).epsilon(1e-14));
}

TEST_CASE("adam: constant gradient gives monotone movement against its sign") {
  ParamList ps{{"w", Var(Tensor::scalar(0.0), true)}};
  AdamState st;
  double prev = 0.0;
  for (int i = 0; i < 2; ++i) {
    ps[0].var.node()->grad = Tensor::scalar(-3.0);
    adam_step(ps, st, 0.05);
    CHECK(ps[0].var.item() > prev);
    prev = ps[0].var.item();
  }
}

TEST_CASE("adam: NaN gradient names the parameter; frozen params untouched") {
  ParamList ps{{"layer.weight", Var(Tensor::scalar(1.0), true)}, {"frozen", Var(Tensor::scalar(2.0), false)}};
  ps[0].var.node()->grad = Tensor::scalar(std::nan(""));
  AdamState st;
  try {
    adam_step(ps, st, 0.1);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("layer.weight") != std::string::npos);
  }
  ps[0].var.node()->grad = Tensor::scalar(1.0);
  ps[1].var.node()->grad = Tensor::scalar(1.0);
  adam_step(ps, st, 0.1);
  CHECK(ps[1].var.item() == 2.0);
}

TEST_CASE("cosine schedule") {
  ScheduleConfig cfg{1e-5, 100, 0.03};
  CHECK(cfg.warmup_steps() == 3);
  CHECK(cosine_lr(cfg, 3) == doctest::Approx(1e-5).epsilon(1e-12));
  CHECK(cosine_lr(cfg, 100) == 0.0);
  CHECK(cosine_lr(cfg, 0) == 0.0);
  // Progress midpoint after warmup: 3 + 97/2 = 51.5 lies between steps 51 and 52.
  CHECK(cosine_lr(cfg, 51) == doctest::Approx(0.5e-5).epsilon(0.02));
  CHECK(cosine_lr(cfg, 52) == doctest::Approx(0.5e-5).epsilon(0.02));
  ScheduleConfig even{2.0, 200, 0.03};  // warmup 6, midpoint exactly 103
  CHECK(cosine_lr(even, 103) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(cosine_lr(cfg, cfg.warmup_steps()) - cfg.peak_lr) < 1e-12);
  for (std::uint64_t s = 0; s <= cfg.total_steps; ++s) CHECK(cosine_lr(cfg, s) >= 0.0);
  CHECK_THROWS_AS(cosine_lr(cfg, 101), Error);
}

TEST_CASE("checkpoint round trip and shape validation") {
  const auto dir = std::filesystem::temp_directory_path() / "kgelm_test_ckpt";
  std::filesystem::create_directories(dir);
  const auto path = dir / "a.ckpt";
  Rng rng(9);
  ParamList ps{{"w", random_param({3, 2}, rng)}, {"b", random_param({2}, rng)}};
  save_checkpoint(path, std::span<const NamedVar>(ps));

  auto loaded = load_checkpoint(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].name == "w");
  CHECK(loaded[0].tensor == ps[0].var.value());
  CHECK(loaded[1].tensor == ps[1].var.value());

  std::ifstream in(path, std::ios::binary);
  char magic[8];
  in.read(magic, 8);
  CHECK(std::string(magic, 8) == "KGELMCK1");

  ParamList wrong{{"w", Var(Tensor({2, 3}), true)}, {"b", Var(Tensor({2}), true)}};
  CHECK_THROWS_AS(load_into(path, wrong), Error);
  ParamList missing{{"zzz", Var(Tensor({2}), true)}};
  CHECK_THROWS_AS(load_into(path, missing), Error);

  ParamList fresh{{"w", Var(Tensor({3, 2}), true)}, {"b", Var(Tensor({2}), true)}};
  load_into(path, fresh);
  CHECK(checksum(std::span<const NamedVar>(fresh)) == checksum(std::span<const NamedVar>(ps)));
}

TEST_CASE("rng sampling without replacement is uniform") {
  Rng rng(123);
  std::vector<int> counts(4, 0);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) counts[rng.sample_indices(4, 1)[0]]++;
  for (int c : counts) CHECK(std::abs(c / double(draws) - 0.25) < 0.02);
}
