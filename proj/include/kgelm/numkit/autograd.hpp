// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over dense float64 tensors.
//
// Every op returns a Var wrapping a fresh graph node. Leaves created with
// requires_grad=true are parameters: backward() sums into their grad buffer
// and never clears it, so repeated backward calls accumulate (the trainer
// relies on this for gradient accumulation). Interior gradients are reset at
// the start of every backward() call.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "kgelm/numkit/tensor.hpp"

namespace kgelm::num {

struct Node {
  Tensor value;
  Tensor grad;  // empty until first touched
  bool requires_grad = false;
  bool is_leaf = true;
  std::string name;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(Node&)> backward_fn;

  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false, std::string name = {});
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  /// Direct write access; used by optimizers and finite-difference probes.
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  double item() const { return node_->value.item(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  const Tensor& grad() const { return node_->grad; }
  void zero_grad() { node_->grad = Tensor(); }

  const std::string& name() const { return node_->name; }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Disables graph construction in its scope (inference, frozen lookups).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

/// Propagates d(loss)/d(param) into every reachable parameter's grad buffer.
/// Throws on a non-scalar loss or a cycle in the op graph.
void backward(const Var& loss);

Var constant(Tensor value);

// Elementwise and shape-preserving.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var relu(const Var& a);
Var gelu(const Var& a);
Var tanh(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
/// log(1 + exp(a)), evaluated stably.
Var softplus(const Var& a);

// Reductions to a scalar.
Var sum(const Var& a);
Var mean(const Var& a);
Var dot(const Var& a, const Var& b);

// Matrix ops. Rank-1 operands are treated as a single row where noted.
Var matmul(const Var& a, const Var& b);     // [m,k] x [k,n]
Var matmul_nt(const Var& a, const Var& b);  // [m,k] x [n,k]^T
Var add_bias(const Var& x, const Var& b);   // [m,n] + [n]
Var transpose(const Var& a);
Var concat_cols(const Var& a, const Var& b);
Var diag(const Var& square);                // [n,n] -> [n]

// Row-wise ops over [m,n].
Var softmax_rows(const Var& x);
Var log_softmax_rows(const Var& x);
/// log sum_{k != i} exp(x[i,k]) for a square matrix; returns [n].
Var logsumexp_offdiag_rows(const Var& x);
Var cosine_rows(const Var& a, const Var& b);  // -> [m]
Var rows_dot(const Var& a, const Var& b);     // -> [m]
Var l2_normalize_rows(const Var& x, double eps = 1e-12);
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);

// Indexing.
Var gather_rows(const Var& table, std::span<const std::size_t> ids);
Var select_rows(const Var& x, std::span<const std::size_t> rows);
/// Copy of base with base[positions[j]] replaced by src[j].
Var replace_rows(const Var& base, std::span<const std::size_t> positions, const Var& src);
/// out[i] = mean of x rows listed in groups[i]; an empty group yields zeros.
Var aggregate_mean(const Var& x, const std::vector<std::vector<std::size_t>>& groups);

/// Multi-head causal self-attention on pre-projected q, k, v of shape [S,d].
Var causal_attention(const Var& q, const Var& k, const Var& v, std::size_t n_heads);

/// Mean of -log softmax(logits[t])[targets[t]] over positions with mask[t] set.
Var masked_cross_entropy(const Var& logits, std::span<const std::size_t> targets,
                         std::span<const unsigned char> mask);

}  // namespace kgelm::num
