// Copyright 2026 The kgelm Authors
// SPDX-License-Identifier: Apache-2.0

#include "kgelm/numkit/autograd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_map>
#include <unordered_set>
#include <utility>

#include "kgelm/error.hpp"

namespace kgelm::num {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using MapM = Eigen::Map<RowMat>;

thread_local bool g_grad_enabled = true;

MapC as_mat(const Tensor& t) { return MapC(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                                          static_cast<Eigen::Index>(t.cols())); }
MapM as_mat(Tensor& t) { return MapM(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                                     static_cast<Eigen::Index>(t.cols())); }

void require(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw Error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
  }
}

void require_matrix(const Var& a, const char* op) {
  if (a.value().rank() != 2) {
    throw Error(std::string(op) + ": expected rank-2 tensor, got " + shape_str(a.shape()));
  }
}

Var make_op(Tensor value, std::initializer_list<Var> inputs, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) needs = needs || (in.defined() && in.requires_grad());
  }
  if (needs) {
    node->requires_grad = true;
    node->is_leaf = false;
    for (const auto& in : inputs) {
      if (in.defined()) node->parents.push_back(in.node());
    }
    node->backward_fn = std::move(fn);
  }
  return Var(std::move(node));
}

// Returns the parent's grad buffer, or nullptr when that parent is not
// differentiable.
Tensor* grad_of(Node& self, std::size_t i) {
  auto& p = self.parents.at(i);
  return p->requires_grad ? &p->grad_buffer() : nullptr;
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var::Var(Tensor value, bool requires_grad, std::string name) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
  node_->name = std::move(name);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& loss) {
  require(loss.defined(), "backward: undefined loss");
  if (loss.value().size() != 1) {
    throw Error("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS; a node met while still on the stack is a cycle.
  std::vector<Node*> order;
  std::unordered_map<Node*, int> state;  // 1 = on stack, 2 = done
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  state[loss.node().get()] = 1;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (!parent->requires_grad) continue;
      auto it = state.find(parent);
      if (it == state.end()) {
        state[parent] = 1;
        stack.emplace_back(parent, 0);
      } else if (it->second == 1) {
        throw Error("backward: cycle detected in op graph");
      }
    } else {
      state[node] = 2;
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (!n->is_leaf) n->grad = Tensor(n->value.shape(), 0.0);
  }
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->is_leaf && n->backward_fn) n->backward_fn(*n);
  }
  for (Node* n : order) {
    if (!n->is_leaf) n->grad = Tensor();
  }
}

Var constant(Tensor value) { return Var(std::move(value), false); }

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (Tensor* g = grad_of(self, p)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    if (Tensor* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
    if (Tensor* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_op(std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = self.parents[0]->value;
    const Tensor& bv = self.parents[1]->value;
    if (Tensor* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    }
    if (Tensor* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * av[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& x : out.data()) x *= s;
  return make_op(std::move(out), {a}, [s](Node& self) {
    if (Tensor* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += s * self.grad[i];
    }
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& x : out.data()) x += s;
  return make_op(std::move(out), {a}, [](Node& self) {
    if (Tensor* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

namespace {

template <typename F, typename D>
Var unary(const Var& a, F f, D dfdx) {
  Tensor out = a.value();
  for (auto& x : out.data()) x = f(x);
  return make_op(std::move(out), {a}, [dfdx](Node& self) {
    if (Tensor* g = grad_of(self, 0)) {
      const Tensor& x = self.parents[0]->value;
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * dfdx(x[i], self.value[i]);
    }
  });
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

}  // namespace

Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var gelu(const Var& a) {
  return unary(
      a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x))); },
      [](double x, double) {
        const double u = kGeluC * (x + 0.044715 * x * x * x);
        const double t = std::tanh(u);
        const double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
      });
}

Var tanh(const Var& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  for (double x : a.value().data()) {
    if (!(x > 0.0)) throw Error("log: non-positive input");
  }
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var softplus(const Var& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double x : a.value().data()) s += x;
  return make_op(Tensor::scalar(s), {a}, [](Node& self) {
    if (Tensor* g = grad_of(self, 0)) {
      const double d = self.grad[0];
      for (auto& x : g->data()) x += d;
    }
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var dot(const Var& a, const Var& b) {
  require(a.value().size() == b.value().size(), "dot: size mismatch " + shape_str(a.shape()) + " vs " +
                                                    shape_str(b.shape()));
  double s = 0.0;
  for (std::size_t i = 0; i < a.value().size(); ++i) s += a.value()[i] * b.value()[i];
  return make_op(Tensor::scalar(s), {a, b}, [](Node& self) {
    const double d = self.grad[0];
    if (Tensor* g = grad_of(self, 0)) {
      const Tensor& bv = self.parents[1]->value;
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += d * bv[i];
    }
    if (Tensor* g = grad_of(self, 1)) {
      const Tensor& av = self.parents[0]->value;
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += d * av[i];
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const auto m = a.value().rows(), k = a.value().cols(), n = b.value().cols();
  require(b.value().rows() == k, "matmul: inner dim mismatch " + shape_str(a.shape()) + " x " +
                                     shape_str(b.shape()));
  Tensor out({m, n});
  as_mat(out).noalias() = as_mat(a.value()) * as_mat(b.value());
  return make_op(std::move(out), {a, b}, [](Node& self) {
    auto dc = as_mat(std::as_const(self.grad));
    if (Tensor* g = grad_of(self, 0)) as_mat(*g).noalias() += dc * as_mat(self.parents[1]->value).transpose();
    if (Tensor* g = grad_of(self, 1)) as_mat(*g).noalias() += as_mat(self.parents[0]->value).transpose() * dc;
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const auto m = a.value().rows(), k = a.value().cols(), n = b.value().rows();
  require(b.value().cols() == k, "matmul_nt: inner dim mismatch " + shape_str(a.shape()) + " x " +
                                     shape_str(b.shape()) + "^T");
  Tensor out({m, n});
  as_mat(out).noalias() = as_mat(a.value()) * as_mat(b.value()).transpose();
  return make_op(std::move(out), {a, b}, [](Node& self) {
    auto dc = as_mat(std::as_const(self.grad));
    if (Tensor* g = grad_of(self, 0)) as_mat(*g).noalias() += dc * as_mat(self.parents[1]->value);
    if (Tensor* g = grad_of(self, 1)) as_mat(*g).noalias() += dc.transpose() * as_mat(self.parents[0]->value);
  });
}

Var add_bias(const Var& x, const Var& b) {
  require_matrix(x, "add_bias");
  const auto m = x.value().rows(), n = x.value().cols();
  require(b.value().size() == n, "add_bias: bias length " + std::to_string(b.value().size()) +
                                     " does not match width " + std::to_string(n));
  Tensor out = x.value();
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) out.at(r, c) += b.value()[c];
  }
  return make_op(std::move(out), {x, b}, [](Node& self) {
    const auto m = self.value.rows(), n = self.value.cols();
    if (Tensor* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
    if (Tensor* g = grad_of(self, 1)) {
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < n; ++c) (*g)[c] += self.grad.at(r, c);
      }
    }
  });
}

Var transpose(const Var& a) {
  require_matrix(a, "transpose");
  const auto m = a.value().rows(), n = a.value().cols();
  Tensor out({n, m});
  as_mat(out) = as_mat(a.value()).transpose();
  return make_op(std::move(out), {a}, [](Node& self) {
    if (Tensor* g = grad_of(self, 0)) as_mat(*g) += as_mat(std::as_const(self.grad)).transpose();
  });
}

Var concat_cols(const Var& a, const Var& b) {
  require_matrix(a, "concat_cols");
  require_matrix(b, "concat_cols");
  const auto m = a.value().rows(), na = a.value().cols(), nb = b.value().cols();
  require(b.value().rows() == m, "concat_cols: row count mismatch");
  Tensor out({m, na + nb});
  for (std::size_t r = 0; r < m; ++r) {
    std::copy_n(a.value().row(r).begin(), na, out.row(r).begin());
    std::copy_n(b.value().row(r).begin(), nb, out.row(r).begin() + static_cast<std::ptrdiff_t>(na));
  }
  return make_op(std::move(out), {a, b}, [na, nb](Node& self) {
    const auto m = self.value.rows();
    if (Tensor* g = grad_of(self, 0)) {
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < na; ++c) g->at(r, c) += self.grad.at(r, c);
      }
    }
    if (Tensor* g = grad_of(self, 1)) {
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < nb; ++c) g->at(r, c) += self.grad.at(r, na + c);
      }
    }
  });
}

Var diag(const Var& square) {
  require_matrix(square, "diag");
  const auto n = square.value().rows();
  require(square.value().cols() == n, "diag: matrix not square");
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) out[i] = square.value().at(i, i);
  return make_op(std::move(out), {square}, [](Node& self) {
    if (Tensor* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.value.size(); ++i) g->at(i, i) += self.grad[i];
    }
  });
}

Var softmax_rows(const Var& x) {
  require_matrix(x, "softmax_rows");
  Tensor out = x.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (auto& v : row) z += (v = std::exp(v - mx));
    for (auto& v : row) v /= z;
  }
  return make_op(std::move(out), {x}, [](Node& self) {
    if (Tensor* g = grad_of(self, 0)) {
      for (std::size_t r = 0; r < self.value.rows(); ++r) {
        auto y = self.value.row(r);
        auto dy = std::as_const(self.grad).row(r);
        double s = 0.0;
        for (std::size_t c = 0; c < y.size(); ++c) s += y[c] * dy[c];
        auto gr = g->row(r);
        for (std::size_t c = 0; c < y.size(); ++c) gr[c] += y[c] * (dy[c] - s);
      }
    }
  });
}

Var log_softmax_rows(const Var& x) {
  require_matrix(x, "log_softmax_rows");
  Tensor out = x.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    for (auto& v : row) v -= lse;
  }
  return make_op(std::move(out), {x}, [](Node& self) {
    if (Tensor* g = grad_of(self, 0)) {
      for (std::size_t r = 0; r < self.value.rows(); ++r) {
        auto y = self.value.row(r);
        auto dy = std::as_const(self.grad).row(r);
        double s = 0.0;
        for (double d : dy) s += d;
        auto gr = g->row(r);
        for (std::size_t c = 0; c < y.size(); ++c) gr[c] += dy[c] - std::exp(y[c]) * s;
      }
    }
  });
}

Var logsumexp_offdiag_rows(const Var& x) {
  require_matrix(x, "logsumexp_offdiag_rows");
  const auto n = x.value().rows();
  require(x.value().cols() == n, "logsumexp_offdiag_rows: matrix not square");
  require(n >= 2, "logsumexp_offdiag_rows: need at least 2 rows");
  Tensor out({n});
  Tensor weights({n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) {
      if (k != i) mx = std::max(mx, x.value().at(i, k));
    }
    double z = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      if (k != i) z += (weights.at(i, k) = std::exp(x.value().at(i, k) - mx));
    }
    for (std::size_t k = 0; k < n; ++k) weights.at(i, k) /= z;
    out[i] = mx + std::log(z);
  }
  return make_op(std::move(out), {x}, [weights = std::move(weights)](Node& self) {
    if (Tensor* g = grad_of(self, 0)) {
      const auto n = self.value.size();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < n; ++k) g->at(i, k) += self.grad[i] * weights.at(i, k);
      }
    }
  });
}

Var cosine_rows(const Var& a, const Var& b) {
  require_same_shape(a, b, "cosine_rows");
  require_matrix(a, "cosine_rows");
  const auto m = a.value().rows(), n = a.value().cols();
  Tensor out({m});
  std::vector<double> na(m), nb(m);
  for (std::size_t r = 0; r < m; ++r) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const double x = a.value().at(r, c), y = b.value().at(r, c);
      ab += x * y;
      aa += x * x;
      bb += y * y;
    }
    if (aa == 0.0 || bb == 0.0) throw Error("cosine_rows: zero-norm row " + std::to_string(r));
    na[r] = std::sqrt(aa);
    nb[r] = std::sqrt(bb);
    out[r] = ab / (na[r] * nb[r]);
  }
  return make_op(std::move(out), {a, b}, [na = std::move(na), nb = std::move(nb)](Node& self) {
    const Tensor& av = self.parents[0]->value;
    const Tensor& bv = self.parents[1]->value;
    const auto m = av.rows(), n = av.cols();
    Tensor* ga = grad_of(self, 0);
    Tensor* gb = grad_of(self, 1);
    for (std::size_t r = 0; r < m; ++r) {
      const double d = self.grad[r], c = self.value[r];
      const double inv = 1.0 / (na[r] * nb[r]);
      for (std::size_t k = 0; k < n; ++k) {
        const double x = av.at(r, k), y = bv.at(r, k);
        if (ga) ga->at(r, k) += d * (y * inv - c * x / (na[r] * na[r]));
        if (gb) gb->at(r, k) += d * (x * inv - c * y / (nb[r] * nb[r]));
      }
    }
  });
}

Var rows_dot(const Var& a, const Var& b) {
  require_same_shape(a, b, "rows_dot");
  require_matrix(a, "rows_dot");
  const auto m = a.value().rows(), n = a.value().cols();
  Tensor out({m}, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) out[r] += a.value().at(r, c) * b.value().at(r, c);
  }
  return make_op(std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = self.parents[0]->value;
    const Tensor& bv = self.parents[1]->value;
    Tensor* ga = grad_of(self, 0);
    Tensor* gb = grad_of(self, 1);
    for (std::size_t r = 0; r < av.rows(); ++r) {
      const double d = self.grad[r];
      for (std::size_t c = 0; c < av.cols(); ++c) {
        if (ga) ga->at(r, c) += d * bv.at(r, c);
        if (gb) gb->at(r, c) += d * av.at(r, c);
      }
    }
  });
}

Var l2_normalize_rows(const Var& x, double eps) {
  require_matrix(x, "l2_normalize_rows");
  Tensor out = x.value();
  std::vector<double> norms(out.rows());
  for (std::size_t r = 0; r < out.rows(); ++r) {
    double ss = 0.0;
    for (double v : out.row(r)) ss += v * v;
    norms[r] = std::max(std::sqrt(ss), eps);
    for (auto& v : out.row(r)) v /= norms[r];
  }
  return make_op(std::move(out), {x}, [norms = std::move(norms), eps](Node& self) {
    if (Tensor* g = grad_of(self, 0)) {
      for (std::size_t r = 0; r < self.value.rows(); ++r) {
        auto y = self.value.row(r);
        auto dy = std::as_const(self.grad).row(r);
        auto gr = g->row(r);
        if (norms[r] <= eps) {
          for (std::size_t c = 0; c < y.size(); ++c) gr[c] += dy[c] / eps;
          continue;
        }
        double s = 0.0;
        for (std::size_t c = 0; c < y.size(); ++c) s += y[c] * dy[c];
        for (std::size_t c = 0; c < y.size(); ++c) gr[c] += (dy[c] - y[c] * s) / norms[r];
      }
    }
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  require_matrix(x, "layer_norm");
  const auto m = x.value().rows(), n = x.value().cols();
  require(gain.value().size() == n && bias.value().size() == n, "layer_norm: gain/bias width mismatch");
  Tensor out({m, n});
  Tensor xhat({m, n});
  std::vector<double> inv(m);
  for (std::size_t r = 0; r < m; ++r) {
    auto xr = x.value().row(r);
    double mu = 0.0;
    for (double v : xr) mu += v;
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (double v : xr) var += (v - mu) * (v - mu);
    var /= static_cast<double>(n);
    inv[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      xhat.at(r, c) = (xr[c] - mu) * inv[r];
      out.at(r, c) = xhat.at(r, c) * gain.value()[c] + bias.value()[c];
    }
  }
  return make_op(std::move(out), {x, gain, bias},
                 [xhat = std::move(xhat), inv = std::move(inv)](Node& self) {
                   const auto m = xhat.rows(), n = xhat.cols();
                   const Tensor& gv = self.parents[1]->value;
                   Tensor* gx = grad_of(self, 0);
                   Tensor* gg = grad_of(self, 1);
                   Tensor* gb = grad_of(self, 2);
                   std::vector<double> dxhat(n);
                   for (std::size_t r = 0; r < m; ++r) {
                     double s1 = 0.0, s2 = 0.0;
                     for (std::size_t c = 0; c < n; ++c) {
                       const double dy = self.grad.at(r, c);
                       if (gg) (*gg)[c] += dy * xhat.at(r, c);
                       if (gb) (*gb)[c] += dy;
                       dxhat[c] = dy * gv[c];
                       s1 += dxhat[c];
                       s2 += dxhat[c] * xhat.at(r, c);
                     }
                     if (gx) {
                       const double nn = static_cast<double>(n);
                       for (std::size_t c = 0; c < n; ++c) {
                         gx->at(r, c) += inv[r] / nn * (nn * dxhat[c] - s1 - xhat.at(r, c) * s2);
                       }
                     }
                   }
                 });
}

Var gather_rows(const Var& table, std::span<const std::size_t> ids) {
  require_matrix(table, "gather_rows");
  require(!ids.empty(), "gather_rows: empty id list");
  const auto v = table.value().rows(), d = table.value().cols();
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] < v, "gather_rows: id " + std::to_string(ids[i]) + " out of range " + std::to_string(v));
    std::copy_n(table.value().row(ids[i]).begin(), d, out.row(i).begin());
  }
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  return make_op(std::move(out), {table}, [idv = std::move(idv)](Node& self) {
    if (Tensor* g = grad_of(self, 0)) {
      const auto d = self.value.cols();
      for (std::size_t i = 0; i < idv.size(); ++i) {
        auto gr = g->row(idv[i]);
        auto dy = std::as_const(self.grad).row(i);
        for (std::size_t c = 0; c < d; ++c) gr[c] += dy[c];
      }
    }
  });
}

Var select_rows(const Var& x, std::span<const std::size_t> rows) {
  return gather_rows(x, rows);
}

Var replace_rows(const Var& base, std::span<const std::size_t> positions, const Var& src) {
  require_matrix(base, "replace_rows");
  const auto s = base.value().rows(), d = base.value().cols();
  if (positions.empty()) {
    return add_scalar(base, 0.0);
  }
  require(src.defined(), "replace_rows: missing source rows");
  require(src.value().rank() == 2 && src.value().rows() == positions.size() && src.value().cols() == d,
          "replace_rows: source shape " + shape_str(src.shape()) + " does not match " +
              std::to_string(positions.size()) + " positions of width " + std::to_string(d));
  std::vector<long> owner(s, -1);
  for (std::size_t j = 0; j < positions.size(); ++j) {
    require(positions[j] < s, "replace_rows: position out of range");
    require(owner[positions[j]] < 0, "replace_rows: duplicate position");
    owner[positions[j]] = static_cast<long>(j);
  }
  Tensor out = base.value();
  for (std::size_t j = 0; j < positions.size(); ++j) {
    std::copy_n(src.value().row(j).begin(), d, out.row(positions[j]).begin());
  }
  return make_op(std::move(out), {base, src}, [owner = std::move(owner)](Node& self) {
    const auto d = self.value.cols();
    Tensor* gb = grad_of(self, 0);
    Tensor* gs = grad_of(self, 1);
    for (std::size_t r = 0; r < owner.size(); ++r) {
      auto dy = std::as_const(self.grad).row(r);
      Tensor* target = owner[r] < 0 ? gb : gs;
      if (!target) continue;
      auto gr = target->row(owner[r] < 0 ? r : static_cast<std::size_t>(owner[r]));
      for (std::size_t c = 0; c < d; ++c) gr[c] += dy[c];
    }
  });
}

Var aggregate_mean(const Var& x, const std::vector<std::vector<std::size_t>>& groups) {
  require_matrix(x, "aggregate_mean");
  require(!groups.empty(), "aggregate_mean: no groups");
  const auto n = x.value().rows(), d = x.value().cols();
  Tensor out({groups.size(), d}, 0.0);
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (groups[i].empty()) continue;
    const double w = 1.0 / static_cast<double>(groups[i].size());
    auto o = out.row(i);
    for (auto j : groups[i]) {
      require(j < n, "aggregate_mean: member index out of range");
      auto xr = x.value().row(j);
      for (std::size_t c = 0; c < d; ++c) o[c] += w * xr[c];
    }
  }
  return make_op(std::move(out), {x}, [groups](Node& self) {
    if (Tensor* g = grad_of(self, 0)) {
      const auto d = self.value.cols();
      for (std::size_t i = 0; i < groups.size(); ++i) {
        if (groups[i].empty()) continue;
        const double w = 1.0 / static_cast<double>(groups[i].size());
        auto dy = std::as_const(self.grad).row(i);
        for (auto j : groups[i]) {
          auto gr = g->row(j);
          for (std::size_t c = 0; c < d; ++c) gr[c] += w * dy[c];
        }
      }
    }
  });
}

Var causal_attention(const Var& q, const Var& k, const Var& v, std::size_t n_heads) {
  require_matrix(q, "causal_attention");
  require_same_shape(q, k, "causal_attention");
  require_same_shape(q, v, "causal_attention");
  const auto s = q.value().rows(), d = q.value().cols();
  require(n_heads >= 1 && d % n_heads == 0, "causal_attention: width not divisible by heads");
  const auto dh = d / n_heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  // probs[h][i][j] for j <= i, stored densely.
  auto probs = std::make_shared<std::vector<double>>(n_heads * s * s, 0.0);
  Tensor out({s, d}, 0.0);
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  for (std::size_t h = 0; h < n_heads; ++h) {
    const auto off = h * dh;
    for (std::size_t i = 0; i < s; ++i) {
      double* p = probs->data() + (h * s + i) * s;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j <= i; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < dh; ++c) acc += qv.at(i, off + c) * kv.at(j, off + c);
        p[j] = acc * sc;
        mx = std::max(mx, p[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j <= i; ++j) z += (p[j] = std::exp(p[j] - mx));
      for (std::size_t j = 0; j <= i; ++j) {
        p[j] /= z;
        for (std::size_t c = 0; c < dh; ++c) out.at(i, off + c) += p[j] * vv.at(j, off + c);
      }
    }
  }
  return make_op(std::move(out), {q, k, v}, [probs, n_heads, sc](Node& self) {
    const Tensor& qv = self.parents[0]->value;
    const Tensor& kv = self.parents[1]->value;
    const Tensor& vv = self.parents[2]->value;
    const auto s = qv.rows(), d = qv.cols(), dh = d / n_heads;
    Tensor* gq = grad_of(self, 0);
    Tensor* gk = grad_of(self, 1);
    Tensor* gv = grad_of(self, 2);
    std::vector<double> dp(s);
    for (std::size_t h = 0; h < n_heads; ++h) {
      const auto off = h * dh;
      for (std::size_t i = 0; i < s; ++i) {
        const double* p = probs->data() + (h * s + i) * s;
        double dot_pdp = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          double acc = 0.0;
          for (std::size_t c = 0; c < dh; ++c) acc += self.grad.at(i, off + c) * vv.at(j, off + c);
          dp[j] = acc;
          dot_pdp += p[j] * acc;
          if (gv) {
            for (std::size_t c = 0; c < dh; ++c) gv->at(j, off + c) += p[j] * self.grad.at(i, off + c);
          }
        }
        for (std::size_t j = 0; j <= i; ++j) {
          const double ds = p[j] * (dp[j] - dot_pdp) * sc;
          if (ds == 0.0) continue;
          for (std::size_t c = 0; c < dh; ++c) {
            if (gq) gq->at(i, off + c) += ds * kv.at(j, off + c);
            if (gk) gk->at(j, off + c) += ds * qv.at(i, off + c);
          }
        }
      }
    }
  });
}

Var masked_cross_entropy(const Var& logits, std::span<const std::size_t> targets,
                         std::span<const unsigned char> mask) {
  require_matrix(logits, "masked_cross_entropy");
  const auto s = logits.value().rows(), vsz = logits.value().cols();
  require(targets.size() == s && mask.size() == s, "masked_cross_entropy: targets/mask length mismatch");
  std::size_t count = 0;
  for (auto m : mask) count += m ? 1 : 0;
  if (count == 0) throw Error("masked_cross_entropy: empty loss mask");
  Tensor probs({s, vsz}, 0.0);
  double total = 0.0;
  for (std::size_t t = 0; t < s; ++t) {
    if (!mask[t]) continue;
    require(targets[t] < vsz, "masked_cross_entropy: target id out of range");
    auto row = logits.value().row(t);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t c = 0; c < vsz; ++c) z += (probs.at(t, c) = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < vsz; ++c) probs.at(t, c) /= z;
    total += -(row[targets[t]] - mx - std::log(z));
  }
  const double inv = 1.0 / static_cast<double>(count);
  std::vector<std::size_t> tv(targets.begin(), targets.end());
  std::vector<unsigned char> mv(mask.begin(), mask.end());
  return make_op(Tensor::scalar(total * inv), {logits},
                 [probs = std::move(probs), tv = std::move(tv), mv = std::move(mv), inv](Node& self) {
                   if (Tensor* g = grad_of(self, 0)) {
                     const double d = self.grad[0] * inv;
                     for (std::size_t t = 0; t < tv.size(); ++t) {
                       if (!mv[t]) continue;
                       auto gr = g->row(t);
                       auto pr = probs.row(t);
                       for (std::size_t c = 0; c < gr.size(); ++c) gr[c] += d * pr[c];
                       gr[tv[t]] -= d;
                     }
                   }
                 });
}

}  // namespace kgelm::num
