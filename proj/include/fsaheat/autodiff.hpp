#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numbers>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fsaheat/tensor.hpp"

namespace fsaheat {

// Reverse-mode tape. Nodes are created in forward order; `seq` gives a
// topological order for free. Graphs are immutable after construction and
// differentiated on one thread; independent graphs may live on separate
// threads concurrently (no shared mutable state between them).
struct Node {
  Tensor value;
  Tensor grad;  // empty until materialized by backward
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.empty()) grad = Tensor::zeros(value.shape);
  }
};

using NodePtr = std::shared_ptr<Node>;

inline std::uint64_t next_seq() {
  static std::atomic<std::uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

class Var {
 public:
  Var() = default;
  explicit Var(NodePtr n) : node_(std::move(n)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape; }
  Tensor& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  bool requires_grad() const { return node_->requires_grad; }
  NodePtr node() const { return node_; }

 private:
  NodePtr node_;
};

inline Var constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->requires_grad = false;
  n->seq = next_seq();
  return Var(std::move(n));
}

inline Var leaf(Tensor t, bool requires_grad = true) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->requires_grad = requires_grad;
  n->seq = next_seq();
  return Var(std::move(n));
}

inline Var make_op(Tensor value, std::vector<NodePtr> parents,
                   std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = false;
  for (const auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
  n->parents = std::move(parents);
  if (n->requires_grad) n->backward = std::move(backward);
  n->seq = next_seq();
  return Var(std::move(n));
}

// Runs the tape from a scalar root. Gradients accumulate into every
// reachable node with requires_grad set.
inline void backward(const Var& root) {
  check(root.defined(), "backward: undefined root");
  check(root.value().numel() == 1, "backward: root must be scalar, got shape " + root.shape().str());
  if (!root.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root.node().get()};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const Node* a, const Node* b) { return a->seq > b->seq; });

  root.node()->ensure_grad();
  root.node()->grad[0] = 1.0;
  for (Node* n : order) {
    if (n->backward) n->backward(*n);
  }
}

// ---------------------------------------------------------------------------
// Broadcasting (numpy rules, right-aligned; size-1 axes stretch)

struct BroadcastPlan {
  Shape out;
  std::vector<std::int64_t> stride_a, stride_b;  // in elements; 0 on stretched axes
};

inline BroadcastPlan broadcast_shapes(const Shape& a, const Shape& b) {
  const int ra = a.rank(), rb = b.rank();
  const int r = std::max(ra, rb);
  BroadcastPlan plan;
  plan.out.dims.resize(static_cast<std::size_t>(r));
  std::vector<std::int64_t> full_a(static_cast<std::size_t>(r), 1), full_b(static_cast<std::size_t>(r), 1);
  for (int i = 0; i < ra; ++i) full_a[static_cast<std::size_t>(r - ra + i)] = a[i];
  for (int i = 0; i < rb; ++i) full_b[static_cast<std::size_t>(r - rb + i)] = b[i];
  for (int i = 0; i < r; ++i) {
    const std::int64_t da = full_a[static_cast<std::size_t>(i)], db = full_b[static_cast<std::size_t>(i)];
    check(da == db || da == 1 || db == 1,
          "broadcast: incompatible shapes " + a.str() + " vs " + b.str());
    plan.out.dims[static_cast<std::size_t>(i)] = std::max(da, db);
  }
  auto strides_of = [r](const std::vector<std::int64_t>& dims) {
    std::vector<std::int64_t> s(static_cast<std::size_t>(r), 0);
    std::int64_t acc = 1;
    for (int i = r - 1; i >= 0; --i) {
      s[static_cast<std::size_t>(i)] = acc;
      acc *= dims[static_cast<std::size_t>(i)];
    }
    return s;
  };
  plan.stride_a = strides_of(full_a);
  plan.stride_b = strides_of(full_b);
  for (int i = 0; i < r; ++i) {
    if (full_a[static_cast<std::size_t>(i)] == 1 && plan.out[i] != 1) plan.stride_a[static_cast<std::size_t>(i)] = 0;
    if (full_b[static_cast<std::size_t>(i)] == 1 && plan.out[i] != 1) plan.stride_b[static_cast<std::size_t>(i)] = 0;
  }
  return plan;
}

// Odometer walk over the output index space of a broadcast pair.
template <class Fn>
inline void broadcast_walk(const BroadcastPlan& plan, Fn&& fn) {
  const int r = plan.out.rank();
  const std::int64_t n = plan.out.numel();
  std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
  std::int64_t oa = 0, ob = 0;
  for (std::int64_t flat = 0; flat < n; ++flat) {
    fn(flat, oa, ob);
    for (int ax = r - 1; ax >= 0; --ax) {
      idx[static_cast<std::size_t>(ax)]++;
      oa += plan.stride_a[static_cast<std::size_t>(ax)];
      ob += plan.stride_b[static_cast<std::size_t>(ax)];
      if (idx[static_cast<std::size_t>(ax)] < plan.out[ax]) break;
      oa -= plan.stride_a[static_cast<std::size_t>(ax)] * plan.out[ax];
      ob -= plan.stride_b[static_cast<std::size_t>(ax)] * plan.out[ax];
      idx[static_cast<std::size_t>(ax)] = 0;
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise ops

enum class EwOp { add, sub, mul, neg, exp, sigmoid, silu, gelu, leaky_relu, abs };

inline Var binary_op(const Var& a, const Var& b, EwOp op) {
  const auto plan = broadcast_shapes(a.shape(), b.shape());
  Tensor out(plan.out);
  const double* pa = a.value().ptr();
  const double* pb = b.value().ptr();
  double* po = out.ptr();
  const bool samesh = (a.shape() == b.shape());
  if (samesh) {
    const std::int64_t n = out.numel();
    switch (op) {
      case EwOp::add: for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i]; break;
      case EwOp::sub: for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i]; break;
      case EwOp::mul: for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i]; break;
      default: check(false, "binary_op: not a binary tag");
    }
  } else {
    broadcast_walk(plan, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
      switch (op) {
        case EwOp::add: po[o] = pa[ia] + pb[ib]; break;
        case EwOp::sub: po[o] = pa[ia] - pb[ib]; break;
        case EwOp::mul: po[o] = pa[ia] * pb[ib]; break;
        default: check(false, "binary_op: not a binary tag");
      }
    });
  }
  auto bw = [plan, op, samesh](Node& self) {
    Node& A = *self.parents[0];
    Node& B = *self.parents[1];
    if (A.requires_grad) A.ensure_grad();
    if (B.requires_grad) B.ensure_grad();
    const double* g = self.grad.ptr();
    const double* pa2 = A.value.ptr();
    const double* pb2 = B.value.ptr();
    if (samesh) {
      const std::int64_t n = self.value.numel();
      if (A.requires_grad) {
        double* ga = A.grad.ptr();
        switch (op) {
          case EwOp::add: case EwOp::sub:
            for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i];
            break;
          case EwOp::mul:
            for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i] * pb2[i];
            break;
          default: break;
        }
      }
      if (B.requires_grad) {
        double* gb = B.grad.ptr();
        switch (op) {
          case EwOp::add:
            for (std::int64_t i = 0; i < n; ++i) gb[i] += g[i];
            break;
          case EwOp::sub:
            for (std::int64_t i = 0; i < n; ++i) gb[i] -= g[i];
            break;
          case EwOp::mul:
            for (std::int64_t i = 0; i < n; ++i) gb[i] += g[i] * pa2[i];
            break;
          default: break;
        }
      }
    } else {
      double* ga = A.requires_grad ? A.grad.ptr() : nullptr;
      double* gb = B.requires_grad ? B.grad.ptr() : nullptr;
      broadcast_walk(plan, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
        switch (op) {
          case EwOp::add:
            if (ga) ga[ia] += g[o];
            if (gb) gb[ib] += g[o];
            break;
          case EwOp::sub:
            if (ga) ga[ia] += g[o];
            if (gb) gb[ib] -= g[o];
            break;
          case EwOp::mul:
            if (ga) ga[ia] += g[o] * pb2[ib];
            if (gb) gb[ib] += g[o] * pa2[ia];
            break;
          default: break;
        }
      });
    }
  };
  return make_op(std::move(out), {a.node(), b.node()}, std::move(bw));
}

inline Var unary_op(const Var& a, EwOp op) {
  const std::int64_t n = a.value().numel();
  Tensor out(a.shape());
  const double* pa = a.value().ptr();
  double* po = out.ptr();
  constexpr double kLeakySlope = 0.01;
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  switch (op) {
    case EwOp::neg: for (std::int64_t i = 0; i < n; ++i) po[i] = -pa[i]; break;
    case EwOp::exp: for (std::int64_t i = 0; i < n; ++i) po[i] = std::exp(pa[i]); break;
    case EwOp::sigmoid:
      for (std::int64_t i = 0; i < n; ++i) po[i] = 1.0 / (1.0 + std::exp(-pa[i]));
      break;
    case EwOp::silu:
      for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] / (1.0 + std::exp(-pa[i]));
      break;
    case EwOp::gelu:
      for (std::int64_t i = 0; i < n; ++i)
        po[i] = 0.5 * pa[i] * (1.0 + std::erf(pa[i] * inv_sqrt2));
      break;
    case EwOp::leaky_relu:
      for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] >= 0.0 ? pa[i] : kLeakySlope * pa[i];
      break;
    case EwOp::abs: for (std::int64_t i = 0; i < n; ++i) po[i] = std::abs(pa[i]); break;
    default: check(false, "unary_op: not a unary tag");
  }
  auto bw = [op, n, inv_sqrt2, inv_sqrt2pi](Node& self) {
    Node& A = *self.parents[0];
    if (!A.requires_grad) return;
    A.ensure_grad();
    const double* g = self.grad.ptr();
    const double* x = A.value.ptr();
    const double* y = self.value.ptr();
    double* ga = A.grad.ptr();
    constexpr double kLeakySlope = 0.01;
    switch (op) {
      case EwOp::neg: for (std::int64_t i = 0; i < n; ++i) ga[i] -= g[i]; break;
      case EwOp::exp: for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i] * y[i]; break;
      case EwOp::sigmoid:
        for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
        break;
      case EwOp::silu:
        for (std::int64_t i = 0; i < n; ++i) {
          const double s = 1.0 / (1.0 + std::exp(-x[i]));
          ga[i] += g[i] * s * (1.0 + x[i] * (1.0 - s));
        }
        break;
      case EwOp::gelu:
        for (std::int64_t i = 0; i < n; ++i) {
          const double cdf = 0.5 * (1.0 + std::erf(x[i] * inv_sqrt2));
          const double pdf = inv_sqrt2pi * std::exp(-0.5 * x[i] * x[i]);
          ga[i] += g[i] * (cdf + x[i] * pdf);
        }
        break;
      case EwOp::leaky_relu:
        for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i] * (x[i] >= 0.0 ? 1.0 : kLeakySlope);
        break;
      case EwOp::abs:
        for (std::int64_t i = 0; i < n; ++i)
          ga[i] += g[i] * (x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0));
        break;
      default: break;
    }
  };
  return make_op(std::move(out), {a.node()}, std::move(bw));
}

// Single entry point mirroring the op-tag contract; named wrappers below.
inline Var elementwise(EwOp op, const Var& a, const Var& b = Var()) {
  switch (op) {
    case EwOp::add: case EwOp::sub: case EwOp::mul:
      check(b.defined(), "elementwise: binary tag needs two operands");
      return binary_op(a, b, op);
    default:
      check(!b.defined(), "elementwise: unary tag takes one operand");
      return unary_op(a, op);
  }
}

inline Var add(const Var& a, const Var& b) { return binary_op(a, b, EwOp::add); }
inline Var sub(const Var& a, const Var& b) { return binary_op(a, b, EwOp::sub); }
inline Var mul(const Var& a, const Var& b) { return binary_op(a, b, EwOp::mul); }
inline Var neg(const Var& a) { return unary_op(a, EwOp::neg); }
inline Var exp(const Var& a) { return unary_op(a, EwOp::exp); }
inline Var sigmoid(const Var& a) { return unary_op(a, EwOp::sigmoid); }
inline Var silu(const Var& a) { return unary_op(a, EwOp::silu); }
inline Var gelu(const Var& a) { return unary_op(a, EwOp::gelu); }
inline Var leaky_relu(const Var& a) { return unary_op(a, EwOp::leaky_relu); }
inline Var abs(const Var& a) { return unary_op(a, EwOp::abs); }

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator-(const Var& a) { return neg(a); }

// y = c * x for a plain scalar c.
inline Var scale(const Var& a, double c) {
  const std::int64_t n = a.value().numel();
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < n; ++i) out[i] = c * a.value()[i];
  auto bw = [c, n](Node& self) {
    Node& A = *self.parents[0];
    if (!A.requires_grad) return;
    A.ensure_grad();
    for (std::int64_t i = 0; i < n; ++i) A.grad[i] += c * self.grad[i];
  };
  return make_op(std::move(out), {a.node()}, std::move(bw));
}

inline Var add_scalar(const Var& a, double c) {
  const std::int64_t n = a.value().numel();
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < n; ++i) out[i] = a.value()[i] + c;
  auto bw = [n](Node& self) {
    Node& A = *self.parents[0];
    if (!A.requires_grad) return;
    A.ensure_grad();
    for (std::int64_t i = 0; i < n; ++i) A.grad[i] += self.grad[i];
  };
  return make_op(std::move(out), {a.node()}, std::move(bw));
}

// ---------------------------------------------------------------------------
// Matrix product, shape/view ops, reductions

inline void matmul_acc_raw(const double* a, const double* b, double* c,
                           std::int64_t m, std::int64_t k, std::int64_t n,
                           bool trans_a, bool trans_b) {
  // c[m,n] += op(a) * op(b); i-k-j loop order keeps the inner loop contiguous.
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const double av = trans_a ? a[kk * m + i] : a[i * k + kk];
      if (av == 0.0) continue;
      const double* brow = trans_b ? nullptr : b + kk * n;
      double* crow = c + i * n;
      if (trans_b) {
        for (std::int64_t j = 0; j < n; ++j) crow[j] += av * b[j * k + kk];
      } else {
        for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

inline Var matmul(const Var& a, const Var& b) {
  check(a.shape().rank() == 2 && b.shape().rank() == 2,
        "matmul: operands must be rank-2, got " + a.shape().str() + " and " + b.shape().str());
  const std::int64_t m = a.shape()[0], k = a.shape()[1];
  const std::int64_t k2 = b.shape()[0], n = b.shape()[1];
  check(k == k2, "matmul: inner dims disagree, " + a.shape().str() + " vs " + b.shape().str());
  Tensor out(Shape{m, n});
  matmul_acc_raw(a.value().ptr(), b.value().ptr(), out.ptr(), m, k, n, false, false);
  auto bw = [m, k, n](Node& self) {
    Node& A = *self.parents[0];
    Node& B = *self.parents[1];
    const double* g = self.grad.ptr();
    if (A.requires_grad) {
      A.ensure_grad();
      // dA = G * B^T
      matmul_acc_raw(g, B.value.ptr(), A.grad.ptr(), m, n, k, false, true);
    }
    if (B.requires_grad) {
      B.ensure_grad();
      // dB = A^T * G
      matmul_acc_raw(A.value.ptr(), g, B.grad.ptr(), k, m, n, true, false);
    }
  };
  return make_op(std::move(out), {a.node(), b.node()}, std::move(bw));
}

inline Var reshape(const Var& a, Shape s) {
  check(s.numel() == a.value().numel(),
        "reshape: element count mismatch " + a.shape().str() + " -> " + s.str());
  Tensor out(std::move(s), a.value().data);
  auto bw = [](Node& self) {
    Node& A = *self.parents[0];
    if (!A.requires_grad) return;
    A.ensure_grad();
    const std::int64_t n = self.value.numel();
    for (std::int64_t i = 0; i < n; ++i) A.grad[i] += self.grad[i];
  };
  return make_op(std::move(out), {a.node()}, std::move(bw));
}

inline Var transpose2d(const Var& a) {
  check(a.shape().rank() == 2, "transpose2d: rank-2 required, got " + a.shape().str());
  const std::int64_t m = a.shape()[0], n = a.shape()[1];
  Tensor out(Shape{n, m});
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) out[j * m + i] = a.value()[i * n + j];
  auto bw = [m, n](Node& self) {
    Node& A = *self.parents[0];
    if (!A.requires_grad) return;
    A.ensure_grad();
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j) A.grad[i * n + j] += self.grad[j * m + i];
  };
  return make_op(std::move(out), {a.node()}, std::move(bw));
}

// Contiguous block along one axis.
inline Var slice(const Var& a, int axis, std::int64_t start, std::int64_t len) {
  const Shape& s = a.shape();
  check(axis >= 0 && axis < s.rank(), "slice: bad axis");
  check(start >= 0 && len >= 1 && start + len <= s[axis],
        "slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
            ") out of bounds for " + s.str());
  Shape os = s;
  os.dims[static_cast<std::size_t>(axis)] = len;
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (int i = axis + 1; i < s.rank(); ++i) inner *= s[i];
  const std::int64_t d = s[axis];
  Tensor out(os);
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t j = 0; j < len; ++j)
      std::copy_n(a.value().ptr() + (o * d + start + j) * inner, inner,
                  out.ptr() + (o * len + j) * inner);
  auto bw = [outer, inner, d, start, len](Node& self) {
    Node& A = *self.parents[0];
    if (!A.requires_grad) return;
    A.ensure_grad();
    const double* g = self.grad.ptr();
    double* ga = A.grad.ptr();
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t j = 0; j < len; ++j) {
        const double* src = g + (o * len + j) * inner;
        double* dst = ga + (o * d + start + j) * inner;
        for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
      }
  };
  return make_op(std::move(out), {a.node()}, std::move(bw));
}

inline Var concat(const std::vector<Var>& xs, int axis) {
  check(!xs.empty(), "concat: empty input list");
  const Shape& s0 = xs[0].shape();
  check(axis >= 0 && axis < s0.rank(), "concat: bad axis");
  std::int64_t total = 0;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    check(s.rank() == s0.rank(), "concat: rank mismatch " + s.str() + " vs " + s0.str());
    for (int i = 0; i < s.rank(); ++i)
      if (i != axis)
        check(s[i] == s0[i], "concat: shape mismatch " + s.str() + " vs " + s0.str());
    total += s[axis];
  }
  Shape os = s0;
  os.dims[static_cast<std::size_t>(axis)] = total;
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s0[i];
  for (int i = axis + 1; i < s0.rank(); ++i) inner *= s0[i];
  Tensor out(os);
  std::vector<std::int64_t> sizes;
  std::vector<NodePtr> parents;
  for (const auto& x : xs) {
    sizes.push_back(x.shape()[axis]);
    parents.push_back(x.node());
  }
  std::int64_t off = 0;
  for (std::size_t p = 0; p < xs.size(); ++p) {
    const std::int64_t dp = sizes[p];
    const double* src = xs[p].value().ptr();
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy_n(src + o * dp * inner, dp * inner, out.ptr() + (o * total + off) * inner);
    off += dp;
  }
  auto bw = [outer, inner, total, sizes](Node& self) {
    std::int64_t off2 = 0;
    for (std::size_t p = 0; p < self.parents.size(); ++p) {
      Node& P = *self.parents[p];
      const std::int64_t dp = sizes[p];
      if (P.requires_grad) {
        P.ensure_grad();
        for (std::int64_t o = 0; o < outer; ++o) {
          const double* src = self.grad.ptr() + (o * total + off2) * inner;
          double* dst = P.grad.ptr() + o * dp * inner;
          for (std::int64_t i = 0; i < dp * inner; ++i) dst[i] += src[i];
        }
      }
      off2 += dp;
    }
  };
  return make_op(std::move(out), std::move(parents), std::move(bw));
}

inline Var softmax_rows(const Var& a) {
  check(a.shape().rank() == 2, "softmax_rows: rank-2 required, got " + a.shape().str());
  const std::int64_t m = a.shape()[0], n = a.shape()[1];
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < m; ++i) {
    const double* row = a.value().ptr() + i * n;
    double* orow = out.ptr() + i * n;
    double mx = row[0];
    for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::int64_t j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    const double inv = 1.0 / sum;
    for (std::int64_t j = 0; j < n; ++j) orow[j] *= inv;
  }
  auto bw = [m, n](Node& self) {
    Node& A = *self.parents[0];
    if (!A.requires_grad) return;
    A.ensure_grad();
    for (std::int64_t i = 0; i < m; ++i) {
      const double* y = self.value.ptr() + i * n;
      const double* g = self.grad.ptr() + i * n;
      double* ga = A.grad.ptr() + i * n;
      double dot = 0.0;
      for (std::int64_t j = 0; j < n; ++j) dot += g[j] * y[j];
      for (std::int64_t j = 0; j < n; ++j) ga[j] += y[j] * (g[j] - dot);
    }
  };
  return make_op(std::move(out), {a.node()}, std::move(bw));
}

inline Var sum(const Var& a) {
  Tensor out = Tensor::scalar(a.value().sum());
  const std::int64_t n = a.value().numel();
  auto bw = [n](Node& self) {
    Node& A = *self.parents[0];
    if (!A.requires_grad) return;
    A.ensure_grad();
    const double g = self.grad[0];
    for (std::int64_t i = 0; i < n; ++i) A.grad[i] += g;
  };
  return make_op(std::move(out), {a.node()}, std::move(bw));
}

inline Var mean(const Var& a) {
  const std::int64_t n = a.value().numel();
  Tensor out = Tensor::scalar(a.value().sum() / static_cast<double>(n));
  auto bw = [n](Node& self) {
    Node& A = *self.parents[0];
    if (!A.requires_grad) return;
    A.ensure_grad();
    const double g = self.grad[0] / static_cast<double>(n);
    for (std::int64_t i = 0; i < n; ++i) A.grad[i] += g;
  };
  return make_op(std::move(out), {a.node()}, std::move(bw));
}

}  // namespace fsaheat
