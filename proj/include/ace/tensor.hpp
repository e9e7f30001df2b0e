#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <functional>
#include <istream>
#include <limits>
#include <memory>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "ace/errors.hpp"

namespace ace {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string r = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) r += "x";
    r += std::to_string(s[i]);
  }
  return r + "]";
}

// One record in the reverse-mode graph: the op's output value, its gradient
// buffer, the input records it was computed from, and the rule that pushes
// this node's gradient into the inputs' gradients.
template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";

  std::size_t size() const { return value.size(); }

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

template <class T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Tensor from(Shape shape, std::vector<T> data) {
    if (numel(shape) != data.size())
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    return Tensor(std::move(n));
  }

  static Tensor zeros(Shape shape) {
    std::size_t n = numel(shape);
    return from(std::move(shape), std::vector<T>(n, T(0)));
  }

  static Tensor ones(Shape shape) {
    std::size_t n = numel(shape);
    return from(std::move(shape), std::vector<T>(n, T(1)));
  }

  static Tensor full(Shape shape, T v) {
    std::size_t n = numel(shape);
    return from(std::move(shape), std::vector<T>(n, v));
  }

  static Tensor scalar(T v) { return from({}, {v}); }

  // Leaf with requires_grad set; the usual constructor for parameters.
  static Tensor param(Shape shape, std::vector<T> data) {
    Tensor t = from(std::move(shape), std::move(data));
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }

  std::span<T> values() { return node_->value; }
  std::span<const T> values() const { return node_->value; }
  T* data() { return node_->value.data(); }
  const T* data() const { return node_->value.data(); }

  T item() const {
    if (size() != 1)
      throw ContractError("item() on tensor of size " + std::to_string(size()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    node_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> grad_mut() { return node_->grad; }
  void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }

  std::shared_ptr<Node<T>> node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// ---------------------------------------------------------------------------
// Op construction

// Builds a graph node for `value` computed from `inputs`. The backward rule is
// attached only when some input tracks gradients, so inference graphs carry no
// tape.
template <class T>
Tensor<T> make_op(const char* op, Shape out_shape, std::vector<T> value,
                  std::vector<Tensor<T>> inputs,
                  std::function<void(Node<T>&)> backward) {
  if (numel(out_shape) != value.size())
    throw ShapeError(std::string(op) + ": output buffer does not match shape");
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(out_shape);
  n->value = std::move(value);
  n->op = op;
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (const auto& in : inputs) n->parents.push_back(in.node());
    n->backward_fn = std::move(backward);
  }
  return Tensor<T>(std::move(n));
}

// ---------------------------------------------------------------------------
// Graph: topologically ordered records reachable from one output.

template <class T>
struct Graph {
  std::vector<std::shared_ptr<Node<T>>> order;  // inputs before outputs

  static Graph build(const Tensor<T>& out) {
    Graph g;
    std::unordered_set<const Node<T>*> seen;
    // Iterative post-order DFS over parent edges.
    struct Frame {
      std::shared_ptr<Node<T>> node;
      std::size_t next = 0;
    };
    std::vector<Frame> stack;
    if (out.node()->requires_grad) stack.push_back({out.node()});
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next == 0 && seen.count(f.node.get())) {
        stack.pop_back();
        continue;
      }
      if (f.next < f.node->parents.size()) {
        auto p = f.node->parents[f.next++];
        if (p->requires_grad && !seen.count(p.get()))
          stack.push_back({std::move(p)});
      } else {
        if (!seen.count(f.node.get())) {
          seen.insert(f.node.get());
          g.order.push_back(f.node);
        }
        stack.pop_back();
      }
    }
    return g;
  }

  // Seeds the final node with unit gradient and runs every backward rule once,
  // in reverse topological order.  Interior (op) gradients are per-call
  // scratch; leaf gradients accumulate across calls.
  void run_backward() {
    if (order.empty()) return;
    for (auto& n : order)
      if (n->backward_fn) n->grad.assign(n->value.size(), T(0));
    auto& out = *order.back();
    out.ensure_grad();
    for (T& g : out.grad) g += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>& n = **it;
      if (n.backward_fn) n.backward_fn(n);
    }
  }
};

template <class T>
void backward(const Tensor<T>& loss) {
  if (loss.size() != 1)
    throw ContractError("backward() requires a scalar loss, got shape " +
                        shape_str(loss.shape()));
  if (!loss.requires_grad())
    throw ContractError("backward() on a tensor that does not require grad");
  Graph<T>::build(loss).run_backward();
}

// ---------------------------------------------------------------------------
// Broadcasting helpers (numpy trailing-dimension rule)

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ShapeError("shapes " + shape_str(a) + " and " + shape_str(b) +
                       " are not broadcastable");
    out[i] = std::max(da, db);
  }
  return out;
}

// Strides of `shape` when expanded to `out`, zero on broadcast dims.
inline std::vector<std::size_t> broadcast_strides(const Shape& shape,
                                                  const Shape& out) {
  std::vector<std::size_t> st(out.size(), 0);
  std::size_t off = out.size() - shape.size();
  std::size_t run = 1;
  for (std::size_t i = shape.size(); i-- > 0;) {
    st[off + i] = (shape[i] == 1) ? 0 : run;
    run *= shape[i];
  }
  return st;
}

namespace detail {

// Applies fn(out_index, a_index, b_index) over the broadcast iteration space.
template <class F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& fn) {
  std::size_t n = numel(out);
  std::size_t r = out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t lin = 0; lin < n; ++lin) {
    fn(lin, ia, ib);
    for (std::size_t d = r; d-- > 0;) {
      idx[d]++;
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops

template <class T, class Fwd, class BwdA, class BwdB>
Tensor<T> binary_op(const char* name, const Tensor<T>& a, const Tensor<T>& b,
                    Fwd fwd, BwdA bwd_a, BwdB bwd_b) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape());
  auto sa = broadcast_strides(a.shape(), out_shape);
  auto sb = broadcast_strides(b.shape(), out_shape);
  std::vector<T> out(numel(out_shape));
  const T* pa = a.data();
  const T* pb = b.data();
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(pa[i], pb[i]);
  } else {
    detail::for_each_broadcast(out_shape, sa, sb,
                               [&](std::size_t o, std::size_t ia,
                                   std::size_t ib) { out[o] = fwd(pa[ia], pb[ib]); });
  }
  return make_op<T>(
      name, out_shape, std::move(out), {a, b},
      [sa, sb, bwd_a, bwd_b](Node<T>& self) {
        auto& na = *self.parents[0];
        auto& nb = *self.parents[1];
        const T* g = self.grad.data();
        if (na.requires_grad) na.ensure_grad();
        if (nb.requires_grad) nb.ensure_grad();
        detail::for_each_broadcast(
            self.shape, sa, sb,
            [&](std::size_t o, std::size_t ia, std::size_t ib) {
              if (na.requires_grad)
                na.grad[ia] += bwd_a(g[o], na.value[ia], nb.value[ib]);
              if (nb.requires_grad)
                nb.grad[ib] += bwd_b(g[o], na.value[ia], nb.value[ib]);
            });
      });
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "add", a, b, [](T x, T y) { return x + y; },
      [](T g, T, T) { return g; }, [](T g, T, T) { return g; });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "sub", a, b, [](T x, T y) { return x - y; },
      [](T g, T, T) { return g; }, [](T g, T, T) { return -g; });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "mul", a, b, [](T x, T y) { return x * y; },
      [](T g, T, T y) { return g * y; }, [](T g, T x, T) { return g * x; });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      "div", a, b, [](T x, T y) { return x / y; },
      [](T g, T, T y) { return g / y; },
      [](T g, T x, T y) { return -g * x / (y * y); });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops

template <class T, class Fwd, class Bwd>
Tensor<T> unary_op(const char* name, const Tensor<T>& a, Fwd fwd, Bwd bwd) {
  std::vector<T> out(a.size());
  const T* pa = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(pa[i]);
  return make_op<T>(name, a.shape(), std::move(out), {a},
                    [bwd](Node<T>& self) {
                      auto& na = *self.parents[0];
                      if (!na.requires_grad) return;
                      na.ensure_grad();
                      for (std::size_t i = 0; i < self.value.size(); ++i)
                        na.grad[i] +=
                            bwd(self.grad[i], na.value[i], self.value[i]);
                    });
}

// y = mul_c * x + add_c
template <class T>
Tensor<T> affine(const Tensor<T>& a, T mul_c, T add_c) {
  return unary_op<T>(
      "affine", a, [=](T x) { return mul_c * x + add_c; },
      [=](T g, T, T) { return g * mul_c; });
}

template <class T>
Tensor<T> neg(const Tensor<T>& a) {
  return affine(a, T(-1), T(0));
}

template <class T>
Tensor<T> exp(const Tensor<T>& a) {
  return unary_op<T>(
      "exp", a, [](T x) { return std::exp(x); },
      [](T g, T, T y) { return g * y; });
}

// Epsilon clamp below which log flattens; keeps Bernoulli terms finite.
inline constexpr double kLogEps = 1e-7;

// ln(max(x, eps)); gradient is zero on the clamped region.
template <class T>
Tensor<T> log(const Tensor<T>& a) {
  const T eps = T(kLogEps);
  return unary_op<T>(
      "log", a, [=](T x) { return std::log(x < eps ? eps : x); },
      [=](T g, T x, T) { return x < eps ? T(0) : g / x; });
}

// Subgradient 0 at x == 0.
template <class T>
Tensor<T> abs(const Tensor<T>& a) {
  return unary_op<T>(
      "abs", a, [](T x) { return std::abs(x); },
      [](T g, T x, T) { return x > 0 ? g : (x < 0 ? -g : T(0)); });
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary_op<T>(
      "relu", a, [](T x) { return x > 0 ? x : T(0); },
      [](T g, T x, T) { return x > 0 ? g : T(0); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary_op<T>(
      "sigmoid", a,
      [](T x) {
        return x >= 0 ? T(1) / (T(1) + std::exp(-x))
                      : std::exp(x) / (T(1) + std::exp(x));
      },
      [](T g, T, T y) { return g * y * (T(1) - y); });
}

template <class T>
Tensor<T> tanh(const Tensor<T>& a) {
  return unary_op<T>(
      "tanh", a, [](T x) { return std::tanh(x); },
      [](T g, T, T y) { return g * (T(1) - y * y); });
}

template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <class T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <class T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }
template <class T>
Tensor<T> operator+(const Tensor<T>& a, T c) { return affine(a, T(1), c); }
template <class T>
Tensor<T> operator-(const Tensor<T>& a, T c) { return affine(a, T(1), -c); }
template <class T>
Tensor<T> operator*(const Tensor<T>& a, T c) { return affine(a, c, T(0)); }
template <class T>
Tensor<T> operator*(T c, const Tensor<T>& a) { return affine(a, c, T(0)); }
template <class T>
Tensor<T> operator-(const Tensor<T>& a) { return neg(a); }

// ---------------------------------------------------------------------------
// Matrix ops

namespace detail {

template <class T>
void mm_accum(const T* A, const T* B, T* C, std::size_t M, std::size_t K,
              std::size_t N) {
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(M); ++i) {
    T* crow = C + i * N;
    const T* arow = A + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      T a = arow[k];
      if (a == T(0)) continue;
      const T* brow = B + k * N;
      for (std::size_t j = 0; j < N; ++j) crow[j] += a * brow[j];
    }
  }
}

// C[i,k] += sum_j G[i,j] * B[k,j]   (i.e. C += G * B^T)
template <class T>
void mm_abt_accum(const T* G, const T* B, T* C, std::size_t M, std::size_t N,
                  std::size_t K) {
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(M); ++i) {
    const T* grow = G + i * N;
    T* crow = C + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const T* brow = B + k * N;
      T acc = T(0);
      for (std::size_t j = 0; j < N; ++j) acc += grow[j] * brow[j];
      crow[k] += acc;
    }
  }
}

// C[k,j] += sum_i A[i,k] * G[i,j]   (i.e. C += A^T * G)
template <class T>
void mm_atb_accum(const T* A, const T* G, T* C, std::size_t M, std::size_t K,
                  std::size_t N) {
#pragma omp parallel for schedule(static)
  for (long long k = 0; k < static_cast<long long>(K); ++k) {
    T* crow = C + k * N;
    for (std::size_t i = 0; i < M; ++i) {
      T a = A[i * K + k];
      if (a == T(0)) continue;
      const T* grow = G + i * N;
      for (std::size_t j = 0; j < N; ++j) crow[j] += a * grow[j];
    }
  }
}

}  // namespace detail

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul expects rank-2 tensors, got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  std::size_t M = a.shape()[0], K = a.shape()[1];
  std::size_t K2 = b.shape()[0], N = b.shape()[1];
  if (K != K2)
    throw ShapeError("matmul inner extents disagree: " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  std::vector<T> out(M * N, T(0));
  detail::mm_accum(a.data(), b.data(), out.data(), M, K, N);
  return make_op<T>("matmul", {M, N}, std::move(out), {a, b},
                    [M, K, N](Node<T>& self) {
                      auto& na = *self.parents[0];
                      auto& nb = *self.parents[1];
                      const T* g = self.grad.data();
                      if (na.requires_grad) {
                        na.ensure_grad();
                        detail::mm_abt_accum(g, nb.value.data(), na.grad.data(),
                                             M, N, K);
                      }
                      if (nb.requires_grad) {
                        nb.ensure_grad();
                        detail::mm_atb_accum(na.value.data(), g,
                                             nb.grad.data(), M, K, N);
                      }
                    });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2)
    throw ShapeError("transpose expects rank-2, got " + shape_str(a.shape()));
  std::size_t M = a.shape()[0], N = a.shape()[1];
  std::vector<T> out(M * N);
  const T* p = a.data();
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < N; ++j) out[j * M + i] = p[i * N + j];
  return make_op<T>("transpose", {N, M}, std::move(out), {a},
                    [M, N](Node<T>& self) {
                      auto& na = *self.parents[0];
                      if (!na.requires_grad) return;
                      na.ensure_grad();
                      for (std::size_t i = 0; i < M; ++i)
                        for (std::size_t j = 0; j < N; ++j)
                          na.grad[i * N + j] += self.grad[j * M + i];
                    });
}

// ---------------------------------------------------------------------------
// Reductions

enum class Reduce { sum, mean, max };

namespace detail {

inline void normalize_axes(std::vector<std::size_t>& axes, std::size_t rank) {
  if (axes.empty()) {
    axes.resize(rank);
    std::iota(axes.begin(), axes.end(), std::size_t(0));
  }
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  for (std::size_t a : axes)
    if (a >= rank) throw ShapeError("reduce axis " + std::to_string(a) +
                                    " out of range for rank " +
                                    std::to_string(rank));
}

}  // namespace detail

// Reduces `a` over `axes` (all axes when empty). Reduced dims are dropped, or
// kept as 1 with keepdims. max routes gradient to the first maximal element of
// each group.
template <class T>
Tensor<T> reduce(Reduce op, const Tensor<T>& a, std::vector<std::size_t> axes = {},
                 bool keepdims = false) {
  const Shape& in = a.shape();
  detail::normalize_axes(axes, in.size());
  std::vector<bool> reduced(in.size(), false);
  for (std::size_t ax : axes) reduced[ax] = true;

  Shape out_shape;
  std::size_t group = 1;
  for (std::size_t d = 0; d < in.size(); ++d) {
    if (reduced[d]) {
      group *= in[d];
      if (keepdims) out_shape.push_back(1);
    } else {
      out_shape.push_back(in[d]);
    }
  }
  if (group == 0)
    throw DomainError("reduce over empty group, shape " + shape_str(in));

  std::size_t out_n = numel(out_shape);
  // Map each input linear index to its output group.
  std::vector<std::size_t> in_strides(in.size(), 1);
  for (std::size_t d = in.size(); d-- > 1;)
    in_strides[d - 1] = in_strides[d] * in[d];
  std::vector<std::size_t> out_stride_of_dim(in.size(), 0);
  {
    std::size_t run = 1;
    for (std::size_t d = in.size(); d-- > 0;) {
      if (!reduced[d]) {
        out_stride_of_dim[d] = run;
        run *= in[d];
      }
    }
  }
  auto group_of = [in, in_strides, out_stride_of_dim](std::size_t lin) {
    std::size_t g = 0;
    for (std::size_t d = 0; d < in.size(); ++d) {
      std::size_t c = (lin / in_strides[d]) % in[d];
      g += c * out_stride_of_dim[d];
    }
    return g;
  };

  const T* p = a.data();
  std::vector<T> out;
  std::vector<std::size_t> argmax;
  if (op == Reduce::max) {
    out.assign(out_n, -std::numeric_limits<T>::infinity());
    argmax.assign(out_n, 0);
    for (std::size_t i = 0; i < a.size(); ++i) {
      std::size_t g = group_of(i);
      if (p[i] > out[g]) {
        out[g] = p[i];
        argmax[g] = i;
      }
    }
  } else {
    out.assign(out_n, T(0));
    for (std::size_t i = 0; i < a.size(); ++i) out[group_of(i)] += p[i];
    if (op == Reduce::mean)
      for (T& v : out) v /= static_cast<T>(group);
  }

  const char* name = op == Reduce::sum ? "sum" : (op == Reduce::mean ? "mean" : "max");
  return make_op<T>(
      name, out_shape, std::move(out), {a},
      [op, group, group_of, argmax, n = a.size()](Node<T>& self) {
        auto& na = *self.parents[0];
        if (!na.requires_grad) return;
        na.ensure_grad();
        if (op == Reduce::max) {
          for (std::size_t g = 0; g < self.value.size(); ++g)
            na.grad[argmax[g]] += self.grad[g];
        } else {
          T scale = op == Reduce::mean ? T(1) / static_cast<T>(group) : T(1);
          for (std::size_t i = 0; i < n; ++i)
            na.grad[i] += self.grad[group_of(i)] * scale;
        }
      });
}

template <class T>
Tensor<T> sum(const Tensor<T>& a, std::vector<std::size_t> axes = {},
              bool keepdims = false) {
  return reduce(Reduce::sum, a, std::move(axes), keepdims);
}
template <class T>
Tensor<T> mean(const Tensor<T>& a, std::vector<std::size_t> axes = {},
               bool keepdims = false) {
  return reduce(Reduce::mean, a, std::move(axes), keepdims);
}
template <class T>
Tensor<T> max(const Tensor<T>& a, std::vector<std::size_t> axes = {},
              bool keepdims = false) {
  return reduce(Reduce::max, a, std::move(axes), keepdims);
}

// ---------------------------------------------------------------------------
// Shape and indexing ops

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.size())
    throw ShapeError("reshape " + shape_str(a.shape()) + " -> " +
                     shape_str(shape) + " changes element count");
  std::vector<T> out(a.values().begin(), a.values().end());
  return make_op<T>("reshape", std::move(shape), std::move(out), {a},
                    [](Node<T>& self) {
                      auto& na = *self.parents[0];
                      if (!na.requires_grad) return;
                      na.ensure_grad();
                      for (std::size_t i = 0; i < self.value.size(); ++i)
                        na.grad[i] += self.grad[i];
                    });
}

// Selects rows along axis 0. Duplicate indices are allowed; backward
// accumulates.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& a, std::vector<std::size_t> idx) {
  if (a.rank() < 1) throw ShapeError("gather_rows on scalar");
  std::size_t rows = a.shape()[0];
  std::size_t rowsz = a.size() / std::max<std::size_t>(rows, 1);
  for (std::size_t r : idx)
    if (r >= rows)
      throw ContractError("gather_rows index " + std::to_string(r) +
                          " out of range " + std::to_string(rows));
  Shape out_shape = a.shape();
  out_shape[0] = idx.size();
  std::vector<T> out(idx.size() * rowsz);
  const T* p = a.data();
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(p + idx[i] * rowsz, rowsz, out.data() + i * rowsz);
  return make_op<T>("gather_rows", std::move(out_shape), std::move(out), {a},
                    [idx = std::move(idx), rowsz](Node<T>& self) {
                      auto& na = *self.parents[0];
                      if (!na.requires_grad) return;
                      na.ensure_grad();
                      for (std::size_t i = 0; i < idx.size(); ++i)
                        for (std::size_t j = 0; j < rowsz; ++j)
                          na.grad[idx[i] * rowsz + j] +=
                              self.grad[i * rowsz + j];
                    });
}

// Adjoint of gather_rows: places row i of `rows` at out_rows[idx[i]], zeros
// elsewhere, accumulating on duplicate indices.
template <class T>
Tensor<T> scatter_rows(const Tensor<T>& rows, const std::vector<std::size_t>& idx,
                       std::size_t out_rows) {
  if (rows.rank() < 1 || rows.shape()[0] != idx.size())
    throw ShapeError("scatter_rows: row count does not match index count");
  std::size_t rowsz = rows.size() / std::max<std::size_t>(idx.size(), 1);
  for (std::size_t r : idx)
    if (r >= out_rows)
      throw ContractError("scatter_rows index out of range");
  Shape out_shape = rows.shape();
  out_shape[0] = out_rows;
  std::vector<T> out(out_rows * rowsz, T(0));
  const T* p = rows.data();
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = 0; j < rowsz; ++j)
      out[idx[i] * rowsz + j] += p[i * rowsz + j];
  return make_op<T>("scatter_rows", std::move(out_shape), std::move(out), {rows},
                    [idx, rowsz](Node<T>& self) {
                      auto& na = *self.parents[0];
                      if (!na.requires_grad) return;
                      na.ensure_grad();
                      for (std::size_t i = 0; i < idx.size(); ++i)
                        for (std::size_t j = 0; j < rowsz; ++j)
                          na.grad[i * rowsz + j] +=
                              self.grad[idx[i] * rowsz + j];
                    });
}

// Per-row block gather: out[i, :] = x[i, labels[i]*block : (labels[i]+1)*block].
// Used to pick one class's slice out of a per-class packed head.
template <class T>
Tensor<T> select_block(const Tensor<T>& x, const std::vector<std::size_t>& labels,
                       std::size_t block) {
  if (x.rank() != 2) throw ShapeError("select_block expects rank-2");
  std::size_t B = x.shape()[0], W = x.shape()[1];
  if (labels.size() != B)
    throw ShapeError("select_block: label count does not match batch");
  for (std::size_t l : labels)
    if ((l + 1) * block > W)
      throw ContractError("select_block: label slice out of range");
  std::vector<T> out(B * block);
  const T* p = x.data();
  for (std::size_t i = 0; i < B; ++i)
    std::copy_n(p + i * W + labels[i] * block, block, out.data() + i * block);
  return make_op<T>("select_block", {B, block}, std::move(out), {x},
                    [labels, block, W](Node<T>& self) {
                      auto& na = *self.parents[0];
                      if (!na.requires_grad) return;
                      na.ensure_grad();
                      std::size_t B = self.shape[0];
                      for (std::size_t i = 0; i < B; ++i)
                        for (std::size_t j = 0; j < block; ++j)
                          na.grad[i * W + labels[i] * block + j] +=
                              self.grad[i * block + j];
                    });
}

// ---------------------------------------------------------------------------
// Binary dump/load. All header words little-endian:
//   u64 rank, u64 extents[rank], then raw IEEE-754 scalars.

static_assert(std::endian::native == std::endian::little,
              "tensor dump/load assumes a little-endian host");

template <class T>
void dump_tensor(const Tensor<T>& t, std::ostream& os) {
  std::uint64_t rank = t.rank();
  os.write(reinterpret_cast<const char*>(&rank), 8);
  for (std::size_t d : t.shape()) {
    std::uint64_t e = d;
    os.write(reinterpret_cast<const char*>(&e), 8);
  }
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.size() * sizeof(T)));
}

template <class T>
Tensor<T> load_tensor(std::istream& is) {
  std::uint64_t rank = 0;
  is.read(reinterpret_cast<char*>(&rank), 8);
  if (!is) throw FormatError("tensor load: truncated header");
  if (rank > 16) throw FormatError("tensor load: implausible rank");
  Shape shape(rank);
  for (auto& d : shape) {
    std::uint64_t e = 0;
    is.read(reinterpret_cast<char*>(&e), 8);
    if (!is) throw FormatError("tensor load: truncated extents");
    d = static_cast<std::size_t>(e);
  }
  std::vector<T> data(numel(shape));
  is.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(T)));
  if (!is) throw FormatError("tensor load: truncated payload");
  return Tensor<T>::from(std::move(shape), std::move(data));
}

}  // namespace ace
