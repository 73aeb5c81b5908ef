#include "skupatch/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <limits>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "gemm.hpp"
#include "skupatch/errors.hpp"

namespace skupatch {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {
thread_local bool t_grad_enabled = true;
std::atomic<bool> g_finite_checks{false};
}  // namespace

bool grad_enabled() { return t_grad_enabled; }
NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

void set_finite_checks(bool enabled) { g_finite_checks.store(enabled); }
bool finite_checks() { return g_finite_checks.load(); }

// ---------------------------------------------------------------------------
// Tensor handle

template <class T>
Tensor<T>::Tensor(Shape shape, T fill) : node_(std::make_shared<Node<T>>()) {
  node_->value.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
}

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<Node<T>>()) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
}

template <class T>
Tensor<T> Tensor<T>::parameter(Shape shape, std::vector<T> values) {
  Tensor t(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

template <class T>
std::size_t Tensor<T>::rows() const {
  if (rank() != 2) throw DimensionError("rows() needs a 2D tensor, got " + shape_str(shape()));
  return node_->shape[0];
}

template <class T>
std::size_t Tensor<T>::cols() const {
  if (rank() != 2) throw DimensionError("cols() needs a 2D tensor, got " + shape_str(shape()));
  return node_->shape[1];
}

template <class T>
Tensor<T>& Tensor<T>::set_requires_grad(bool flag) {
  node_->requires_grad = flag;
  return *this;
}

template <class T>
void Tensor<T>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <class T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(node_->shape, node_->value);
}

template <class T>
T Tensor<T>::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

// ---------------------------------------------------------------------------
// Graph plumbing

namespace {

template <class T>
using BackwardFn = std::function<void(Node<T>&)>;

template <class T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::initializer_list<const Tensor<T>*> inputs, BackwardFn<T> fn) {
  auto node = std::make_shared<Node<T>>();
  node->op = op;
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (finite_checks()) {
    for (T v : node->value) {
      if (!std::isfinite(v)) throw NumericalError(std::string("non-finite value produced by ") + op);
    }
  }
  if (grad_enabled()) {
    bool any = false;
    for (const auto* in : inputs) any = any || (in && in->defined() && in->requires_grad());
    if (any) {
      node->requires_grad = true;
      for (const auto* in : inputs) {
        node->parents.push_back(in && in->defined() ? in->node_ptr() : nullptr);
      }
      node->backward = std::move(fn);
    }
  }
  return Tensor<T>::from_node(std::move(node));
}

template <class T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::span<const Tensor<T>> inputs, BackwardFn<T> fn) {
  auto node = std::make_shared<Node<T>>();
  node->op = op;
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const auto& in : inputs) node->parents.push_back(in.node_ptr());
      node->backward = std::move(fn);
    }
  }
  return Tensor<T>::from_node(std::move(node));
}

/// Gradient buffer of parent `i` if it wants one, else null.
template <class T>
T* grad_of(Node<T>& self, std::size_t i) {
  auto& p = self.parents[i];
  if (!p || !p->requires_grad) return nullptr;
  return p->grad_buffer().data();
}

template <class T>
const T* value_of(Node<T>& self, std::size_t i) {
  return self.parents[i]->value.data();
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw DimensionError(msg);
}

template <class T>
void require_2d(const Tensor<T>& t, const char* op) {
  require(t.defined() && t.rank() == 2, std::string(op) + ": expected a 2D tensor");
}

template <class T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
}

}  // namespace

template <class T>
std::vector<Node<T>*> computation_record(const Tensor<T>& root) {
  std::vector<Node<T>*> order;
  if (!root.defined() || !root.requires_grad()) return order;
  std::unordered_set<Node<T>*> visited;
  // Iterative post-order DFS.
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node(), 0}};
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p && p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

template <class T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw UsageError("backward() needs a scalar loss");
  }
  const auto order = computation_record(loss);
  if (order.empty()) return;
  loss.node()->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (!node->backward || node->grad.empty()) continue;
    node->backward(*node);
    // Intermediate adjoints are consumed exactly once.
    node->grad.clear();
    node->grad.shrink_to_fit();
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  require(b.rows() == k, "matmul: inner dimensions " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()) + " disagree");
  std::vector<T> out(m * n, T(0));
  detail::gemm<T>(false, false, m, n, k, T(1), a.data().data(), k, b.data().data(), n, T(0),
                  out.data(), n);
  return make_result<T>("matmul", {m, n}, std::move(out), {&a, &b}, [m, k, n](Node<T>& self) {
    const T* g = self.grad.data();
    if (T* ga = grad_of(self, 0)) {
      detail::gemm<T>(false, true, m, k, n, T(1), g, n, value_of(self, 1), n, T(1), ga, k);
    }
    if (T* gb = grad_of(self, 1)) {
      detail::gemm<T>(true, false, k, n, m, T(1), value_of(self, 0), k, g, n, T(1), gb, n);
    }
  });
}

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  require_2d(x, "linear");
  require_2d(w, "linear");
  const std::size_t n = x.rows(), in = x.cols(), out_dim = w.cols();
  require(w.rows() == in, "linear: input width " + std::to_string(in) + " vs weight " +
                              shape_str(w.shape()));
  std::vector<T> out(n * out_dim, T(0));
  if (bias.defined()) {
    require(bias.numel() == out_dim, "linear: bias size mismatch");
    const T* b = bias.data().data();
    for (std::size_t i = 0; i < n; ++i) std::copy(b, b + out_dim, out.data() + i * out_dim);
  }
  detail::gemm<T>(false, false, n, out_dim, in, T(1), x.data().data(), in, w.data().data(), out_dim,
                  bias.defined() ? T(1) : T(0), out.data(), out_dim);
  return make_result<T>(
      "linear", {n, out_dim}, std::move(out), {&x, &w, &bias}, [n, in, out_dim](Node<T>& self) {
        const T* g = self.grad.data();
        if (T* gx = grad_of(self, 0)) {
          detail::gemm<T>(false, true, n, in, out_dim, T(1), g, out_dim, value_of(self, 1), out_dim,
                          T(1), gx, in);
        }
        if (T* gw = grad_of(self, 1)) {
          detail::gemm<T>(true, false, in, out_dim, n, T(1), value_of(self, 0), in, g, out_dim,
                          T(1), gw, out_dim);
        }
        if (T* gb = grad_of(self, 2)) {
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < out_dim; ++j) gb[j] += g[i * out_dim + j];
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  return make_result<T>("add", a.shape(), std::move(out), {&a, &b}, [](Node<T>& self) {
    const std::size_t n = self.grad.size();
    for (std::size_t p = 0; p < 2; ++p) {
      if (T* gp = grad_of(self, p)) {
        for (std::size_t i = 0; i < n; ++i) gp[i] += self.grad[i];
      }
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  return make_result<T>("sub", a.shape(), std::move(out), {&a, &b}, [](Node<T>& self) {
    const std::size_t n = self.grad.size();
    if (T* ga = grad_of(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[i];
    }
    if (T* gb = grad_of(self, 1)) {
      for (std::size_t i = 0; i < n; ++i) gb[i] -= self.grad[i];
    }
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  return make_result<T>("mul", a.shape(), std::move(out), {&a, &b}, [](Node<T>& self) {
    const std::size_t n = self.grad.size();
    if (T* ga = grad_of(self, 0)) {
      const T* bv = value_of(self, 1);
      for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[i] * bv[i];
    }
    if (T* gb = grad_of(self, 1)) {
      const T* av = value_of(self, 0);
      for (std::size_t i = 0; i < n; ++i) gb[i] += self.grad[i] * av[i];
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * factor;
  return make_result<T>("scale", a.shape(), std::move(out), {&a}, [factor](Node<T>& self) {
    if (T* ga = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * factor;
    }
  });
}

template <class T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  require_2d(x, "add_bias");
  const std::size_t n = x.rows(), c = x.cols();
  require(bias.numel() == c, "add_bias: bias size mismatch");
  std::vector<T> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bias.at(j);
  }
  return make_result<T>("add_bias", x.shape(), std::move(out), {&x, &bias}, [n, c](Node<T>& self) {
    if (T* gx = grad_of(self, 0)) {
      for (std::size_t i = 0; i < n * c; ++i) gx[i] += self.grad[i];
    }
    if (T* gb = grad_of(self, 1)) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < c; ++j) gb[j] += self.grad[i * c + j];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Layout

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_2d(a, "transpose");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<T> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a.at(i * c + j);
  }
  return make_result<T>("transpose", {c, r}, std::move(out), {&a}, [r, c](Node<T>& self) {
    if (T* ga = grad_of(self, 0)) {
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += self.grad[j * r + i];
      }
    }
  });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  require(shape_numel(shape) == a.numel(),
          "reshape: " + shape_str(a.shape()) + " cannot become " + shape_str(shape));
  std::vector<T> out(a.data().begin(), a.data().end());
  return make_result<T>("reshape", std::move(shape), std::move(out), {&a}, [](Node<T>& self) {
    if (T* ga = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    }
  });
}

template <class T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis) {
  if (parts.empty()) throw UsageError("concat: no inputs");
  require(axis < 2, "concat: axis must be 0 or 1");
  for (const auto& p : parts) require_2d(p, "concat");
  const std::size_t other = axis == 0 ? parts[0].cols() : parts[0].rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    require((axis == 0 ? p.cols() : p.rows()) == other, "concat: incompatible part shapes");
    total += axis == 0 ? p.rows() : p.cols();
  }
  const std::size_t rows = axis == 0 ? total : other;
  const std::size_t cols = axis == 0 ? other : total;
  std::vector<T> out(rows * cols);
  std::vector<std::size_t> extents;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t pr = p.rows(), pc = p.cols();
    for (std::size_t i = 0; i < pr; ++i) {
      for (std::size_t j = 0; j < pc; ++j) {
        const std::size_t r = axis == 0 ? offset + i : i;
        const std::size_t c = axis == 0 ? j : offset + j;
        out[r * cols + c] = p.at(i * pc + j);
      }
    }
    extents.push_back(axis == 0 ? pr : pc);
    offset += extents.back();
  }
  return make_result<T>(
      "concat", {rows, cols}, std::move(out), parts,
      [axis, cols, other, extents](Node<T>& self) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < extents.size(); ++p) {
          const std::size_t pr = axis == 0 ? extents[p] : other;
          const std::size_t pc = axis == 0 ? other : extents[p];
          if (T* gp = grad_of(self, p)) {
            for (std::size_t i = 0; i < pr; ++i) {
              for (std::size_t j = 0; j < pc; ++j) {
                const std::size_t r = axis == 0 ? offset + i : i;
                const std::size_t c = axis == 0 ? j : offset + j;
                gp[i * pc + j] += self.grad[r * cols + c];
              }
            }
          }
          offset += extents[p];
        }
      });
}

template <class T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  require_2d(a, "slice_cols");
  const std::size_t r = a.rows(), c = a.cols();
  require(begin <= end && end <= c, "slice_cols: range out of bounds");
  const std::size_t w = end - begin;
  std::vector<T> out(r * w);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = a.at(i * c + begin + j);
  }
  return make_result<T>("slice_cols", {r, w}, std::move(out), {&a}, [r, c, w, begin](Node<T>& self) {
    if (T* ga = grad_of(self, 0)) {
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < w; ++j) ga[i * c + begin + j] += self.grad[i * w + j];
      }
    }
  });
}

template <class T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  require_2d(a, "slice_rows");
  const std::size_t c = a.cols();
  require(begin <= end && end <= a.rows(), "slice_rows: range out of bounds");
  std::vector<T> out(a.data().begin() + begin * c, a.data().begin() + end * c);
  return make_result<T>("slice_rows", {end - begin, c}, std::move(out), {&a},
                        [begin, c](Node<T>& self) {
                          if (T* ga = grad_of(self, 0)) {
                            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                              ga[begin * c + i] += self.grad[i];
                            }
                          }
                        });
}

template <class T>
Tensor<T> gather_rows(const Tensor<T>& a, std::span<const std::size_t> rows) {
  require_2d(a, "gather_rows");
  const std::size_t c = a.cols(), n = a.rows();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<T> out(idx.size() * c);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] < n, "gather_rows: index out of range");
    std::copy_n(a.data().begin() + idx[i] * c, c, out.begin() + i * c);
  }
  const std::size_t count = idx.size();
  return make_result<T>("gather_rows", {count, c}, std::move(out), {&a},
                        [idx = std::move(idx), c](Node<T>& self) {
                          if (T* ga = grad_of(self, 0)) {
                            for (std::size_t i = 0; i < idx.size(); ++i) {
                              for (std::size_t j = 0; j < c; ++j) ga[idx[i] * c + j] += self.grad[i * c + j];
                            }
                          }
                        });
}

// ---------------------------------------------------------------------------
// Nonlinearities

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) > T(0) ? a.at(i) : T(0);
  return make_result<T>("relu", a.shape(), std::move(out), {&a}, [](Node<T>& self) {
    if (T* ga = grad_of(self, 0)) {
      const T* x = value_of(self, 0);
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if (x[i] > T(0)) ga[i] += self.grad[i];
      }
    }
  });
}

template <class T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = a.at(i);
    out[i] = T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2));
  }
  return make_result<T>("gelu", a.shape(), std::move(out), {&a}, [](Node<T>& self) {
    if (T* ga = grad_of(self, 0)) {
      constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
      const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
      const T* x = value_of(self, 0);
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const T cdf = T(0.5) * (T(1) + std::erf(x[i] * inv_sqrt2));
        const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * x[i] * x[i]);
        ga[i] += self.grad[i] * (cdf + x[i] * pdf);
      }
    }
  });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-a.at(i)));
  return make_result<T>("sigmoid", a.shape(), std::move(out), {&a}, [](Node<T>& self) {
    if (T* ga = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const T s = self.value[i];
        ga[i] += self.grad[i] * s * (T(1) - s);
      }
    }
  });
}

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  require_2d(x, "layer_norm");
  const std::size_t n = x.rows(), c = x.cols();
  if (gamma.defined()) require(gamma.numel() == c, "layer_norm: gamma size mismatch");
  if (beta.defined()) require(beta.numel() == c, "layer_norm: beta size mismatch");
  auto xhat = std::make_shared<std::vector<T>>(n * c);
  auto inv_std = std::make_shared<std::vector<T>>(n);
  std::vector<T> out(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = x.data().data() + i * c;
    T mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= T(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= T(c);
    const T inv = T(1) / std::sqrt(var + eps);
    (*inv_std)[i] = inv;
    for (std::size_t j = 0; j < c; ++j) {
      const T h = (row[j] - mu) * inv;
      (*xhat)[i * c + j] = h;
      out[i * c + j] = h * (gamma.defined() ? gamma.at(j) : T(1)) + (beta.defined() ? beta.at(j) : T(0));
    }
  }
  const bool has_gamma = gamma.defined();
  return make_result<T>(
      "layer_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
      [n, c, xhat, inv_std, has_gamma](Node<T>& self) {
        const T* g = self.grad.data();
        const T* gam = has_gamma ? value_of(self, 1) : nullptr;
        if (T* gx = grad_of(self, 0)) {
          std::vector<T> dh(c);
          for (std::size_t i = 0; i < n; ++i) {
            T mean_dh = 0, mean_dh_h = 0;
            for (std::size_t j = 0; j < c; ++j) {
              dh[j] = g[i * c + j] * (gam ? gam[j] : T(1));
              mean_dh += dh[j];
              mean_dh_h += dh[j] * (*xhat)[i * c + j];
            }
            mean_dh /= T(c);
            mean_dh_h /= T(c);
            for (std::size_t j = 0; j < c; ++j) {
              gx[i * c + j] += (*inv_std)[i] * (dh[j] - mean_dh - (*xhat)[i * c + j] * mean_dh_h);
            }
          }
        }
        if (T* gg = grad_of(self, 1)) {
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < c; ++j) gg[j] += g[i * c + j] * (*xhat)[i * c + j];
          }
        }
        if (T* gb = grad_of(self, 2)) {
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = 0;
  for (T v : a.data()) s += v;
  return make_result<T>("sum", {1}, {s}, {&a}, [](Node<T>& self) {
    if (T* ga = grad_of(self, 0)) {
      const std::size_t n = self.parents[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[0];
    }
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.numel() == 0) throw UsageError("mean of an empty tensor");
  T s = 0;
  for (T v : a.data()) s += v;
  const T inv = T(1) / T(a.numel());
  return make_result<T>("mean", {1}, {s * inv}, {&a}, [inv](Node<T>& self) {
    if (T* ga = grad_of(self, 0)) {
      const std::size_t n = self.parents[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[0] * inv;
    }
  });
}

template <class T>
Tensor<T> softmax(const Tensor<T>& a, std::size_t axis) {
  require(axis < a.rank(), "softmax: axis out of range");
  const auto& shape = a.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t n = shape[axis];
  std::vector<T> out(a.numel());
  const T* x = a.data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      T mx = x[base];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[base + j * inner]);
      T z = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const T e = std::exp(x[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= z;
    }
  }
  return make_result<T>("softmax", shape, std::move(out), {&a}, [outer, inner, n](Node<T>& self) {
    if (T* ga = grad_of(self, 0)) {
      const T* y = self.value.data();
      const T* g = self.grad.data();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * n * inner + in;
          T dot = 0;
          for (std::size_t j = 0; j < n; ++j) dot += g[base + j * inner] * y[base + j * inner];
          for (std::size_t j = 0; j < n; ++j) {
            ga[base + j * inner] += y[base + j * inner] * (g[base + j * inner] - dot);
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Grid operations

template <class T>
Tensor<T> avg_pool2x2(const Tensor<T>& x, GridShape grid) {
  require_2d(x, "avg_pool2x2");
  require(x.rows() == grid.count(), "avg_pool2x2: token count does not match grid");
  require(grid.rows % 2 == 0 && grid.cols % 2 == 0 && grid.rows > 0 && grid.cols > 0,
          "avg_pool2x2: grid sides must be even");
  const std::size_t c = x.cols(), orow = grid.rows / 2, ocol = grid.cols / 2;
  std::vector<T> out(orow * ocol * c, T(0));
  for (std::size_t r = 0; r < grid.rows; ++r) {
    for (std::size_t q = 0; q < grid.cols; ++q) {
      const T* src = x.data().data() + (r * grid.cols + q) * c;
      T* dst = out.data() + ((r / 2) * ocol + q / 2) * c;
      for (std::size_t j = 0; j < c; ++j) dst[j] += T(0.25) * src[j];
    }
  }
  return make_result<T>("avg_pool2x2", {orow * ocol, c}, std::move(out), {&x},
                        [grid, c, ocol](Node<T>& self) {
                          if (T* gx = grad_of(self, 0)) {
                            for (std::size_t r = 0; r < grid.rows; ++r) {
                              for (std::size_t q = 0; q < grid.cols; ++q) {
                                T* dst = gx + (r * grid.cols + q) * c;
                                const T* g = self.grad.data() + ((r / 2) * ocol + q / 2) * c;
                                for (std::size_t j = 0; j < c; ++j) dst[j] += T(0.25) * g[j];
                              }
                            }
                          }
                        });
}

namespace {

/// Interpolation stencil along one axis for a normalized coordinate.
template <class T>
struct AxisStencil {
  std::size_t lo = 0, hi = 0;
  T frac = 0;
  T dsrc = 0;  // d(source coordinate)/d(normalized coordinate); 0 where clamped
};

template <class T>
AxisStencil<T> axis_stencil(T u, std::size_t extent) {
  AxisStencil<T> s;
  bool clamped = false;
  if (u < T(0)) { u = T(0); clamped = true; }
  if (u > T(1)) { u = T(1); clamped = true; }
  T src = u * T(extent) - T(0.5);
  const T nearest = std::round(src);
  if (std::abs(src - nearest) <= T(16) * std::numeric_limits<T>::epsilon() * std::max(T(1), std::abs(src))) {
    src = nearest;
  }
  const T top = T(extent - 1);
  if (src <= T(0)) {
    if (src < T(0)) clamped = true;
    src = T(0);
  }
  if (src >= top) {
    if (src > top) clamped = true;
    src = top;
  }
  s.lo = static_cast<std::size_t>(std::floor(src));
  s.hi = std::min(s.lo + 1, extent - 1);
  s.frac = src - T(s.lo);
  s.dsrc = clamped ? T(0) : T(extent);
  return s;
}

}  // namespace

template <class T>
Tensor<T> bilinear_sample(const Tensor<T>& grid, GridShape shape, const Tensor<T>& points) {
  require_2d(grid, "bilinear_sample");
  require_2d(points, "bilinear_sample");
  require(grid.rows() == shape.count() && shape.count() > 0,
          "bilinear_sample: token count does not match grid");
  require(points.cols() == 2, "bilinear_sample: points must be P×2");
  const std::size_t c = grid.cols(), np = points.rows();
  std::vector<T> out(np * c);
  const T* g = grid.data().data();
  for (std::size_t p = 0; p < np; ++p) {
    const auto sx = axis_stencil(points.at(p * 2), shape.cols);
    const auto sy = axis_stencil(points.at(p * 2 + 1), shape.rows);
    const T* v00 = g + (sy.lo * shape.cols + sx.lo) * c;
    const T* v01 = g + (sy.lo * shape.cols + sx.hi) * c;
    const T* v10 = g + (sy.hi * shape.cols + sx.lo) * c;
    const T* v11 = g + (sy.hi * shape.cols + sx.hi) * c;
    const T w00 = (T(1) - sy.frac) * (T(1) - sx.frac), w01 = (T(1) - sy.frac) * sx.frac;
    const T w10 = sy.frac * (T(1) - sx.frac), w11 = sy.frac * sx.frac;
    T* o = out.data() + p * c;
    for (std::size_t j = 0; j < c; ++j) {
      // Exact lattice hits skip the zero-weight terms so the result is bitwise the token.
      if (sx.frac == T(0) && sy.frac == T(0)) {
        o[j] = v00[j];
      } else {
        o[j] = w00 * v00[j] + w01 * v01[j] + w10 * v10[j] + w11 * v11[j];
      }
    }
  }
  return make_result<T>("bilinear_sample", {np, c}, std::move(out), {&grid, &points},
                        [shape, c, np](Node<T>& self) {
                          T* gg = grad_of(self, 0);
                          T* gp = grad_of(self, 1);
                          const T* gv = value_of(self, 0);
                          const T* pv = value_of(self, 1);
                          for (std::size_t p = 0; p < np; ++p) {
                            const auto sx = axis_stencil(pv[p * 2], shape.cols);
                            const auto sy = axis_stencil(pv[p * 2 + 1], shape.rows);
                            const std::size_t i00 = (sy.lo * shape.cols + sx.lo) * c;
                            const std::size_t i01 = (sy.lo * shape.cols + sx.hi) * c;
                            const std::size_t i10 = (sy.hi * shape.cols + sx.lo) * c;
                            const std::size_t i11 = (sy.hi * shape.cols + sx.hi) * c;
                            const T fx = sx.frac, fy = sy.frac;
                            const T* go = self.grad.data() + p * c;
                            if (gg) {
                              for (std::size_t j = 0; j < c; ++j) {
                                gg[i00 + j] += go[j] * (T(1) - fy) * (T(1) - fx);
                                gg[i01 + j] += go[j] * (T(1) - fy) * fx;
                                gg[i10 + j] += go[j] * fy * (T(1) - fx);
                                gg[i11 + j] += go[j] * fy * fx;
                              }
                            }
                            if (gp) {
                              T dx = 0, dy = 0;
                              for (std::size_t j = 0; j < c; ++j) {
                                dx += go[j] * ((T(1) - fy) * (gv[i01 + j] - gv[i00 + j]) +
                                               fy * (gv[i11 + j] - gv[i10 + j]));
                                dy += go[j] * ((T(1) - fx) * (gv[i10 + j] - gv[i00 + j]) +
                                               fx * (gv[i11 + j] - gv[i01 + j]));
                              }
                              gp[p * 2] += dx * sx.dsrc;
                              gp[p * 2 + 1] += dy * sy.dsrc;
                            }
                          }
                        });
}

// ---------------------------------------------------------------------------
// Attention kernels

template <class T>
Tensor<T> grouped_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                            std::size_t heads, T scale_factor, std::span<const AttentionGroup> groups,
                            std::vector<std::vector<std::vector<T>>>* weights) {
  require_2d(q, "attention");
  require_2d(k, "attention");
  require_2d(v, "attention");
  const std::size_t d = q.cols();
  require(k.cols() == d && v.cols() == d, "attention: query/key/value widths differ");
  require(k.rows() == v.rows(), "attention: key and value counts differ");
  require(heads > 0 && d % heads == 0, "attention: width not divisible by head count");
  const std::size_t dh = d / heads, nq = q.rows(), nk = k.rows();
  std::vector<char> covered(nq, 0);
  for (const auto& grp : groups) {
    if (!grp.queries.empty() && grp.keys.empty()) throw UsageError("attention: empty key set");
    for (auto i : grp.queries) {
      require(i < nq && !covered[i], "attention: query index repeated or out of range");
      covered[i] = 1;
    }
    for (auto j : grp.keys) require(j < nk, "attention: key index out of range");
  }
  for (char cv : covered) require(cv != 0, "attention: query not assigned to any group");

  auto group_copy = std::make_shared<std::vector<AttentionGroup>>(groups.begin(), groups.end());
  auto probs = std::make_shared<std::vector<std::vector<T>>>();  // [group*heads + h]
  std::vector<T> out(nq * d, T(0));
  auto gather = [d](const T* src, const std::vector<std::size_t>& idx, std::vector<T>& dst) {
    dst.resize(idx.size() * d);
    for (std::size_t i = 0; i < idx.size(); ++i) std::copy_n(src + idx[i] * d, d, dst.data() + i * d);
  };
  std::vector<T> qg, kg, vg, og;
  if (weights) weights->assign(groups.size(), {});
  for (std::size_t gi = 0; gi < group_copy->size(); ++gi) {
    const auto& grp = (*group_copy)[gi];
    const std::size_t mq = grp.queries.size(), mk = grp.keys.size();
    gather(q.data().data(), grp.queries, qg);
    gather(k.data().data(), grp.keys, kg);
    gather(v.data().data(), grp.keys, vg);
    og.assign(mq * d, T(0));
    for (std::size_t h = 0; h < heads; ++h) {
      std::vector<T> p(mq * mk);
      detail::gemm<T>(false, true, mq, mk, dh, scale_factor, qg.data() + h * dh, d, kg.data() + h * dh,
                      d, T(0), p.data(), mk);
      for (std::size_t i = 0; i < mq; ++i) {
        T* row = p.data() + i * mk;
        const T mx = *std::max_element(row, row + mk);
        T z = 0;
        for (std::size_t j = 0; j < mk; ++j) {
          row[j] = std::exp(row[j] - mx);
          z += row[j];
        }
        for (std::size_t j = 0; j < mk; ++j) row[j] /= z;
      }
      detail::gemm<T>(false, false, mq, dh, mk, T(1), p.data(), mk, vg.data() + h * dh, d, T(0),
                      og.data() + h * dh, d);
      if (weights) (*weights)[gi].push_back(p);
      probs->push_back(std::move(p));
    }
    for (std::size_t i = 0; i < mq; ++i) std::copy_n(og.data() + i * d, d, out.data() + grp.queries[i] * d);
  }

  return make_result<T>(
      "attention", {nq, d}, std::move(out), {&q, &k, &v},
      [group_copy, probs, heads, dh, d, scale_factor, gather](Node<T>& self) {
        T* gq = grad_of(self, 0);
        T* gk = grad_of(self, 1);
        T* gv = grad_of(self, 2);
        std::vector<T> qg, kg, vg, dog, dq, dk, dv, dp;
        for (std::size_t gi = 0; gi < group_copy->size(); ++gi) {
          const auto& grp = (*group_copy)[gi];
          const std::size_t mq = grp.queries.size(), mk = grp.keys.size();
          if (mq == 0) continue;
          gather(value_of(self, 0), grp.queries, qg);
          gather(value_of(self, 1), grp.keys, kg);
          gather(value_of(self, 2), grp.keys, vg);
          gather(self.grad.data(), grp.queries, dog);
          dq.assign(mq * d, T(0));
          dk.assign(mk * d, T(0));
          dv.assign(mk * d, T(0));
          dp.resize(mq * mk);
          for (std::size_t h = 0; h < heads; ++h) {
            const auto& p = (*probs)[gi * heads + h];
            detail::gemm<T>(true, false, mk, dh, mq, T(1), p.data(), mk, dog.data() + h * dh, d, T(0),
                            dv.data() + h * dh, d);
            detail::gemm<T>(false, true, mq, mk, dh, T(1), dog.data() + h * dh, d, vg.data() + h * dh,
                            d, T(0), dp.data(), mk);
            for (std::size_t i = 0; i < mq; ++i) {
              T dot = 0;
              for (std::size_t j = 0; j < mk; ++j) dot += dp[i * mk + j] * p[i * mk + j];
              for (std::size_t j = 0; j < mk; ++j) dp[i * mk + j] = p[i * mk + j] * (dp[i * mk + j] - dot);
            }
            detail::gemm<T>(false, false, mq, dh, mk, scale_factor, dp.data(), mk, kg.data() + h * dh,
                            d, T(0), dq.data() + h * dh, d);
            detail::gemm<T>(true, false, mk, dh, mq, scale_factor, dp.data(), mk, qg.data() + h * dh,
                            d, T(0), dk.data() + h * dh, d);
          }
          if (gq) {
            for (std::size_t i = 0; i < mq; ++i) {
              for (std::size_t j = 0; j < d; ++j) gq[grp.queries[i] * d + j] += dq[i * d + j];
            }
          }
          for (std::size_t i = 0; i < mk; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
              if (gk) gk[grp.keys[i] * d + j] += dk[i * d + j];
              if (gv) gv[grp.keys[i] * d + j] += dv[i * d + j];
            }
          }
        }
      });
}

template <class T>
Tensor<T> dense_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                          std::size_t heads, T scale_factor,
                          std::vector<std::vector<std::vector<T>>>* weights) {
  require_2d(q, "attention");
  require_2d(k, "attention");
  if (k.rows() == 0) throw UsageError("attention: empty key set");
  AttentionGroup all;
  all.queries.resize(q.rows());
  all.keys.resize(k.rows());
  for (std::size_t i = 0; i < all.queries.size(); ++i) all.queries[i] = i;
  for (std::size_t i = 0; i < all.keys.size(); ++i) all.keys[i] = i;
  const AttentionGroup groups[] = {std::move(all)};
  return grouped_attention<T>(q, k, v, heads, scale_factor, groups, weights);
}

template <class T>
Tensor<T> head_dot_logits(const Tensor<T>& q, const Tensor<T>& keys, std::size_t heads,
                          std::size_t points, T scale_factor) {
  require_2d(q, "head_dot_logits");
  require_2d(keys, "head_dot_logits");
  const std::size_t nq = q.rows(), d = q.cols();
  require(heads > 0 && d % heads == 0, "head_dot_logits: width not divisible by heads");
  require(keys.cols() == d && keys.rows() == nq * heads * points,
          "head_dot_logits: keys must be (queries·heads·points)×d");
  const std::size_t dh = d / heads, hp = heads * points;
  std::vector<T> out(nq * hp);
  const T* qv = q.data().data();
  const T* kv = keys.data().data();
  for (std::size_t i = 0; i < nq; ++i) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t j = 0; j < points; ++j) {
        const T* kr = kv + ((i * heads + h) * points + j) * d + h * dh;
        const T* qr = qv + i * d + h * dh;
        T s = 0;
        for (std::size_t c = 0; c < dh; ++c) s += qr[c] * kr[c];
        out[i * hp + h * points + j] = s * scale_factor;
      }
    }
  }
  return make_result<T>("head_dot_logits", {nq, hp}, std::move(out), {&q, &keys},
                        [nq, d, dh, heads, points, hp, scale_factor](Node<T>& self) {
                          T* gq = grad_of(self, 0);
                          T* gk = grad_of(self, 1);
                          const T* qv = value_of(self, 0);
                          const T* kv = value_of(self, 1);
                          for (std::size_t i = 0; i < nq; ++i) {
                            for (std::size_t h = 0; h < heads; ++h) {
                              for (std::size_t j = 0; j < points; ++j) {
                                const T g = self.grad[i * hp + h * points + j] * scale_factor;
                                const std::size_t krow = ((i * heads + h) * points + j) * d + h * dh;
                                const std::size_t qrow = i * d + h * dh;
                                for (std::size_t c = 0; c < dh; ++c) {
                                  if (gq) gq[qrow + c] += g * kv[krow + c];
                                  if (gk) gk[krow + c] += g * qv[qrow + c];
                                }
                              }
                            }
                          }
                        });
}

template <class T>
Tensor<T> head_weighted_sum(const Tensor<T>& values, const Tensor<T>& weights, std::size_t heads,
                            std::size_t points) {
  require_2d(values, "head_weighted_sum");
  require_2d(weights, "head_weighted_sum");
  const std::size_t nq = weights.rows(), d = values.cols(), hp = heads * points;
  require(heads > 0 && d % heads == 0, "head_weighted_sum: width not divisible by heads");
  require(weights.cols() == hp && values.rows() == nq * hp,
          "head_weighted_sum: expected weights nq×(heads·points) and values (nq·heads·points)×d");
  const std::size_t dh = d / heads;
  std::vector<T> out(nq * d, T(0));
  const T* vv = values.data().data();
  const T* wv = weights.data().data();
  for (std::size_t i = 0; i < nq; ++i) {
    for (std::size_t h = 0; h < heads; ++h) {
      T* o = out.data() + i * d + h * dh;
      for (std::size_t j = 0; j < points; ++j) {
        const T w = wv[i * hp + h * points + j];
        const T* vr = vv + ((i * heads + h) * points + j) * d + h * dh;
        for (std::size_t c = 0; c < dh; ++c) o[c] += w * vr[c];
      }
    }
  }
  return make_result<T>("head_weighted_sum", {nq, d}, std::move(out), {&values, &weights},
                        [nq, d, dh, heads, points, hp](Node<T>& self) {
                          T* gv = grad_of(self, 0);
                          T* gw = grad_of(self, 1);
                          const T* vv = value_of(self, 0);
                          const T* wv = value_of(self, 1);
                          for (std::size_t i = 0; i < nq; ++i) {
                            for (std::size_t h = 0; h < heads; ++h) {
                              const T* go = self.grad.data() + i * d + h * dh;
                              for (std::size_t j = 0; j < points; ++j) {
                                const std::size_t vrow = ((i * heads + h) * points + j) * d + h * dh;
                                const std::size_t widx = i * hp + h * points + j;
                                T acc = 0;
                                for (std::size_t c = 0; c < dh; ++c) {
                                  acc += go[c] * vv[vrow + c];
                                  if (gv) gv[vrow + c] += wv[widx] * go[c];
                                }
                                if (gw) gw[widx] += acc;
                              }
                            }
                          }
                        });
}

// ---------------------------------------------------------------------------
// Losses

template <class T>
Tensor<T> cross_entropy_with_logits(const Tensor<T>& logits, std::span<const int> targets,
                                    std::span<const T> class_weights) {
  require_2d(logits, "cross_entropy");
  const std::size_t n = logits.rows(), c = logits.cols();
  require(targets.size() == n, "cross_entropy: one target per row required");
  require(class_weights.empty() || class_weights.size() == c, "cross_entropy: class weight count");
  auto probs = std::make_shared<std::vector<T>>(n * c);
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<T> cw(class_weights.begin(), class_weights.end());
  T total = 0, norm = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int t = tgt[i];
    if (t < 0 || static_cast<std::size_t>(t) >= c) throw UsageError("cross_entropy: target out of range");
    const T* row = logits.data().data() + i * c;
    const T mx = *std::max_element(row, row + c);
    T z = 0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < c; ++j) (*probs)[i * c + j] = std::exp(row[j] - mx) / z;
    const T w = cw.empty() ? T(1) : cw[t];
    total += w * (std::log(z) + mx - row[t]);
    norm += w;
  }
  const T value = norm > T(0) ? total / norm : T(0);
  return make_result<T>("cross_entropy", {1}, {value}, {&logits},
                        [n, c, probs, tgt = std::move(tgt), cw = std::move(cw), norm](Node<T>& self) {
                          T* gl = grad_of(self, 0);
                          if (!gl || norm <= T(0)) return;
                          const T g = self.grad[0] / norm;
                          for (std::size_t i = 0; i < n; ++i) {
                            const T w = cw.empty() ? T(1) : cw[tgt[i]];
                            for (std::size_t j = 0; j < c; ++j) {
                              const T onehot = static_cast<int>(j) == tgt[i] ? T(1) : T(0);
                              gl[i * c + j] += g * w * ((*probs)[i * c + j] - onehot);
                            }
                          }
                        });
}

template <class T>
Tensor<T> smooth_l1(const Tensor<T>& pred, const Tensor<T>& target, T beta) {
  require_same(pred, target, "smooth_l1");
  const std::size_t n = pred.numel();
  if (n == 0) throw UsageError("smooth_l1 of empty tensors");
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T r = pred.at(i) - target.at(i);
    const T a = std::abs(r);
    total += a < beta ? T(0.5) * r * r / beta : a - T(0.5) * beta;
  }
  return make_result<T>("smooth_l1", {1}, {total / T(n)}, {&pred, &target}, [n, beta](Node<T>& self) {
    T* gp = grad_of(self, 0);
    T* gt = grad_of(self, 1);
    const T* p = value_of(self, 0);
    const T* t = value_of(self, 1);
    const T g = self.grad[0] / T(n);
    for (std::size_t i = 0; i < n; ++i) {
      const T r = p[i] - t[i];
      const T d = std::abs(r) < beta ? r / beta : (r > T(0) ? T(1) : T(-1));
      if (gp) gp[i] += g * d;
      if (gt) gt[i] -= g * d;
    }
  });
}

namespace {

/// GIoU of two (cx, cy, w, h) boxes and its gradient with respect to the first.
template <class T>
T giou_with_grad(const T* a, const T* b, T* grad) {
  const T ax0 = a[0] - a[2] / 2, ax1 = a[0] + a[2] / 2, ay0 = a[1] - a[3] / 2, ay1 = a[1] + a[3] / 2;
  const T bx0 = b[0] - b[2] / 2, bx1 = b[0] + b[2] / 2, by0 = b[1] - b[3] / 2, by1 = b[1] + b[3] / 2;
  const T iw_raw = std::min(ax1, bx1) - std::max(ax0, bx0);
  const T ih_raw = std::min(ay1, by1) - std::max(ay0, by0);
  const T iw = std::max(T(0), iw_raw), ih = std::max(T(0), ih_raw);
  const T inter = iw * ih;
  const T area_a = (ax1 - ax0) * (ay1 - ay0), area_b = (bx1 - bx0) * (by1 - by0);
  const T uni = area_a + area_b - inter;
  const T hw = std::max(ax1, bx1) - std::min(ax0, bx0);
  const T hh = std::max(ay1, by1) - std::min(ay0, by0);
  const T hull = hw * hh;
  const T iou = uni > T(0) ? inter / uni : T(0);
  const T giou = hull > T(0) ? iou - (hull - uni) / hull : iou;
  if (!grad) return giou;

  // Partial derivatives with respect to (ax0, ax1, ay0, ay1).
  const T diw[4] = {iw_raw > 0 && ax0 > bx0 ? T(-1) : T(0), iw_raw > 0 && ax1 < bx1 ? T(1) : T(0), 0, 0};
  const T dih[4] = {0, 0, ih_raw > 0 && ay0 > by0 ? T(-1) : T(0), ih_raw > 0 && ay1 < by1 ? T(1) : T(0)};
  const T dhw[4] = {ax0 < bx0 ? T(-1) : T(0), ax1 > bx1 ? T(1) : T(0), 0, 0};
  const T dhh[4] = {0, 0, ay0 < by0 ? T(-1) : T(0), ay1 > by1 ? T(1) : T(0)};
  const T darea[4] = {-(ay1 - ay0), ay1 - ay0, -(ax1 - ax0), ax1 - ax0};
  T dc[4];
  for (int i = 0; i < 4; ++i) {
    const T dinter = diw[i] * ih + dih[i] * iw;
    const T duni = darea[i] - dinter;
    const T dhull = dhw[i] * hh + dhh[i] * hw;
    T d = uni > T(0) ? (dinter * uni - inter * duni) / (uni * uni) : T(0);
    if (hull > T(0)) d += (duni * hull - uni * dhull) / (hull * hull);
    dc[i] = d;
  }
  grad[0] = dc[0] + dc[1];
  grad[1] = dc[2] + dc[3];
  grad[2] = T(0.5) * (dc[1] - dc[0]);
  grad[3] = T(0.5) * (dc[3] - dc[2]);
  return giou;
}

}  // namespace

template <class T>
Tensor<T> giou_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  require_2d(pred, "giou_loss");
  require_same(pred, target, "giou_loss");
  require(pred.cols() == 4, "giou_loss: boxes must be n×4");
  const std::size_t n = pred.rows();
  if (n == 0) throw UsageError("giou_loss of empty box sets");
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total += T(1) - giou_with_grad<T>(pred.data().data() + i * 4, target.data().data() + i * 4, nullptr);
  }
  return make_result<T>("giou_loss", {1}, {total / T(n)}, {&pred, &target}, [n](Node<T>& self) {
    T* gp = grad_of(self, 0);
    if (!gp) return;
    const T g = self.grad[0] / T(n);
    T d[4];
    for (std::size_t i = 0; i < n; ++i) {
      giou_with_grad<T>(value_of(self, 0) + i * 4, value_of(self, 1) + i * 4, d);
      for (int j = 0; j < 4; ++j) gp[i * 4 + j] -= g * d[j];
    }
  });
}

// ---------------------------------------------------------------------------

#define SKUPATCH_INSTANTIATE_TENSOR(T)                                                            \
  template class Tensor<T>;                                                                       \
  template std::vector<Node<T>*> computation_record(const Tensor<T>&);                            \
  template void backward(const Tensor<T>&);                                                       \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> scale(const Tensor<T>&, T);                                                  \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> transpose(const Tensor<T>&);                                                 \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                            \
  template Tensor<T> concat(std::span<const Tensor<T>>, std::size_t);                             \
  template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);                      \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                      \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::size_t>);                 \
  template Tensor<T> relu(const Tensor<T>&);                                                      \
  template Tensor<T> gelu(const Tensor<T>&);                                                      \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                   \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);         \
  template Tensor<T> sum(const Tensor<T>&);                                                       \
  template Tensor<T> mean(const Tensor<T>&);                                                      \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                      \
  template Tensor<T> avg_pool2x2(const Tensor<T>&, GridShape);                                    \
  template Tensor<T> bilinear_sample(const Tensor<T>&, GridShape, const Tensor<T>&);              \
  template Tensor<T> grouped_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                       std::size_t, T, std::span<const AttentionGroup>,           \
                                       std::vector<std::vector<std::vector<T>>>*);                \
  template Tensor<T> dense_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                                     std::size_t, T, std::vector<std::vector<std::vector<T>>>*);  \
  template Tensor<T> head_dot_logits(const Tensor<T>&, const Tensor<T>&, std::size_t,             \
                                     std::size_t, T);                                             \
  template Tensor<T> head_weighted_sum(const Tensor<T>&, const Tensor<T>&, std::size_t,           \
                                       std::size_t);                                              \
  template Tensor<T> cross_entropy_with_logits(const Tensor<T>&, std::span<const int>,            \
                                               std::span<const T>);                               \
  template Tensor<T> smooth_l1(const Tensor<T>&, const Tensor<T>&, T);                            \
  template Tensor<T> giou_loss(const Tensor<T>&, const Tensor<T>&);

SKUPATCH_INSTANTIATE_TENSOR(float)
SKUPATCH_INSTANTIATE_TENSOR(double)

}  // namespace skupatch
