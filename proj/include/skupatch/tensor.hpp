#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto a shared graph node. Operations executed
// while gradient recording is enabled (the default) link their result to the
// inputs that require gradients; backward() replays the adjoints of that graph
// in reverse topological order. Scalars are tensors of shape {1}.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace skupatch {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Row/column layout of a token set arranged on a 2D grid (row-major tokens).
struct GridShape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t count() const { return rows * cols; }
  bool operator==(const GridShape&) const = default;
};

/// Thread-local switch for graph recording. Inference under frozen parameters
/// runs with recording off so concurrent callers never share graph state.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// When on, every op result is scanned and a NumericalError names the first
/// op that produced a NaN or infinity. Off by default.
void set_finite_checks(bool enabled);
bool finite_checks();

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  /// Leaf that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<T> values);
  static Tensor from_node(std::shared_ptr<Node<T>> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const T> data() const { return node_->value; }
  /// In-place mutation of the stored values (parameters, test fixtures).
  std::span<T> mutable_data() { return node_->value; }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->grad_buffer(); }
  bool has_grad() const { return !node_->grad.empty(); }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool flag);
  void zero_grad();

  /// Same values, no history, no gradient.
  Tensor detach() const;
  T item() const;
  T at(std::size_t i) const { return node_->value[i]; }
  T at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Operations reachable from `root` that take part in differentiation, in
/// topological order (inputs before consumers). Leaves are included.
template <class T>
std::vector<Node<T>*> computation_record(const Tensor<T>& root);

/// Accumulates d(loss)/d(leaf) into every reachable leaf that requires grad.
/// Throws UsageError unless `loss` holds exactly one element.
template <class T>
void backward(const Tensor<T>& loss);

// ---------------------------------------------------------------------------
// Primitives. All shapes are explicit; the only broadcast is the per-row bias
// of add_bias/linear.

template <class T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// x[n×in]·w[in×out] + bias[out]; `bias` may be undefined.
template <class T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);
template <class T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <class T> Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);
template <class T> Tensor<T> transpose(const Tensor<T>& a);
template <class T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <class T> Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis);
template <class T> Tensor<T> slice_cols(const Tensor<T>& a, std::size_t begin, std::size_t end);
template <class T> Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t end);
template <class T> Tensor<T> gather_rows(const Tensor<T>& a, std::span<const std::size_t> rows);
template <class T> Tensor<T> relu(const Tensor<T>& a);
/// Exact (erf) GELU.
template <class T> Tensor<T> gelu(const Tensor<T>& a);
template <class T> Tensor<T> sigmoid(const Tensor<T>& a);
/// Row-wise normalization over the last axis of a 2D tensor, then gamma/beta
/// (either may be undefined to skip the affine part).
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5));
template <class T> Tensor<T> sum(const Tensor<T>& a);
template <class T> Tensor<T> mean(const Tensor<T>& a);
/// Max-subtracted softmax along `axis` of an N-d tensor.
template <class T> Tensor<T> softmax(const Tensor<T>& a, std::size_t axis);

/// 2×2 average pooling of grid tokens x[rows·cols × c]; both grid sides even.
template <class T> Tensor<T> avg_pool2x2(const Tensor<T>& x, GridShape grid);

/// Bilinear interpolation of grid tokens at normalized points[P×2] given as
/// (x, y) in [0,1]², x along columns. Half-pixel centers (align-corners off):
/// token (r, c) sits at ((c+0.5)/cols, (r+0.5)/rows). Points are clamped to the
/// unit square and source coordinates to the outer token centers.
/// Differentiable with respect to both the grid values and the points.
template <class T>
Tensor<T> bilinear_sample(const Tensor<T>& grid, GridShape shape, const Tensor<T>& points);

/// One attention partition: every query index attends over `keys` only.
struct AttentionGroup {
  std::vector<std::size_t> queries;
  std::vector<std::size_t> keys;
};

/// Multi-head scaled dot-product attention on pre-projected q[nq×d], k[nk×d],
/// v[nk×d]. Head h owns columns [h·d/heads, (h+1)·d/heads). Each query must
/// appear in exactly one group. If `weights` is non-null it receives the
/// softmax matrices, indexed [group][head] as row-major |queries|×|keys|.
template <class T>
Tensor<T> grouped_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                            std::size_t heads, T scale, std::span<const AttentionGroup> groups,
                            std::vector<std::vector<std::vector<T>>>* weights = nullptr);

/// Dense single-group convenience wrapper around grouped_attention.
template <class T>
Tensor<T> dense_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                          std::size_t heads, T scale,
                          std::vector<std::vector<std::vector<T>>>* weights = nullptr);

/// Per-query, per-head dot products against that query's own sampled keys.
/// q[nq×d], keys[nq·heads·points × d] ordered (query, head, point) →
/// logits[nq × heads·points], scaled by `scale`.
template <class T>
Tensor<T> head_dot_logits(const Tensor<T>& q, const Tensor<T>& keys, std::size_t heads,
                          std::size_t points, T scale);

/// out[i, head h columns] = Σ_j weights[i, h·points + j] · values[(i·heads + h)·points + j, head h columns].
template <class T>
Tensor<T> head_weighted_sum(const Tensor<T>& values, const Tensor<T>& weights, std::size_t heads,
                            std::size_t points);

/// Weighted mean of per-row softmax cross entropy. `class_weights` empty means
/// all ones; the normalizer is the sum of the selected weights.
template <class T>
Tensor<T> cross_entropy_with_logits(const Tensor<T>& logits, std::span<const int> targets,
                                    std::span<const T> class_weights = {});

/// Mean elementwise smooth-L1 with transition `beta`.
template <class T>
Tensor<T> smooth_l1(const Tensor<T>& pred, const Tensor<T>& target, T beta = T(1));

/// Mean of (1 - GIoU) over rows of (cx, cy, w, h) boxes. Gradients flow to
/// `pred` only.
template <class T>
Tensor<T> giou_loss(const Tensor<T>& pred, const Tensor<T>& target);

}  // namespace skupatch
