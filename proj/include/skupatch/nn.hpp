#pragma once

#include <functional>
#include <optional>
#include <string>

#include "skupatch/rng.hpp"
#include "skupatch/tensor.hpp"

namespace skupatch {

/// Callback receiving every learnable tensor of a module under a dotted name.
template <class T>
using ParamVisitor = std::function<void(const std::string& name, Tensor<T>& param)>;

/// A set of d-wide feature tokens, optionally laid out on a 2D grid.
template <class T>
struct TokenSet {
  Tensor<T> tokens;  // count × width
  std::optional<GridShape> grid;

  std::size_t count() const { return tokens.rows(); }
  std::size_t width() const { return tokens.cols(); }
};

/// Normal(0, stddev) parameter of the given shape.
template <class T>
Tensor<T> normal_parameter(Shape shape, double stddev, Rng& rng);
template <class T>
Tensor<T> constant_parameter(Shape shape, T value);

template <class T>
struct Linear {
  Tensor<T> weight;  // in × out
  Tensor<T> bias;    // out, may be undefined

  static Linear create(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);
  /// Zero weights and bias; used where a branch should start as the identity.
  static Linear zeros(std::size_t in, std::size_t out);

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
  std::size_t in_features() const { return weight.shape()[0]; }
  std::size_t out_features() const { return weight.shape()[1]; }
  void visit(const std::string& prefix, const ParamVisitor<T>& fn);
};

template <class T>
struct LayerNorm {
  Tensor<T> gamma;
  Tensor<T> beta;

  static LayerNorm create(std::size_t width);
  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta, T(1e-6)); }
  void visit(const std::string& prefix, const ParamVisitor<T>& fn);
};

/// Pre-norm residual MLP block: x + W2·gelu(W1·LN(x)).
template <class T>
struct FeedForward {
  LayerNorm<T> norm;
  Linear<T> fc1;
  Linear<T> fc2;

  static FeedForward create(std::size_t width, std::size_t hidden, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
  void visit(const std::string& prefix, const ParamVisitor<T>& fn);
};

/// Plain MLP with GELU between layers and none after the last.
template <class T>
struct Mlp {
  std::vector<Linear<T>> layers;

  static Mlp create(std::size_t in, std::size_t hidden, std::size_t out, std::size_t depth, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
  void visit(const std::string& prefix, const ParamVisitor<T>& fn);
};

}  // namespace skupatch
