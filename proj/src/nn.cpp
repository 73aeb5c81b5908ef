#include "skupatch/nn.hpp"

#include <cmath>

namespace skupatch {

template <class T>
Tensor<T> normal_parameter(Shape shape, double stddev, Rng& rng) {
  std::vector<T> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<T>(rng.normal(0.0, stddev));
  return Tensor<T>::parameter(std::move(shape), std::move(values));
}

template <class T>
Tensor<T> constant_parameter(Shape shape, T value) {
  std::vector<T> values(shape_numel(shape), value);
  return Tensor<T>::parameter(std::move(shape), std::move(values));
}

template <class T>
Linear<T> Linear<T>::create(std::size_t in, std::size_t out, Rng& rng, bool with_bias) {
  Linear l;
  l.weight = normal_parameter<T>({in, out}, std::sqrt(2.0 / static_cast<double>(in + out)), rng);
  if (with_bias) l.bias = constant_parameter<T>({out}, T(0));
  return l;
}

template <class T>
Linear<T> Linear<T>::zeros(std::size_t in, std::size_t out) {
  Linear l;
  l.weight = constant_parameter<T>({in, out}, T(0));
  l.bias = constant_parameter<T>({out}, T(0));
  return l;
}

template <class T>
void Linear<T>::visit(const std::string& prefix, const ParamVisitor<T>& fn) {
  fn(prefix + ".weight", weight);
  if (bias.defined()) fn(prefix + ".bias", bias);
}

template <class T>
LayerNorm<T> LayerNorm<T>::create(std::size_t width) {
  return {constant_parameter<T>({width}, T(1)), constant_parameter<T>({width}, T(0))};
}

template <class T>
void LayerNorm<T>::visit(const std::string& prefix, const ParamVisitor<T>& fn) {
  fn(prefix + ".gamma", gamma);
  fn(prefix + ".beta", beta);
}

template <class T>
FeedForward<T> FeedForward<T>::create(std::size_t width, std::size_t hidden, Rng& rng) {
  return {LayerNorm<T>::create(width), Linear<T>::create(width, hidden, rng),
          Linear<T>::create(hidden, width, rng)};
}

template <class T>
Tensor<T> FeedForward<T>::operator()(const Tensor<T>& x) const {
  return add(x, fc2(gelu(fc1(norm(x)))));
}

template <class T>
void FeedForward<T>::visit(const std::string& prefix, const ParamVisitor<T>& fn) {
  norm.visit(prefix + ".norm", fn);
  fc1.visit(prefix + ".fc1", fn);
  fc2.visit(prefix + ".fc2", fn);
}

template <class T>
Mlp<T> Mlp<T>::create(std::size_t in, std::size_t hidden, std::size_t out, std::size_t depth, Rng& rng) {
  Mlp m;
  for (std::size_t i = 0; i < depth; ++i) {
    const std::size_t a = i == 0 ? in : hidden;
    const std::size_t b = i + 1 == depth ? out : hidden;
    m.layers.push_back(Linear<T>::create(a, b, rng));
  }
  return m;
}

template <class T>
Tensor<T> Mlp<T>::operator()(const Tensor<T>& x) const {
  Tensor<T> h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i](h);
    if (i + 1 < layers.size()) h = gelu(h);
  }
  return h;
}

template <class T>
void Mlp<T>::visit(const std::string& prefix, const ParamVisitor<T>& fn) {
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].visit(prefix + "." + std::to_string(i), fn);
}

template Tensor<float> normal_parameter<float>(Shape, double, Rng&);
template Tensor<double> normal_parameter<double>(Shape, double, Rng&);
template Tensor<float> constant_parameter<float>(Shape, float);
template Tensor<double> constant_parameter<double>(Shape, double);
template struct Linear<float>;
template struct Linear<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;
template struct FeedForward<float>;
template struct FeedForward<double>;
template struct Mlp<float>;
template struct Mlp<double>;

}  // namespace skupatch
