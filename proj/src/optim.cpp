#include "skupatch/optim.hpp"

#include <cmath>

#include "skupatch/errors.hpp"

namespace skupatch {

template <class T>
AdamW<T>::AdamW(Named params, AdamWOptions options) : params_(std::move(params)), options_(options) {
  for (const auto& [name, p] : params_) {
    m_.emplace_back(p.numel(), T(0));
    v_.emplace_back(p.numel(), T(0));
  }
}

template <class T>
void AdamW<T>::step() {
  for (const auto& [name, p] : params_) {
    if (!p.has_grad()) continue;
    for (T g : p.grad()) {
      if (!std::isfinite(static_cast<double>(g))) throw NumericalError("non-finite gradient in parameter " + name);
    }
  }
  ++steps_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  const double lr = options_.lr;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor<T>& p = params_[i].second;
    auto w = p.mutable_data();
    const bool has = p.has_grad();
    const std::span<const T> g = p.grad();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = has ? static_cast<double>(g[j]) : 0.0;
      double wj = static_cast<double>(w[j]);
      wj -= lr * options_.weight_decay * wj;
      const double m = b1 * static_cast<double>(m_[i][j]) + (1 - b1) * gj;
      const double v = b2 * static_cast<double>(v_[i][j]) + (1 - b2) * gj * gj;
      m_[i][j] = static_cast<T>(m);
      v_[i][j] = static_cast<T>(v);
      wj -= lr * (m / c1) / (std::sqrt(v / c2) + options_.eps);
      w[j] = static_cast<T>(wj);
    }
  }
}

template <class T>
void AdamW<T>::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

template <class T>
double AdamW<T>::clip_grad_norm(double max_norm) {
  double sq = 0;
  for (const auto& [name, p] : params_) {
    for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const T f = static_cast<T>(max_norm / norm);
    for (auto& [name, p] : params_) {
      if (!p.has_grad()) continue;
      for (T& g : p.mutable_grad()) g *= f;
    }
  }
  return norm;
}

template <class T>
void AdamW<T>::load_state(std::uint64_t steps, std::vector<std::vector<T>> first, std::vector<std::vector<T>> second) {
  if (first.size() != params_.size() || second.size() != params_.size()) {
    throw DimensionError("optimizer state does not match the parameter list");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (first[i].size() != params_[i].second.numel() || second[i].size() != params_[i].second.numel()) {
      throw DimensionError("optimizer state shape mismatch for " + params_[i].first);
    }
  }
  steps_ = steps;
  m_ = std::move(first);
  v_ = std::move(second);
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace skupatch
