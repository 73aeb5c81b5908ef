#pragma once

// Central finite-difference gradient checking shared by unit and acceptance
// tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "skupatch/nn.hpp"
#include "skupatch/rng.hpp"
#include "skupatch/tensor.hpp"

namespace skupatch::testing {

using NamedParams = std::vector<std::pair<std::string, Tensor<double>>>;

struct GradCheck {
  double max_rel_error = 0;
  std::string worst;
  std::size_t checked = 0;
};

// Differences below kAbsFloor are finite-difference noise (rounding is about
// 1e-16·|f|/ε), so they count as agreement. Without this, parameters whose
// true gradient is exactly zero (key biases under softmax) fail on noise.
inline constexpr double kAbsFloor = 1e-8;

inline double relative_error(double analytic, double numeric) {
  if (std::abs(analytic - numeric) <= kAbsFloor) return 0.0;
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

/// Compares backward() against (f(x+ε) − f(x−ε)) / 2ε on up to
/// `per_tensor` randomly chosen entries of every parameter (all entries when
/// per_tensor is 0).
inline GradCheck check_gradients(NamedParams& params, const std::function<Tensor<double>()>& loss_fn,
                                 std::size_t per_tensor, std::uint64_t seed, double eps = 1e-5) {
  for (auto& [name, p] : params) p.zero_grad();
  backward(loss_fn());
  std::vector<std::vector<double>> analytic;
  for (auto& [name, p] : params) {
    analytic.emplace_back(p.numel(), 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.back().begin());
  }
  GradCheck out;
  Rng rng(seed);
  NoGradGuard no_grad;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& p = params[t].second;
    std::vector<std::size_t> idx;
    if (per_tensor == 0 || per_tensor >= p.numel()) {
      for (std::size_t i = 0; i < p.numel(); ++i) idx.push_back(i);
    } else {
      for (std::size_t i = 0; i < per_tensor; ++i) {
        idx.push_back(static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(p.numel()) - 1)));
      }
    }
    for (std::size_t i : idx) {
      auto data = p.mutable_data();
      const double orig = data[i];
      data[i] = orig + eps;
      const double up = loss_fn().item();
      data[i] = orig - eps;
      const double down = loss_fn().item();
      data[i] = orig;
      const double numeric = (up - down) / (2 * eps);
      const double err = relative_error(analytic[t][i], numeric);
      ++out.checked;
      if (err > out.max_rel_error) {
        out.max_rel_error = err;
        out.worst = params[t].first + "[" + std::to_string(i) + "] analytic=" + std::to_string(analytic[t][i]) +
                    " numeric=" + std::to_string(numeric);
      }
    }
  }
  return out;
}

inline Tensor<double> random_param(Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>::parameter(std::move(shape), std::move(v));
}

inline Tensor<double> random_const(Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>(std::move(shape), std::move(v));
}

/// sum(x ⊙ w) for a fixed random w, so every output entry gets a distinct
/// upstream gradient.
inline Tensor<double> project(const Tensor<double>& x, const Tensor<double>& w) { return sum(mul(x, w)); }

}  // namespace skupatch::testing
