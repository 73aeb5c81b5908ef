#pragma once

// Finite-difference gradient cases for every differentiable primitive.

#include <functional>
#include <string>
#include <vector>

#include "gradcheck.hpp"

namespace skupatch::testing {

struct PrimitiveCase {
  std::string name;
  std::function<GradCheck(std::uint64_t seed)> run;
};

namespace detail {

inline Tensor<double> away_from_zero(Shape shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = (rng.bernoulli(0.5) ? 1 : -1) * rng.uniform(0.05, 1.5);
  return Tensor<double>::parameter(std::move(shape), std::move(v));
}

// Boxes (cx, cy, w, h) with positive size.
inline Tensor<double> random_boxes(std::size_t n, Rng& rng, bool param) {
  std::vector<double> v;
  for (std::size_t i = 0; i < n; ++i) {
    v.push_back(rng.uniform(0.3, 0.7));
    v.push_back(rng.uniform(0.3, 0.7));
    v.push_back(rng.uniform(0.1, 0.5));
    v.push_back(rng.uniform(0.1, 0.5));
  }
  return param ? Tensor<double>::parameter({n, 4}, std::move(v)) : Tensor<double>({n, 4}, std::move(v));
}

}  // namespace detail

inline std::vector<PrimitiveCase> primitive_cases() {
  using T = Tensor<double>;
  std::vector<PrimitiveCase> cases;
  auto add_case = [&](std::string name, std::function<GradCheck(std::uint64_t)> fn) {
    cases.push_back({std::move(name), std::move(fn)});
  };

  add_case("matmul", [](std::uint64_t s) {
    Rng rng(s);
    NamedParams p{{"a", random_param({3, 4}, rng)}, {"b", random_param({4, 2}, rng)}};
    const T w = random_const({3, 2}, rng);
    return check_gradients(p, [&] { return project(matmul(p[0].second, p[1].second), w); }, 0, s);
  });
  add_case("linear", [](std::uint64_t s) {
    Rng rng(s);
    NamedParams p{{"x", random_param({3, 4}, rng)}, {"w", random_param({4, 5}, rng)}, {"b", random_param({5}, rng)}};
    const T w = random_const({3, 5}, rng);
    return check_gradients(p, [&] { return project(linear(p[0].second, p[1].second, p[2].second), w); }, 0, s);
  });
  add_case("add", [](std::uint64_t s) {
    Rng rng(s);
    NamedParams p{{"a", random_param({3, 4}, rng)}, {"b", random_param({3, 4}, rng)}};
    const T w = random_const({3, 4}, rng);
    return check_gradients(p, [&] { return project(add(p[0].second, p[1].second), w); }, 0, s);
  });
  add_case("sub", [](std::uint64_t s) {
    Rng rng(s);
    NamedParams p{{"a", random_param({3, 4}, rng)}, {"b", random_param({3, 4}, rng)}};
    const T w = random_const({3, 4}, rng);
    return check_gradients(p, [&] { return project(sub(p[0].second, p[1].second), w); }, 0, s);
  });
  add_case("multiply", [](std::uint64_t s) {
    Rng rng(s);
    NamedParams p{{"a", random_param({3, 4}, rng)}, {"b", random_param({3, 4}, rng)}};
    const T w = random_const({3, 4}, rng);
    // Fan-out: `a` is used twice.
    return check_gradients(p, [&] { return project(mul(mul(p[0].second, p[1].second), p[0].second), w); }, 0, s);
  });
  add_case("scale", [](std::uint64_t s) {
    Rng rng(s);
    NamedParams p{{"a", random_param({2, 5}, rng)}};
    const T w = random_const({2, 5}, rng);
    return check_gradients(p, [&] { return project(scale(p[0].second, -1.7), w); }, 0, s);
  });
  add_case("add_bias", [](std::uint64_t s) {
    Rng rng(s);
    NamedParams p{{"x", random_param({4, 3}, rng)}, {"b", random_param({3}, rng)}};
    const T w = random_const({4, 3}, rng);
    return check_gradients(p, [&] { return project(add_bias(p[0].second, p[1].second), w); }, 0, s);
  });
  add_case("transpose", [](std::uint64_t s) {
    Rng rng(s);
    NamedParams p{{"a", random_param({3, 5}, rng)}};
    const T w = random_const({5, 3}, rng);
    return check_gradients(p, [&] { return project(transpose(p[0].second), w); }, 0, s);
  });
  add_case("reshape", [](std::uint64_t s) {
    Rng rng(s);
    NamedParams p{{"a", random_param({3, 4}, rng)}};
    const T w = random_const({2, 6}, rng);
    return check_gradients(p, [&] { return project(reshape(p[0].second, {2, 6}), w); }, 0, s);
  });
  add_case("concatenate", [](std::uint64_t s) {
    Rng rng(s);
    NamedParams p{{"a", random_param({2, 3}, rng)}, {"b", random_param({2, 2}, rng)}, {"c", random_param({1, 5}, rng)}};
    const T w = random_const({3, 5}, rng);
    return check_gradients(p, [&] {
      const T cols[] = {p[0].second, p[1].second};
      const T rows[] = {concat<double>(cols, 1), p[2].second};
      return project(concat<double>(rows, 0), w);
    }, 0, s);
  });
  add_case("slice_and_gather", [](std::uint64_t s) {
    Rng rng(s);
    NamedParams p{{"a", random_param({4, 5}, rng)}};
    const std::vector<std::size_t> idx{3, 0, 3, 1};
    const T w1 = random_const({4, 2}, rng), w2 = random_const({2, 5}, rng), w3 = random_const({4, 5}, rng);
    return check_gradients(p, [&] {
      return add(add(project(slice_cols(p[0].second, 1, 3), w1), project(slice_rows(p[0].second, 2, 4), w2)),
                 project(gather_rows(p[0].second, std::span<const std::size_t>(idx)), w3));
    }, 0, s);
  });
  add_case("relu", [](std::uint64_t s) {
    Rng rng(s);
    NamedParams p{{"a", detail::away_from_zero({3, 4}, rng)}};
    const T w = random_const({3, 4}, rng);
    return check_gradients(p, [&] { return project(relu(p[0].second), w); }, 0, s);
  });
  add_case("gelu", [](std::uint64_t s) {
    Rng rng(s);
    NamedParams p{{"a", random_param({3, 4}, rng, -3, 3)}};
    const T w = random_const({3, 4}, rng);
    return check_gradients(p, [&] { return project(gelu(p[0].second), w); }, 0, s);
  });
  add_case("sigmoid", [](std::uint64_t s) {
    Rng rng(s);
    NamedParams p{{"a", random_param({3, 4}, rng, -4, 4)}};
    const T w = random_const({3, 4}, rng);
    return check_gradients(p, [&] { return project(sigmoid(p[0].second), w); }, 0, s);
  });
  add_case("layer_norm", [](std::uint64_t s) {
    Rng rng(s);
    NamedParams p{{"x", random_param({3, 6}, rng, -2, 2)}, {"g", random_param({6}, rng)}, {"b", random_param({6}, rng)}};
    const T w = random_const({3, 6}, rng);
    return check_gradients(p, [&] { return project(layer_norm(p[0].second, p[1].second, p[2].second, 1e-6), w); }, 0, s);
  });
  add_case("sum_mean", [](std::uint64_t s) {
    Rng rng(s);
    NamedParams p{{"a", random_param({3, 4}, rng)}};
    return check_gradients(p, [&] { return add(mul(sum(p[0].second), mean(p[0].second)), mean(p[0].second)); }, 0, s);
  });
  add_case("softmax", [](std::uint64_t s) {
    Rng rng(s);
    NamedParams p{{"a", random_param({3, 5}, rng, -2, 2)}};
    const T w0 = random_const({3, 5}, rng), w1 = random_const({3, 5}, rng);
    return check_gradients(p, [&] { return add(project(softmax(p[0].second, 1), w1), project(softmax(p[0].second, 0), w0)); }, 0, s);
  });
  add_case("avg_pool2x2", [](std::uint64_t s) {
    Rng rng(s);
    NamedParams p{{"x", random_param({16, 3}, rng)}};
    const T w = random_const({4, 3}, rng);
    return check_gradients(p, [&] { return project(avg_pool2x2(p[0].second, GridShape{4, 4}), w); }, 0, s);
  });
  add_case("bilinear_sample", [](std::uint64_t s) {
    Rng rng(s);
    NamedParams p{{"grid", random_param({12, 3}, rng)}, {"points", random_param({5, 2}, rng, 0.0, 1.0)}};
    const T w = random_const({5, 3}, rng);
    return check_gradients(p, [&] { return project(bilinear_sample(p[0].second, GridShape{3, 4}, p[1].second), w); }, 0, s);
  });
  add_case("grouped_attention", [](std::uint64_t s) {
    Rng rng(s);
    NamedParams p{{"q", random_param({4, 4}, rng)}, {"k", random_param({4, 4}, rng)}, {"v", random_param({4, 4}, rng)}};
    const std::vector<AttentionGroup> groups{{{0, 2}, {0, 1, 2}}, {{1, 3}, {3, 1}}};
    const T w = random_const({4, 4}, rng);
    return check_gradients(p, [&] {
      return project(grouped_attention(p[0].second, p[1].second, p[2].second, 2, 0.5, std::span<const AttentionGroup>(groups)), w);
    }, 0, s);
  });
  add_case("dense_attention", [](std::uint64_t s) {
    Rng rng(s);
    NamedParams p{{"q", random_param({2, 4}, rng)}, {"k", random_param({3, 4}, rng)}, {"v", random_param({3, 4}, rng)}};
    const T w = random_const({2, 4}, rng);
    return check_gradients(p, [&] { return project(dense_attention(p[0].second, p[1].second, p[2].second, 2, 0.5), w); }, 0, s);
  });
  add_case("head_dot_logits", [](std::uint64_t s) {
    Rng rng(s);
    NamedParams p{{"q", random_param({2, 4}, rng)}, {"keys", random_param({2 * 2 * 3, 4}, rng)}};
    const T w = random_const({2, 6}, rng);
    return check_gradients(p, [&] { return project(head_dot_logits(p[0].second, p[1].second, 2, 3, 0.5), w); }, 0, s);
  });
  add_case("head_weighted_sum", [](std::uint64_t s) {
    Rng rng(s);
    NamedParams p{{"values", random_param({2 * 2 * 3, 4}, rng)}, {"weights", random_param({2, 6}, rng)}};
    const T w = random_const({2, 4}, rng);
    return check_gradients(p, [&] { return project(head_weighted_sum(p[0].second, p[1].second, 2, 3), w); }, 0, s);
  });
  add_case("cross_entropy_with_logits", [](std::uint64_t s) {
    Rng rng(s);
    NamedParams p{{"logits", random_param({5, 3}, rng, -2, 2)}};
    const std::vector<int> targets{0, 2, 1, 1, 0};
    const std::vector<double> weights{1.0, 0.3, 2.0};
    return check_gradients(p, [&] {
      return cross_entropy_with_logits(p[0].second, std::span<const int>(targets), std::span<const double>(weights));
    }, 0, s);
  });
  add_case("smooth_l1", [](std::uint64_t s) {
    Rng rng(s);
    NamedParams p{{"pred", random_param({3, 4}, rng, -3, 3)}};
    const T target = random_const({3, 4}, rng, -3, 3);
    return check_gradients(p, [&] { return smooth_l1(p[0].second, target, 1.0); }, 0, s);
  });
  add_case("giou_loss", [](std::uint64_t s) {
    Rng rng(s);
    NamedParams p{{"pred", detail::random_boxes(4, rng, true)}};
    const T target = detail::random_boxes(4, rng, false);
    return check_gradients(p, [&] { return giou_loss(p[0].second, target); }, 0, s);
  });
  return cases;
}

}  // namespace skupatch::testing
