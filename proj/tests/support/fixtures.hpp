#pragma once

// Small configurations and helpers shared by the test binaries.

#include <algorithm>
#include <cmath>

#include "gradcheck.hpp"
#include "skupatch/config.hpp"
#include "skupatch/raster.hpp"

namespace skupatch::testing {

inline ModelConfig tiny_model() {
  ModelConfig c;
  c.image_size = 32;
  c.stride = 4;
  c.patch_size = 16;
  c.patch_stride = 4;
  c.width = 8;
  c.heads = 2;
  c.layers = 3;
  c.queries = 4;
  c.window = 4;
  c.points = 3;
  c.ffn_hidden = 16;
  c.head_layers = 4;
  c.mask_grid = 8;
  c.mask_coeffs = 12;
  return c;
}

inline Image random_image(std::size_t w, std::size_t h, Rng& rng) {
  Image img(w, h);
  for (auto& v : img.rgb) v = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  return img;
}

inline TokenSet<double> random_grid_tokens(GridShape grid, std::size_t width, Rng& rng) {
  return {random_const({grid.count(), width}, rng), grid};
}

template <class Module>
NamedParams collect(Module& m, const std::string& prefix) {
  NamedParams out;
  m.visit(prefix, [&](const std::string& name, Tensor<double>& t) { out.emplace_back(name, t); });
  return out;
}

inline double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
  return m;
}

/// Adds N(0, stddev) noise to every parameter so zero-initialized branches are
/// exercised by gradient checks.
template <class Module>
void randomize(Module& m, std::uint64_t seed, double stddev = 0.3) {
  Rng rng(seed);
  m.visit("", [&](const std::string&, Tensor<double>& t) {
    for (auto& v : t.mutable_data()) v += rng.normal(0.0, stddev);
  });
}

}  // namespace skupatch::testing
