#include "skupatch/uqr.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "skupatch/errors.hpp"

namespace skupatch {

DctBasis::DctBasis(std::size_t m) : m_(m), a_(m * m) {
  if (m == 0) throw ConfigError("DCT size must be positive");
  const double md = static_cast<double>(m);
  for (std::size_t k = 0; k < m; ++k) {
    const double c = k == 0 ? std::sqrt(1.0 / md) : std::sqrt(2.0 / md);
    for (std::size_t n = 0; n < m; ++n) {
      a_[k * m + n] = c * std::cos(std::numbers::pi * (2.0 * static_cast<double>(n) + 1.0) *
                                   static_cast<double>(k) / (2.0 * md));
    }
  }
}

namespace {

// out = op(x)·op(y) for m×m row-major matrices.
std::vector<double> matmul_sq(std::span<const double> x, bool tx, std::span<const double> y, bool ty,
                              std::size_t m) {
  std::vector<double> out(m * m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < m; ++k) {
      const double a = tx ? x[k * m + i] : x[i * m + k];
      for (std::size_t j = 0; j < m; ++j) out[i * m + j] += a * (ty ? y[j * m + k] : y[k * m + j]);
    }
  }
  return out;
}

}  // namespace

std::vector<double> DctBasis::forward(std::span<const double> map) const {
  const auto as = matmul_sq(a_, false, map, false, m_);
  return matmul_sq(as, false, a_, true, m_);
}

std::vector<double> DctBasis::inverse(std::span<const double> coeffs) const {
  const auto atf = matmul_sq(a_, true, coeffs, false, m_);
  return matmul_sq(atf, false, a_, false, m_);
}

std::vector<std::size_t> zigzag_order(std::size_t m) {
  std::vector<std::size_t> order;
  order.reserve(m * m);
  for (std::size_t s = 0; s + 1 < 2 * m; ++s) {
    const std::size_t lo = s < m ? 0 : s - m + 1;
    const std::size_t hi = std::min(s, m - 1);
    for (std::size_t t = lo; t <= hi; ++t) {
      // Even diagonals run bottom-left to top-right.
      const std::size_t row = s % 2 == 0 ? s - t : t;
      order.push_back(row * m + (s - row));
    }
  }
  return order;
}

MaskCodec::MaskCodec(std::size_t m, std::size_t coeffs) : basis_(m), coeffs_(coeffs), order_(zigzag_order(m)) {
  if (coeffs == 0 || coeffs > m * m) throw ConfigError("mask coefficient count must be in [1, m^2]");
  order_.resize(coeffs);
}

std::vector<double> MaskCodec::encode(std::span<const double> map) const {
  const std::size_t m = grid();
  if (map.size() != m * m) {
    throw DimensionError("mask map has " + std::to_string(map.size()) + " values, expected " +
                         std::to_string(m * m));
  }
  const auto full = basis_.forward(map);
  std::vector<double> out(coeffs_);
  for (std::size_t i = 0; i < coeffs_; ++i) out[i] = full[order_[i]];
  return out;
}

std::vector<double> MaskCodec::decode(std::span<const double> vec) const {
  if (vec.size() != coeffs_) throw DimensionError("mask vector length does not match codec");
  const std::size_t m = grid();
  std::vector<double> full(m * m, 0.0);
  for (std::size_t i = 0; i < coeffs_; ++i) full[order_[i]] = vec[i];
  return basis_.inverse(full);
}

std::vector<double> mask_to_grid(const Mask& mask, const PixelBox& box, std::size_t m) {
  if (box.empty()) return std::vector<double>(m * m, 0.0);
  const auto w = static_cast<std::size_t>(box.x1 - box.x0 + 1);
  const auto h = static_cast<std::size_t>(box.y1 - box.y0 + 1);
  std::vector<double> crop(w * h);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      crop[y * w + x] = mask.at(static_cast<std::size_t>(box.x0) + x, static_cast<std::size_t>(box.y0) + y) ? 1.0 : 0.0;
    }
  }
  return resample_bilinear(crop, w, h, 1, m, m);
}

Mask grid_to_mask(std::span<const double> map, std::size_t m, std::span<const double> box,
                  std::size_t width, std::size_t height, double threshold) {
  Mask out(width, height);
  const double bw = box[2] * static_cast<double>(width);
  const double bh = box[3] * static_cast<double>(height);
  if (!(bw > 0) || !(bh > 0)) return out;
  const double left = box[0] * static_cast<double>(width) - bw / 2;
  const double top = box[1] * static_cast<double>(height) - bh / 2;
  const double md = static_cast<double>(m);
  for (std::size_t y = 0; y < height; ++y) {
    const double v = (static_cast<double>(y) + 0.5 - top) / bh;
    if (v < 0 || v >= 1) continue;
    const double fy = std::clamp(v * md - 0.5, 0.0, md - 1);
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, m - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double u = (static_cast<double>(x) + 0.5 - left) / bw;
      if (u < 0 || u >= 1) continue;
      const double fx = std::clamp(u * md - 0.5, 0.0, md - 1);
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, m - 1);
      const double wx = fx - static_cast<double>(x0);
      const double val = (map[y0 * m + x0] * (1 - wx) + map[y0 * m + x1] * wx) * (1 - wy) +
                         (map[y1 * m + x0] * (1 - wx) + map[y1 * m + x1] * wx) * wy;
      if (val >= threshold) out.set(x, y, true);
    }
  }
  return out;
}

}  // namespace skupatch
