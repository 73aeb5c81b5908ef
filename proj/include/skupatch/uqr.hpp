#pragma once

// Mask vector codec: an m×m mask map is transformed with the orthonormal 2D
// DCT-II (F = A·S·Aᵀ) and the first n_c coefficients in zigzag order are kept.

#include <cstddef>
#include <span>
#include <vector>

#include "skupatch/raster.hpp"

namespace skupatch {

/// Orthonormal m×m DCT-II matrix A, row k = frequency k.
class DctBasis {
 public:
  explicit DctBasis(std::size_t m);

  std::size_t size() const { return m_; }
  double at(std::size_t k, std::size_t n) const { return a_[k * m_ + n]; }
  const std::vector<double>& matrix() const { return a_; }

  /// Full coefficient map A·S·Aᵀ of a row-major m×m map.
  std::vector<double> forward(std::span<const double> map) const;
  /// Aᵀ·F·A, the inverse of forward.
  std::vector<double> inverse(std::span<const double> coeffs) const;

 private:
  std::size_t m_;
  std::vector<double> a_;
};

/// JPEG-style zigzag traversal of an m×m grid as flat row-major indices.
std::vector<std::size_t> zigzag_order(std::size_t m);

class MaskCodec {
 public:
  /// Throws ConfigError unless 1 <= coeffs <= m².
  MaskCodec(std::size_t m, std::size_t coeffs);

  std::size_t grid() const { return basis_.size(); }
  std::size_t coeffs() const { return coeffs_; }
  const DctBasis& basis() const { return basis_; }

  /// Throws DimensionError unless map has m² entries.
  std::vector<double> encode(std::span<const double> map) const;
  /// Zero-fills the dropped coefficients and inverts; returns the m×m map.
  std::vector<double> decode(std::span<const double> vec) const;

 private:
  DctBasis basis_;
  std::size_t coeffs_;
  std::vector<std::size_t> order_;
};

/// Crops an image-sized mask to `box` and bilinearly resamples it to m×m
/// values in [0, 1].
std::vector<double> mask_to_grid(const Mask& mask, const PixelBox& box, std::size_t m);

/// Inverse of mask_to_grid for a predicted box given as normalized
/// (cx, cy, w, h): every pixel whose center lies inside the box samples the
/// m×m map bilinearly and is foreground when the value is >= threshold.
Mask grid_to_mask(std::span<const double> map, std::size_t m, std::span<const double> box_cxcywh,
                  std::size_t width, std::size_t height, double threshold = 0.5);

}  // namespace skupatch
