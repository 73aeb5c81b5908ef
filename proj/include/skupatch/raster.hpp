#pragma once

// 8-bit rasters and their binary netpbm encodings (P6 color, P5 gray).

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace skupatch {

/// Interleaved RGB, row-major.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), rgb(w * h * 3, fill) {}

  std::uint8_t* pixel(std::size_t x, std::size_t y) { return &rgb[(y * width + x) * 3]; }
  const std::uint8_t* pixel(std::size_t x, std::size_t y) const { return &rgb[(y * width + x) * 3]; }
  bool operator==(const Image&) const = default;
};

/// Binary mask, one byte per pixel holding 0 or 1.
struct Mask {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(std::size_t w, std::size_t h) : width(w), height(h), data(w * h, 0) {}

  bool at(std::size_t x, std::size_t y) const { return data[y * width + x] != 0; }
  void set(std::size_t x, std::size_t y, bool v) { data[y * width + x] = v ? 1 : 0; }
  std::size_t count() const;
  bool operator==(const Mask&) const = default;
};

/// Inclusive pixel bounds of a non-empty mask.
struct PixelBox {
  int x0 = 0, y0 = 0, x1 = -1, y1 = -1;
  bool empty() const { return x1 < x0 || y1 < y0; }
  bool operator==(const PixelBox&) const = default;
};

PixelBox tight_box(const Mask& mask);

/// Throws InputError on unreadable or malformed files.
Image read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Image& image);
/// Gray values >= 128 read as foreground.
Mask read_pgm_mask(const std::string& path);
/// Foreground written as 255, background as 0.
void write_pgm_mask(const std::string& path, const Mask& mask);

/// Bilinear resampling of an interleaved float plane with half-pixel centers.
std::vector<double> resample_bilinear(const std::vector<double>& src, std::size_t src_w, std::size_t src_h,
                                      std::size_t channels, std::size_t dst_w, std::size_t dst_h);

/// Bilinear resize with rounding back to 8 bits. Throws InputError on a
/// zero-area source or target.
Image resize(const Image& image, std::size_t width, std::size_t height);

}  // namespace skupatch
