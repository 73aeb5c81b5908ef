#include "skupatch/raster.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "skupatch/errors.hpp"

namespace skupatch {

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
}

PixelBox tight_box(const Mask& mask) {
  PixelBox b{static_cast<int>(mask.width), static_cast<int>(mask.height), -1, -1};
  for (std::size_t y = 0; y < mask.height; ++y) {
    for (std::size_t x = 0; x < mask.width; ++x) {
      if (!mask.at(x, y)) continue;
      b.x0 = std::min(b.x0, static_cast<int>(x));
      b.y0 = std::min(b.y0, static_cast<int>(y));
      b.x1 = std::max(b.x1, static_cast<int>(x));
      b.y1 = std::max(b.y1, static_cast<int>(y));
    }
  }
  if (b.x1 < 0) return PixelBox{};
  return b;
}

namespace {

// Reads the netpbm header fields, skipping comments.
std::size_t read_header_int(std::istream& in, const std::string& path) {
  while (true) {
    const int c = in.peek();
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  long long v = -1;
  in >> v;
  if (!in || v <= 0 || v > 1 << 20) throw InputError(path + ": malformed netpbm header");
  return static_cast<std::size_t>(v);
}

std::vector<std::uint8_t> read_netpbm(const std::string& path, const char* magic, std::size_t channels,
                                      std::size_t& w, std::size_t& h) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  std::string m(2, '\0');
  in.read(m.data(), 2);
  if (!in || m != magic) throw InputError(path + ": expected " + std::string(magic) + " netpbm file");
  w = read_header_int(in, path);
  h = read_header_int(in, path);
  const std::size_t maxval = read_header_int(in, path);
  if (maxval != 255) throw InputError(path + ": only maxval 255 is supported");
  if (!std::isspace(in.get())) throw InputError(path + ": malformed netpbm header");
  std::vector<std::uint8_t> bytes(w * h * channels);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size()) throw InputError(path + ": truncated pixel data");
  return bytes;
}

void write_netpbm(const std::string& path, const char* magic, std::size_t w, std::size_t h,
                  const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  out << magic << "\n" << w << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("write failed for " + path);
}

}  // namespace

Image read_ppm(const std::string& path) {
  Image img;
  img.rgb = read_netpbm(path, "P6", 3, img.width, img.height);
  return img;
}

void write_ppm(const std::string& path, const Image& image) {
  write_netpbm(path, "P6", image.width, image.height, image.rgb);
}

Mask read_pgm_mask(const std::string& path) {
  Mask m;
  m.data = read_netpbm(path, "P5", 1, m.width, m.height);
  for (auto& v : m.data) v = v >= 128 ? 1 : 0;
  return m;
}

void write_pgm_mask(const std::string& path, const Mask& mask) {
  std::vector<std::uint8_t> bytes(mask.data.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = mask.data[i] ? 255 : 0;
  write_netpbm(path, "P5", mask.width, mask.height, bytes);
}

std::vector<double> resample_bilinear(const std::vector<double>& src, std::size_t src_w, std::size_t src_h,
                                      std::size_t channels, std::size_t dst_w, std::size_t dst_h) {
  std::vector<double> dst(dst_w * dst_h * channels);
  const double sx = static_cast<double>(src_w) / static_cast<double>(dst_w);
  const double sy = static_cast<double>(src_h) / static_cast<double>(dst_h);
  for (std::size_t y = 0; y < dst_h; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(src_h - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, src_h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < dst_w; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(src_w - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, src_w - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < channels; ++c) {
        auto s = [&](std::size_t xx, std::size_t yy) { return src[(yy * src_w + xx) * channels + c]; };
        const double top = s(x0, y0) * (1 - wx) + s(x1, y0) * wx;
        const double bot = s(x0, y1) * (1 - wx) + s(x1, y1) * wx;
        dst[(y * dst_w + x) * channels + c] = top * (1 - wy) + bot * wy;
      }
    }
  }
  return dst;
}

Image resize(const Image& image, std::size_t width, std::size_t height) {
  if (image.width == 0 || image.height == 0) throw InputError("cannot resample a zero-area raster");
  if (width == 0 || height == 0) throw InputError("cannot resample to a zero-area raster");
  if (image.width == width && image.height == height) return image;
  std::vector<double> src(image.rgb.begin(), image.rgb.end());
  const auto dst = resample_bilinear(src, image.width, image.height, 3, width, height);
  Image out(width, height);
  for (std::size_t i = 0; i < dst.size(); ++i) {
    out.rgb[i] = static_cast<std::uint8_t>(std::clamp(std::lround(dst[i]), 0L, 255L));
  }
  return out;
}

}  // namespace skupatch
