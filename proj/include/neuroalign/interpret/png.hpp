#pragma once

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "neuroalign/data/array_io.hpp"

namespace neuroalign::interpret {

// 8-bit RGB raster.
struct Image {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::uint8_t fill = 255) : width(w), height(h), rgb(w * h * 3, fill) {}

  void set(std::size_t x, std::size_t y, std::array<std::uint8_t, 3> c) {
    if (x >= width || y >= height) return;
    std::copy(c.begin(), c.end(), rgb.begin() + static_cast<std::ptrdiff_t>((y * width + x) * 3));
  }
  std::array<std::uint8_t, 3> get(std::size_t x, std::size_t y) const {
    const std::size_t i = (y * width + x) * 3;
    return {rgb[i], rgb[i + 1], rgb[i + 2]};
  }

  // Copies `src` with its top-left corner at (x0, y0).
  void blit(const Image& src, std::size_t x0, std::size_t y0) {
    for (std::size_t y = 0; y < src.height; ++y)
      for (std::size_t x = 0; x < src.width; ++x) set(x0 + x, y0 + y, src.get(x, y));
  }
};

// Perceptually ordered dark-blue -> teal -> yellow ramp; t is clamped to [0, 1].
inline std::array<std::uint8_t, 3> colormap(double t) {
  static constexpr std::array<std::array<double, 3>, 5> stops{{
      {68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}}};
  if (!std::isfinite(t)) t = 0.0;
  t = std::clamp(t, 0.0, 1.0) * (stops.size() - 1);
  const std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(t), stops.size() - 2);
  const double f = t - static_cast<double>(i);
  std::array<std::uint8_t, 3> c{};
  for (int k = 0; k < 3; ++k)
    c[static_cast<std::size_t>(k)] =
        static_cast<std::uint8_t>(std::lround(stops[i][static_cast<std::size_t>(k)] * (1 - f) + stops[i + 1][static_cast<std::size_t>(k)] * f));
  return c;
}

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

inline void chunk(std::vector<std::uint8_t>& out, const char* type, const std::vector<std::uint8_t>& payload) {
  put_u32(out, static_cast<std::uint32_t>(payload.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const uLong crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
  put_u32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace detail

inline void write_png(const std::string& path, const Image& img) {
  if (img.width == 0 || img.height == 0) throw std::invalid_argument("write_png: empty image");
  std::vector<std::uint8_t> raw;
  raw.reserve(img.height * (img.width * 3 + 1));
  for (std::size_t y = 0; y < img.height; ++y) {
    raw.push_back(0);  // filter: none
    raw.insert(raw.end(), img.rgb.begin() + static_cast<std::ptrdiff_t>(y * img.width * 3),
               img.rgb.begin() + static_cast<std::ptrdiff_t>((y + 1) * img.width * 3));
  }
  uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> z(zlen);
  if (compress2(z.data(), &zlen, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw std::runtime_error("write_png: compression failed");
  z.resize(zlen);
  std::vector<std::uint8_t> out{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<std::uint8_t> ihdr;
  detail::put_u32(ihdr, static_cast<std::uint32_t>(img.width));
  detail::put_u32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});  // 8-bit RGB, no interlace
  detail::chunk(out, "IHDR", ihdr);
  detail::chunk(out, "IDAT", z);
  detail::chunk(out, "IEND", {});
  data::detail::atomic_write(path, [&](std::ofstream& f) {
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  });
}

// Row-major (rows, cols) values as a heatmap, each cell drawn as a (cell_w x cell_h) block.
inline Image render_heatmap(const std::vector<double>& values, std::size_t rows, std::size_t cols, std::size_t cell_w,
                            std::size_t cell_h, double lo, double hi) {
  Image img(cols * cell_w, rows * cell_h);
  const double span = hi > lo ? hi - lo : 1.0;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const auto col = colormap((values[r * cols + c] - lo) / span);
      for (std::size_t y = 0; y < cell_h; ++y)
        for (std::size_t x = 0; x < cell_w; ++x) img.set(c * cell_w + x, r * cell_h + y, col);
    }
  return img;
}

}  // namespace neuroalign::interpret
