#pragma once

// Static PNG output: orthogonal mid-slice montages and loss curves.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "svin/grid.hpp"

namespace svin::viz {

/// 8-bit RGB raster, row-major.
struct Image {
  int width = 0, height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(int w, int h, std::uint8_t fill = 255) : width(w), height(h), rgb(std::size_t(w) * h * 3, fill) {}

  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    std::uint8_t* p = &rgb[(std::size_t(y) * width + x) * 3];
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }
};

inline void write_png(const std::filesystem::path& path, const Image& img) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("png encoding failed for " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(&img.rgb[std::size_t(y) * img.width * 3]));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

namespace detail {

inline std::uint8_t gray(float v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); }

}  // namespace detail

/// Axial, coronal and sagittal mid-slices side by side, intensities clamped
/// to [0,1], each pixel repeated `zoom` times.
inline Image montage(const std::vector<Volume>& volumes, int zoom = 4) {
  if (volumes.empty()) throw ValidationError("montage needs at least one volume");
  const Dims d = volumes.front().dims();
  const int tile_w = (d.w + d.w + d.h) * zoom + 2 * zoom;
  const int tile_h = std::max(d.h, d.d) * zoom;
  Image img(tile_w, static_cast<int>(volumes.size()) * (tile_h + zoom), 0);
  for (std::size_t r = 0; r < volumes.size(); ++r) {
    const Volume& v = volumes[r];
    if (!(v.dims() == d)) throw ShapeError("montage volumes must share dims");
    const int oy = static_cast<int>(r) * (tile_h + zoom);
    auto put = [&](int ox, int px, int py, float val) {
      const auto g = detail::gray(val);
      for (int a = 0; a < zoom; ++a)
        for (int b = 0; b < zoom; ++b) img.set(ox + px * zoom + b, oy + py * zoom + a, g, g, g);
    };
    for (int y = 0; y < d.h; ++y)
      for (int x = 0; x < d.w; ++x) put(0, x, y, v.at(d.d / 2, y, x));
    const int ox1 = (d.w + 1) * zoom;
    for (int z = 0; z < d.d; ++z)
      for (int x = 0; x < d.w; ++x) put(ox1, x, d.d - 1 - z, v.at(z, d.h / 2, x));
    const int ox2 = ox1 + (d.w + 1) * zoom;
    for (int z = 0; z < d.d; ++z)
      for (int y = 0; y < d.h; ++y) put(ox2, y, d.d - 1 - z, v.at(z, y, d.w / 2));
  }
  return img;
}

/// Loss history on a log10 axis (linear if any value is non-positive).
inline Image loss_curve(const std::vector<double>& history, int width = 640, int height = 360) {
  Image img(width, height, 255);
  const int left = 40, right = 10, top = 10, bottom = 30;
  const int pw = width - left - right, ph = height - top - bottom;
  for (int x = left; x <= left + pw; ++x) img.set(x, top + ph, 0, 0, 0);
  for (int y = top; y <= top + ph; ++y) img.set(left, y, 0, 0, 0);
  if (history.size() < 2) return img;
  const bool log_scale = std::all_of(history.begin(), history.end(), [](double v) { return v > 0; });
  std::vector<double> ys;
  for (double v : history) ys.push_back(log_scale ? std::log10(v) : v);
  const auto [lo_it, hi_it] = std::minmax_element(ys.begin(), ys.end());
  const double lo = *lo_it, span = std::max(*hi_it - lo, 1e-12);
  auto px = [&](std::size_t i) { return left + static_cast<int>(std::lround(double(i) * pw / double(ys.size() - 1))); };
  auto py = [&](std::size_t i) { return top + ph - static_cast<int>(std::lround((ys[i] - lo) / span * ph)); };
  for (std::size_t i = 1; i < ys.size(); ++i) {
    int x0 = px(i - 1), y0 = py(i - 1);
    const int x1 = px(i), y1 = py(i);
    const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      img.set(x0, y0, 200, 40, 40);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }
  return img;
}

}  // namespace svin::viz
