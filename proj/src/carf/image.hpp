#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace carf {

// Row-major scalar field over pixels.
struct FloatImage {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  FloatImage() = default;
  FloatImage(int w, int h, double fill = 0.0)
      : width(w), height(h), data(static_cast<size_t>(w) * static_cast<size_t>(h), fill) {}

  double& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
  double at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }
  int64_t pixels() const { return static_cast<int64_t>(width) * height; }
};

// Binary mask, stored in memory as 0/1 bytes; files use PGM {0,255}.
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> data;

  Mask() = default;
  Mask(int w, int h, uint8_t fill = 0)
      : width(w), height(h), data(static_cast<size_t>(w) * static_cast<size_t>(h), fill) {}

  uint8_t& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
  uint8_t at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }
  int64_t pixels() const { return static_cast<int64_t>(width) * height; }
  int64_t count() const {
    int64_t n = 0;
    for (uint8_t v : data) n += v;
    return n;
  }
  bool empty_mask() const { return count() == 0; }
};

// 8-bit binary PGM (P5, maxval 255), pixel values restricted to {0,255}.
void save_mask_pgm(const Mask& mask, const std::string& path);
Mask load_mask_pgm(const std::string& path);

// Grayscale P5 dump of a [0,1] field: round(v*255), clamped.
void save_gray_pgm(const FloatImage& img, const std::string& path);

// Raw little-endian f32 dump plus a JSON sidecar ("<path>.json") recording
// {"width","height"}.
void save_f32_raw(const FloatImage& img, const std::string& path);
FloatImage load_f32_raw(const std::string& path);

}  // namespace carf
