#pragma once

#include <cstddef>
#include <vector>

namespace ptadet {

/// H×W×3 float raster, values in [0, 1], row-major.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), pixels(h * w * 3, fill) {}
  double& at(std::size_t row, std::size_t col, std::size_t ch) { return pixels[(row * width + col) * 3 + ch]; }
  double at(std::size_t row, std::size_t col, std::size_t ch) const { return pixels[(row * width + col) * 3 + ch]; }
};

/// H×W boolean raster.
struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<unsigned char> bits;

  Mask() = default;
  Mask(std::size_t h, std::size_t w, bool fill = false) : height(h), width(w), bits(h * w, fill ? 1 : 0) {}
  bool at(std::size_t row, std::size_t col) const { return bits[row * width + col] != 0; }
  void set(std::size_t row, std::size_t col, bool on = true) { bits[row * width + col] = on ? 1 : 0; }
};

}  // namespace ptadet
