#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace phmdiff {

// Single-channel raster, row-major, intensities nominally in [-1, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(int h, int w, double fill = 0.0);
  Image(int h, int w, std::vector<double> values);

  double& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  double at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return pixels.size(); }
  bool same_dims(const Image& other) const { return height == other.height && width == other.width; }

  friend bool operator==(const Image&, const Image&) = default;
};

double image_mean(const Image& image);
Image clamp_image(const Image& image, double lo = -1.0, double hi = 1.0);

}  // namespace phmdiff
