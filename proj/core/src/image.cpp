#include "phmdiff/image.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "phmdiff/error.hpp"

namespace phmdiff {

Image::Image(int h, int w, double fill) : height(h), width(w) {
  if (h <= 0 || w <= 0) throw ShapeError("image dimensions must be positive");
  pixels.assign(static_cast<std::size_t>(h) * w, fill);
}

Image::Image(int h, int w, std::vector<double> values) : height(h), width(w), pixels(std::move(values)) {
  if (h <= 0 || w <= 0) throw ShapeError("image dimensions must be positive");
  if (pixels.size() != static_cast<std::size_t>(h) * w) {
    throw ShapeError("image buffer holds " + std::to_string(pixels.size()) + " values for " + std::to_string(h) +
                     "x" + std::to_string(w));
  }
}

double image_mean(const Image& image) {
  return std::accumulate(image.pixels.begin(), image.pixels.end(), 0.0) / static_cast<double>(image.size());
}

Image clamp_image(const Image& image, double lo, double hi) {
  Image out = image;
  for (auto& v : out.pixels) v = std::clamp(v, lo, hi);
  return out;
}

}  // namespace phmdiff
