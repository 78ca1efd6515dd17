#include "phmdiff/pyramid.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "phmdiff/error.hpp"

namespace phmdiff {

namespace {

// Returns k when 1/alpha is (numerically) the integer k, else 0.
int integer_inverse(double alpha) {
  const double inv = 1.0 / alpha;
  const double k = std::round(inv);
  return std::abs(inv - k) < 1e-9 && k >= 1.0 ? static_cast<int>(k) : 0;
}

int scaled_dim(int dim, double alpha) {
  // floor with a small tolerance so that e.g. 0.1 * 240 lands on 24.
  return static_cast<int>(std::floor(alpha * dim + 1e-9));
}

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ConfigError("scale factor alpha must lie in (0, 1), got " + std::to_string(alpha));
  }
}

}  // namespace

std::vector<std::pair<int, int>> pyramid_dims(int height, int width, double alpha, int num_levels,
                                              int patch_size) {
  check_alpha(alpha);
  if (num_levels < 1) throw ConfigError("num_levels must be >= 1");
  if (patch_size < 1) throw ConfigError("patch size must be >= 1");
  std::vector<std::pair<int, int>> dims;
  int h = height, w = width;
  for (int n = 0; n < num_levels; ++n) {
    if (n > 0) {
      h = scaled_dim(h, alpha);
      w = scaled_dim(w, alpha);
    }
    if (h < 1 || w < 1 || h % patch_size != 0 || w % patch_size != 0) {
      throw ConfigError("pyramid level " + std::to_string(n) + " has dims " + std::to_string(h) + "x" +
                        std::to_string(w) + ", not divisible by patch size " + std::to_string(patch_size));
    }
    dims.emplace_back(h, w);
  }
  return dims;
}

Pyramid decompose(const Image& image, double alpha, int num_levels, int patch_size) {
  if (num_levels < 2) throw ConfigError("a pyramid needs at least 2 levels, got " + std::to_string(num_levels));
  const auto dims = pyramid_dims(image.height, image.width, alpha, num_levels, patch_size);
  Pyramid p;
  p.alpha = alpha;
  p.levels.push_back(image);
  for (std::size_t n = 1; n < dims.size(); ++n) p.levels.push_back(downsample(p.levels.back(), alpha));
  return p;
}

Image downsample(const Image& image, double alpha) {
  check_alpha(alpha);
  const int oh = scaled_dim(image.height, alpha);
  const int ow = scaled_dim(image.width, alpha);
  if (oh < 1 || ow < 1) throw ContractError("downsample would produce an empty image");
  const int k = integer_inverse(alpha);
  if (k == 0) return resize_bilinear(image, oh, ow);
  Image out(oh, ow);
  const double inv_area = 1.0 / (static_cast<double>(k) * k);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int dy = 0; dy < k; ++dy)
        for (int dx = 0; dx < k; ++dx) acc += image.at(y * k + dy, x * k + dx);
      out.at(y, x) = acc * inv_area;
    }
  return out;
}

Image resize_bilinear(const Image& image, int height, int width) {
  if (height < 1 || width < 1) throw ContractError("resize target must be non-empty");
  Image out(height, width);
  const double sy = static_cast<double>(image.height) / height;
  const double sx = static_cast<double>(image.width) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - x0;
      const double top = image.at(y0, x0) * (1.0 - wx) + image.at(y0, x1) * wx;
      const double bottom = image.at(y1, x0) * (1.0 - wx) + image.at(y1, x1) * wx;
      out.at(y, x) = top * (1.0 - wy) + bottom * wy;
    }
  }
  return out;
}

Image upsample(const Image& image, double factor) {
  if (!(factor > 1.0)) throw ContractError("upsample factor must exceed 1");
  return resize_bilinear(image, static_cast<int>(std::lround(image.height * factor)),
                         static_cast<int>(std::lround(image.width * factor)));
}

Image upsample_to(const Image& image, double factor, int height, int width) {
  Image out = upsample(image, factor);
  if (out.height != height || out.width != width) {
    throw ContractError("upsampled dims " + std::to_string(out.height) + "x" + std::to_string(out.width) +
                        " do not match target level " + std::to_string(height) + "x" + std::to_string(width));
  }
  return out;
}

ConditioningImage merge(const Image& coarse_upsampled, const Image& fine_source) {
  if (!coarse_upsampled.same_dims(fine_source)) {
    throw ContractError("merge: coarse channel " + std::to_string(coarse_upsampled.height) + "x" +
                        std::to_string(coarse_upsampled.width) + " vs source " + std::to_string(fine_source.height) +
                        "x" + std::to_string(fine_source.width));
  }
  return ConditioningImage{fine_source, coarse_upsampled};
}

}  // namespace phmdiff
