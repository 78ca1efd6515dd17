#pragma once

#include <utility>
#include <vector>

#include "phmdiff/image.hpp"

namespace phmdiff {

// Resolution hierarchy, level 0 = original image, each next level scaled by alpha.
struct Pyramid {
  std::vector<Image> levels;  // fine -> coarse
  double alpha = 0.5;

  std::size_t size() const { return levels.size(); }
  const Image& finest() const { return levels.front(); }
  const Image& coarsest() const { return levels.back(); }
};

// Level dimensions H_n = floor(alpha * H_{n-1}) (and likewise W); throws
// ConfigError when a level is empty or not divisible by patch_size.
std::vector<std::pair<int, int>> pyramid_dims(int height, int width, double alpha, int num_levels,
                                              int patch_size);

Pyramid decompose(const Image& image, double alpha, int num_levels, int patch_size);

// Area averaging when 1/alpha is an integer, bilinear resampling otherwise.
Image downsample(const Image& image, double alpha);

// Bilinear (half-pixel centred, edge-clamped) resize to an explicit size.
Image resize_bilinear(const Image& image, int height, int width);

// Upsample by `factor`; output dims are round(dim * factor).
Image upsample(const Image& image, double factor);
// Upsample by `factor` and require the result to land exactly on (height, width).
Image upsample_to(const Image& image, double factor, int height, int width);

// Conditioning bundle for a finer level: the level's own source image plus the
// upsampled reconstruction of the coarser level as a separate channel.
struct ConditioningImage {
  Image source;
  Image coarse;
};

ConditioningImage merge(const Image& coarse_upsampled, const Image& fine_source);

}  // namespace phmdiff
