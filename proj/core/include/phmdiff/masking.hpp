#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "phmdiff/image.hpp"
#include "phmdiff/tensor.hpp"

namespace phmdiff {

// Flattened non-overlapping p x p patches. Tokens are ordered row-major over
// the patch grid; each token stores its values channel-major, then row, then column.
struct TokenBatch {
  Tensor tokens;  // [B, N, p*p*C]
  int patch_size = 0;
  int grid_h = 0;
  int grid_w = 0;
  int channels = 1;

  std::int64_t batch() const { return tokens.dim(0); }
  std::int64_t num_tokens() const { return static_cast<std::int64_t>(grid_h) * grid_w; }
  std::int64_t token_dim() const { return static_cast<std::int64_t>(patch_size) * patch_size * channels; }
};

// Stacks single-channel images into [B, 1, H, W].
Tensor images_to_tensor(std::span<const Image> images);
std::vector<Image> tensor_to_images(const Tensor& batch);

TokenBatch patchify(const Tensor& images, int patch_size);
Tensor unpatchify(const TokenBatch& tokens);
// Convenience: single-channel images straight to [B, N, p*p] tokens.
TokenBatch patchify_images(std::span<const Image> images, int patch_size);
std::vector<Image> unpatchify_images(const Tensor& tokens, int patch_size, int height, int width);

struct MaskPlan {
  std::int64_t num_tokens = 0;
  std::vector<std::int64_t> masked_idx;   // sorted, |masked| == floor(r N)
  std::vector<std::int64_t> visible_idx;  // sorted complement
  double ratio = 0.0;
  std::uint64_t rng_seed = 0;
};

std::int64_t masked_count(std::int64_t num_tokens, double ratio);

// Uniform random subset of floor(r N) token positions, drawn with a generator seeded by `seed`.
MaskPlan sample_mask(std::int64_t num_tokens, double ratio, std::uint64_t seed);
// Every position masked (used when nothing is hidden from the encoder, e.g. at inference).
MaskPlan full_mask(std::int64_t num_tokens);

// Linear schedule from r_fine at level 0 to r_coarse at the coarsest level.
double level_mask_ratio(int level, int num_levels, double r_fine, double r_coarse);

std::vector<std::vector<std::int64_t>> masked_rows(std::span<const MaskPlan> plans);
std::vector<std::vector<std::int64_t>> visible_rows(std::span<const MaskPlan> plans);

// Gathers [B, N, D] tokens into (visible [B, N_v, D], masked [B, N_m, D]) using
// one plan per batch item (or one shared plan). An empty part is returned undefined.
std::pair<Tensor, Tensor> split(const Tensor& tokens, std::span<const MaskPlan> plans);
// Inverse of split.
Tensor scatter(const Tensor& visible, const Tensor& masked, std::span<const MaskPlan> plans);

}  // namespace phmdiff
