#include "phmdiff/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "phmdiff/error.hpp"
#include "phmdiff/rng.hpp"

namespace phmdiff {

Tensor images_to_tensor(std::span<const Image> images) {
  if (images.empty()) throw ContractError("images_to_tensor: empty batch");
  const int h = images.front().height;
  const int w = images.front().width;
  std::vector<double> data;
  data.reserve(images.size() * static_cast<std::size_t>(h) * w);
  for (const auto& im : images) {
    if (im.height != h || im.width != w) throw ShapeError("images_to_tensor: images differ in size");
    data.insert(data.end(), im.pixels.begin(), im.pixels.end());
  }
  return Tensor::from({static_cast<std::int64_t>(images.size()), 1, h, w}, std::move(data));
}

std::vector<Image> tensor_to_images(const Tensor& batch) {
  if (batch.rank() != 4 || batch.dim(1) != 1) {
    throw ShapeError("tensor_to_images expects [B, 1, H, W], got " + shape_str(batch.shape()));
  }
  const int h = static_cast<int>(batch.dim(2));
  const int w = static_cast<int>(batch.dim(3));
  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::vector<Image> out;
  for (std::int64_t b = 0; b < batch.dim(0); ++b) {
    auto first = batch.data().begin() + b * n;
    out.emplace_back(h, w, std::vector<double>(first, first + n));
  }
  return out;
}

TokenBatch patchify(const Tensor& images, int p) {
  if (images.rank() != 4) throw ShapeError("patchify expects [B, C, H, W], got " + shape_str(images.shape()));
  const std::int64_t B = images.dim(0), C = images.dim(1), H = images.dim(2), W = images.dim(3);
  if (p < 1 || H % p != 0 || W % p != 0) {
    throw ShapeError("patchify: patch size " + std::to_string(p) + " does not divide " + std::to_string(H) + "x" +
                     std::to_string(W));
  }
  const std::int64_t gh = H / p, gw = W / p, N = gh * gw, D = static_cast<std::int64_t>(p) * p * C;
  std::vector<double> out(static_cast<std::size_t>(B * N * D));
  const auto src = images.data();
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t gy = 0; gy < gh; ++gy)
      for (std::int64_t gx = 0; gx < gw; ++gx) {
        double* tok = out.data() + (b * N + gy * gw + gx) * D;
        for (std::int64_t c = 0; c < C; ++c)
          for (int dy = 0; dy < p; ++dy)
            for (int dx = 0; dx < p; ++dx)
              *tok++ = src[((b * C + c) * H + gy * p + dy) * W + gx * p + dx];
      }
  TokenBatch tb;
  tb.tokens = Tensor::from({B, N, D}, std::move(out));
  tb.patch_size = p;
  tb.grid_h = static_cast<int>(gh);
  tb.grid_w = static_cast<int>(gw);
  tb.channels = static_cast<int>(C);
  return tb;
}

Tensor unpatchify(const TokenBatch& tb) {
  const int p = tb.patch_size;
  const std::int64_t B = tb.tokens.dim(0), N = tb.num_tokens(), D = tb.token_dim(), C = tb.channels;
  if (tb.tokens.dim(1) != N || tb.tokens.dim(2) != D) {
    throw ShapeError("unpatchify: token tensor " + shape_str(tb.tokens.shape()) + " does not match grid");
  }
  const std::int64_t H = static_cast<std::int64_t>(tb.grid_h) * p, W = static_cast<std::int64_t>(tb.grid_w) * p;
  std::vector<double> out(static_cast<std::size_t>(B * C * H * W));
  const auto src = tb.tokens.data();
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t gy = 0; gy < tb.grid_h; ++gy)
      for (std::int64_t gx = 0; gx < tb.grid_w; ++gx) {
        const double* tok = src.data() + (b * N + gy * tb.grid_w + gx) * D;
        for (std::int64_t c = 0; c < C; ++c)
          for (int dy = 0; dy < p; ++dy)
            for (int dx = 0; dx < p; ++dx) out[((b * C + c) * H + gy * p + dy) * W + gx * p + dx] = *tok++;
      }
  return Tensor::from({B, C, H, W}, std::move(out));
}

TokenBatch patchify_images(std::span<const Image> images, int patch_size) {
  return patchify(images_to_tensor(images), patch_size);
}

std::vector<Image> unpatchify_images(const Tensor& tokens, int patch_size, int height, int width) {
  TokenBatch tb;
  tb.tokens = tokens;
  tb.patch_size = patch_size;
  tb.grid_h = height / patch_size;
  tb.grid_w = width / patch_size;
  tb.channels = 1;
  return tensor_to_images(unpatchify(tb));
}

std::int64_t masked_count(std::int64_t num_tokens, double ratio) {
  // floor(r N) computed so that exactly representable products are not
  // pushed below an integer by rounding (e.g. 0.29 * 100).
  const double prod = ratio * static_cast<double>(num_tokens);
  auto k = static_cast<std::int64_t>(std::floor(prod));
  if (static_cast<double>(k + 1) - prod <= 1e-9 * std::max(1.0, prod)) ++k;
  return std::min(k, num_tokens);
}

MaskPlan sample_mask(std::int64_t num_tokens, double ratio, std::uint64_t seed) {
  if (num_tokens < 1) throw ContractError("sample_mask: need at least one token");
  if (!(ratio >= 0.0 && ratio < 1.0)) throw ConfigError("mask ratio must lie in [0, 1), got " + std::to_string(ratio));
  MaskPlan plan;
  plan.num_tokens = num_tokens;
  plan.ratio = ratio;
  plan.rng_seed = seed;
  const std::int64_t k = masked_count(num_tokens, ratio);
  std::vector<std::int64_t> perm(static_cast<std::size_t>(num_tokens));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  // partial Fisher-Yates: the first k entries form a uniform k-subset
  for (std::int64_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::int64_t>(rng.uniform_index(static_cast<std::size_t>(num_tokens - i)));
    std::swap(perm[i], perm[j]);
  }
  plan.masked_idx.assign(perm.begin(), perm.begin() + k);
  plan.visible_idx.assign(perm.begin() + k, perm.end());
  std::sort(plan.masked_idx.begin(), plan.masked_idx.end());
  std::sort(plan.visible_idx.begin(), plan.visible_idx.end());
  return plan;
}

MaskPlan full_mask(std::int64_t num_tokens) {
  MaskPlan plan;
  plan.num_tokens = num_tokens;
  plan.masked_idx.resize(static_cast<std::size_t>(num_tokens));
  std::iota(plan.masked_idx.begin(), plan.masked_idx.end(), 0);
  return plan;
}

double level_mask_ratio(int level, int num_levels, double r_fine, double r_coarse) {
  if (!(0.0 <= r_coarse && r_coarse <= r_fine && r_fine < 1.0)) {
    throw ConfigError("mask ratios must satisfy 0 <= r_coarse <= r_fine < 1");
  }
  if (level < 0 || level >= num_levels) throw ContractError("level index out of range");
  if (num_levels == 1) return r_fine;
  const double w = static_cast<double>(level) / (num_levels - 1);
  return std::clamp(r_fine + (r_coarse - r_fine) * w, r_coarse, r_fine);
}

std::vector<std::vector<std::int64_t>> masked_rows(std::span<const MaskPlan> plans) {
  std::vector<std::vector<std::int64_t>> rows;
  for (const auto& p : plans) rows.push_back(p.masked_idx);
  return rows;
}

std::vector<std::vector<std::int64_t>> visible_rows(std::span<const MaskPlan> plans) {
  std::vector<std::vector<std::int64_t>> rows;
  for (const auto& p : plans) rows.push_back(p.visible_idx);
  return rows;
}

namespace {

void check_plans(std::int64_t B, std::int64_t N, std::span<const MaskPlan> plans) {
  if (plans.empty() || (plans.size() != 1 && static_cast<std::int64_t>(plans.size()) != B)) {
    throw ContractError("need one mask plan per batch item or a single shared plan");
  }
  for (const auto& p : plans) {
    if (p.num_tokens != N) {
      throw ContractError("mask plan built for " + std::to_string(p.num_tokens) + " tokens applied to " +
                          std::to_string(N));
    }
    if (p.masked_idx.size() != plans.front().masked_idx.size()) {
      throw ContractError("mask plans in one batch must mask the same number of tokens");
    }
    for (auto i : p.masked_idx)
      if (i < 0 || i >= N) throw ContractError("masked index out of range");
    for (auto i : p.visible_idx)
      if (i < 0 || i >= N) throw ContractError("visible index out of range");
  }
}

}  // namespace

std::pair<Tensor, Tensor> split(const Tensor& tokens, std::span<const MaskPlan> plans) {
  if (tokens.rank() != 3) throw ShapeError("split expects [B, N, D], got " + shape_str(tokens.shape()));
  check_plans(tokens.dim(0), tokens.dim(1), plans);
  Tensor visible, masked;
  if (!plans.front().visible_idx.empty()) visible = gather_rows(tokens, visible_rows(plans));
  if (!plans.front().masked_idx.empty()) masked = gather_rows(tokens, masked_rows(plans));
  return {visible, masked};
}

Tensor scatter(const Tensor& visible, const Tensor& masked, std::span<const MaskPlan> plans) {
  const Tensor& ref = masked.defined() ? masked : visible;
  if (!ref.defined()) throw ContractError("scatter: both parts are empty");
  const std::int64_t B = ref.dim(0), D = ref.dim(2), N = plans.front().num_tokens;
  check_plans(B, N, plans);
  std::vector<double> out(static_cast<std::size_t>(B * N * D));
  auto place = [&](const Tensor& part, bool is_masked) {
    if (!part.defined()) return;
    const auto src = part.data();
    const std::int64_t K = part.dim(1);
    for (std::int64_t b = 0; b < B; ++b) {
      const auto& plan = plans.size() == 1 ? plans[0] : plans[b];
      const auto& idx = is_masked ? plan.masked_idx : plan.visible_idx;
      if (static_cast<std::int64_t>(idx.size()) != K) throw ContractError("scatter: part size does not match plan");
      for (std::int64_t k = 0; k < K; ++k)
        std::copy_n(src.begin() + (b * K + k) * D, D, out.begin() + (b * N + idx[k]) * D);
    }
  };
  place(visible, false);
  place(masked, true);
  return Tensor::from({B, N, D}, std::move(out));
}

}  // namespace phmdiff
