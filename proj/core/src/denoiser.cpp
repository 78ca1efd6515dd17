#include "phmdiff/denoiser.hpp"

#include <cmath>
#include <string>

#include "phmdiff/error.hpp"
#include "phmdiff/rng.hpp"

namespace phmdiff {

namespace {

enum TokenType : std::int64_t { kNoisyToken = 0, kVisibleToken = 1, kLevelToken = 2, kNumTokenTypes = 3 };

std::string block(const char* kind, int i) { return std::string(kind) + std::to_string(i); }

// Every parameter tensor as (name, shape), in creation order.
std::vector<std::pair<std::string, Shape>> layout(const DenoiserConfig& c) {
  const std::int64_t D = c.embed_dim, P = c.token_dim(), H = static_cast<std::int64_t>(c.mlp_ratio) * D;
  std::vector<std::pair<std::string, Shape>> l;
  l.push_back({"embed.noisy.w", {P, D}});
  l.push_back({"embed.noisy.b", {D}});
  l.push_back({"embed.source.w", {P, D}});
  l.push_back({"embed.coarse.w", {P, D}});
  l.push_back({"pos", {static_cast<std::int64_t>(c.num_levels) * c.max_tokens, D}});
  l.push_back({"type", {kNumTokenTypes, D}});
  l.push_back({"level", {c.num_levels, D}});
  l.push_back({"time.w1", {c.time_dim, D}});
  l.push_back({"time.b1", {D}});
  l.push_back({"time.w2", {D, D}});
  l.push_back({"time.b2", {D}});
  auto attn_mlp = [&](const std::string& b) {
    l.push_back({b + ".attn.qkv.w", {D, 3 * D}});
    l.push_back({b + ".attn.qkv.b", {3 * D}});
    l.push_back({b + ".attn.proj.w", {D, D}});
    l.push_back({b + ".attn.proj.b", {D}});
    l.push_back({b + ".mlp.fc1.w", {D, H}});
    l.push_back({b + ".mlp.fc1.b", {H}});
    l.push_back({b + ".mlp.fc2.w", {H, D}});
    l.push_back({b + ".mlp.fc2.b", {D}});
  };
  if (c.encoder_blocks > 0) {
    l.push_back({"enc.embed.w", {P, D}});
    l.push_back({"enc.embed.b", {D}});
    for (int i = 0; i < c.encoder_blocks; ++i) {
      const auto b = block("enc", i);
      l.push_back({b + ".ln1.g", {D}});
      l.push_back({b + ".ln1.b", {D}});
      l.push_back({b + ".ln2.g", {D}});
      l.push_back({b + ".ln2.b", {D}});
      attn_mlp(b);
    }
    l.push_back({"enc.norm.g", {D}});
    l.push_back({"enc.norm.b", {D}});
    l.push_back({"enc.to_dec.w", {D, D}});
    l.push_back({"enc.to_dec.b", {D}});
  }
  for (int i = 0; i < c.decoder_blocks; ++i) {
    const auto b = block("dec", i);
    l.push_back({b + ".ada.w", {D, 6 * D}});
    l.push_back({b + ".ada.b", {6 * D}});
    attn_mlp(b);
  }
  l.push_back({"final.ada.w", {D, 2 * D}});
  l.push_back({"final.ada.b", {2 * D}});
  l.push_back({"final.out.w", {D, P}});
  l.push_back({"final.out.b", {P}});
  return l;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add(matmul(x, w), b); }

}  // namespace

void DenoiserConfig::validate() const {
  if (embed_dim < 1 || num_heads < 1 || embed_dim % num_heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " must be divisible by num_heads " +
                      std::to_string(num_heads));
  }
  if (patch_size < 1 || channels < 1) throw ConfigError("patch size and channel count must be positive");
  if (decoder_blocks < 1 || encoder_blocks < 0) throw ConfigError("need >= 1 decoder block and >= 0 encoder blocks");
  if (max_tokens < 1 || num_levels < 1) throw ConfigError("max_tokens and num_levels must be positive");
  if (time_dim < 2 || time_dim % 2 != 0) throw ConfigError("time_dim must be a positive even number");
  if (mlp_ratio < 1) throw ConfigError("mlp_ratio must be >= 1");
}

std::size_t parameter_count(const DenoiserConfig& config) {
  config.validate();
  std::size_t n = 0;
  for (const auto& [name, shape] : layout(config)) n += static_cast<std::size_t>(shape_numel(shape));
  return n;
}

std::vector<double> sinusoidal_embedding(int t, int dim) {
  if (t < 0) throw ContractError("timestep embedding needs t >= 0");
  if (dim < 2 || dim % 2 != 0) throw ContractError("timestep embedding dim must be even");
  const int half = dim / 2;
  std::vector<double> e(static_cast<std::size_t>(dim));
  for (int i = 0; i < half; ++i) {
    const double f = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
    e[i] = std::sin(t * f);
    e[half + i] = std::cos(t * f);
  }
  return e;
}

Denoiser::Denoiser(DenoiserConfig config, std::uint64_t seed, InitOptions options) : config_(config) {
  config_.validate();
  Rng rng(seed);
  for (const auto& [name, shape] : layout(config_)) {
    const bool is_bias = ends_with(name, ".b") || ends_with(name, ".b1") || ends_with(name, ".b2");
    const bool is_gain = ends_with(name, ".g");
    Tensor t;
    if (is_gain) {
      t = Tensor::full(shape, 1.0);
    } else if (is_bias && !(name.rfind("final.ada", 0) == 0 || name.find(".ada.") != std::string::npos)) {
      t = Tensor::zeros(shape);
    } else if ((options.zero_modulation && name.find(".ada.") != std::string::npos) ||
               (options.zero_output && name.rfind("final.out", 0) == 0)) {
      t = Tensor::zeros(shape);
    } else if (shape.size() == 2 && name != "pos" && name != "type" && name != "level") {
      // Glorot-scaled normal for projection matrices
      const double sd = std::sqrt(2.0 / static_cast<double>(shape[0] + shape[1]));
      t = Tensor::randn(shape, rng, sd);
    } else {
      t = Tensor::randn(shape, rng, options.stddev);
    }
    params_.add(name, std::move(t));
  }
  ones_ = Tensor::full({config_.embed_dim}, 1.0);
  zeros_ = Tensor::zeros({config_.embed_dim});
}

Denoiser Denoiser::clone() const {
  Denoiser copy;
  copy.config_ = config_;
  for (std::size_t i = 0; i < params_.size(); ++i) copy.params_.add(params_.name(i), params_[i].detach());
  copy.ones_ = ones_;
  copy.zeros_ = zeros_;
  return copy;
}

const Tensor& Denoiser::p(const std::string& name) const { return params_.get(name); }

Tensor Denoiser::attention(const Tensor& x, const std::string& prefix) const {
  const std::int64_t D = config_.embed_dim;
  const std::int64_t dh = D / config_.num_heads;
  const Tensor qkv = linear(x, p(prefix + ".attn.qkv.w"), p(prefix + ".attn.qkv.b"));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(config_.num_heads));
  for (int h = 0; h < config_.num_heads; ++h) {
    const Tensor q = slice(qkv, 2, h * dh, dh);
    const Tensor k = slice(qkv, 2, D + h * dh, dh);
    const Tensor v = slice(qkv, 2, 2 * D + h * dh, dh);
    const Tensor weights = softmax(scale(matmul(q, transpose_last(k)), inv_sqrt));
    heads.push_back(matmul(weights, v));
  }
  const Tensor merged = heads.size() == 1 ? heads.front() : concat(heads, 2);
  return linear(merged, p(prefix + ".attn.proj.w"), p(prefix + ".attn.proj.b"));
}

Tensor Denoiser::mlp(const Tensor& x, const std::string& prefix) const {
  const Tensor h = gelu(linear(x, p(prefix + ".mlp.fc1.w"), p(prefix + ".mlp.fc1.b")));
  return linear(h, p(prefix + ".mlp.fc2.w"), p(prefix + ".mlp.fc2.b"));
}

Tensor Denoiser::positions_embedding(const std::vector<std::vector<std::int64_t>>& positions, std::int64_t batch,
                                     std::int64_t count, int level) const {
  if (positions.size() != 1 && static_cast<std::int64_t>(positions.size()) != batch) {
    throw ContractError("need one position list per batch item (or one shared list)");
  }
  std::vector<std::int64_t> rows;
  rows.reserve(static_cast<std::size_t>(batch * count));
  for (std::int64_t b = 0; b < batch; ++b) {
    const auto& pos = positions.size() == 1 ? positions[0] : positions[b];
    if (static_cast<std::int64_t>(pos.size()) != count) {
      throw ContractError("position list has " + std::to_string(pos.size()) + " entries for " +
                          std::to_string(count) + " tokens");
    }
    for (auto i : pos) {
      if (i < 0 || i >= config_.max_tokens) {
        throw ContractError("token position " + std::to_string(i) + " exceeds max_tokens " +
                            std::to_string(config_.max_tokens));
      }
      rows.push_back(static_cast<std::int64_t>(level) * config_.max_tokens + i);
    }
  }
  return embedding(p("pos"), rows, {batch, count});
}

Tensor Denoiser::timestep_embedding(const std::vector<int>& timesteps) const {
  const auto B = static_cast<std::int64_t>(timesteps.size());
  std::vector<double> feats;
  feats.reserve(static_cast<std::size_t>(B * config_.time_dim));
  for (int t : timesteps) {
    const auto e = sinusoidal_embedding(t, config_.time_dim);
    feats.insert(feats.end(), e.begin(), e.end());
  }
  const Tensor s = Tensor::from({B, config_.time_dim}, std::move(feats));
  const Tensor h = silu(linear(s, p("time.w1"), p("time.b1")));
  return linear(h, p("time.w2"), p("time.b2"));
}

Tensor Denoiser::encode_visible(const Tensor& visible, const std::vector<std::vector<std::int64_t>>& positions,
                                int level) const {
  if (config_.encoder_blocks == 0) throw ContractError("encode_visible: denoiser has no encoder blocks");
  if (!visible.defined() || visible.rank() != 3 || visible.dim(1) < 1 || visible.dim(2) != config_.token_dim()) {
    throw ContractError("encode_visible expects [B, N_v >= 1, " + std::to_string(config_.token_dim()) + "] tokens");
  }
  if (level < 0 || level >= config_.num_levels) throw ContractError("level index out of range");
  const std::int64_t B = visible.dim(0), Nv = visible.dim(1);
  Tensor x = linear(visible, p("enc.embed.w"), p("enc.embed.b"));
  x = add(x, positions_embedding(positions, B, Nv, level));
  for (int i = 0; i < config_.encoder_blocks; ++i) {
    const auto b = block("enc", i);
    x = add(x, attention(layer_norm(x, p(b + ".ln1.g"), p(b + ".ln1.b")), b));
    x = add(x, mlp(layer_norm(x, p(b + ".ln2.g"), p(b + ".ln2.b")), b));
  }
  return layer_norm(x, p("enc.norm.g"), p("enc.norm.b"));
}

Tensor Denoiser::predict_noise(const DiffusionStepInput& step) const {
  const int level = step.level;
  const std::int64_t P = config_.token_dim(), D = config_.embed_dim;
  if (level < 0 || level >= config_.num_levels) throw ContractError("level index out of range");
  if (!step.noisy.defined() || step.noisy.rank() != 3 || step.noisy.dim(2) != P) {
    throw ContractError("predict_noise: noisy tokens must be [B, N_m, " + std::to_string(P) + "]");
  }
  if (!step.source.defined()) throw ContractError("predict_noise: missing conditioning stream 'source'");
  const bool needs_coarse = config_.has_coarse_stream(level);
  if (needs_coarse && !step.coarse.defined()) {
    throw ContractError("predict_noise: missing conditioning stream 'coarse' at level " + std::to_string(level));
  }
  if (!needs_coarse && step.coarse.defined()) {
    throw ContractError("predict_noise: coarsest level takes no 'coarse' stream");
  }
  const std::int64_t B = step.noisy.dim(0), Nm = step.noisy.dim(1);
  if (static_cast<std::int64_t>(step.timesteps.size()) != B) {
    throw ContractError("predict_noise: need one timestep per batch item");
  }
  if (step.source.rank() != 3 || step.source.dim(0) != B || step.source.dim(2) != P) {
    throw ContractError("predict_noise: source tokens must be [B, N, " + std::to_string(P) + "]");
  }

  // Noisy-token embedding fused with the same-position conditioning patches.
  Tensor x = linear(step.noisy, p("embed.noisy.w"), p("embed.noisy.b"));
  x = add(x, matmul(gather_rows(step.source, step.noisy_positions), p("embed.source.w")));
  if (needs_coarse) {
    if (step.coarse.shape() != step.source.shape()) {
      throw ContractError("predict_noise: coarse tokens must match source tokens " + shape_str(step.source.shape()));
    }
    x = add(x, matmul(gather_rows(step.coarse, step.noisy_positions), p("embed.coarse.w")));
  }
  x = add(x, positions_embedding(step.noisy_positions, B, Nm, level));
  x = add(x, embedding(p("type"), {kNoisyToken}, {1}));

  std::vector<Tensor> sequence{x};
  if (step.visible.defined()) {
    const std::int64_t Nv = step.visible.dim(1);
    Tensor v = encode_visible(step.visible, step.visible_positions, level);
    v = linear(v, p("enc.to_dec.w"), p("enc.to_dec.b"));
    v = add(v, positions_embedding(step.visible_positions, B, Nv, level));
    v = add(v, embedding(p("type"), {kVisibleToken}, {1}));
    sequence.push_back(v);
  }
  const Tensor level_token =
      add(embedding(p("level"), std::vector<std::int64_t>(static_cast<std::size_t>(B), level), {B, 1}),
          embedding(p("type"), {kLevelToken}, {1}));
  sequence.push_back(level_token);
  Tensor h = concat(sequence, 1);

  const Tensor cond = silu(timestep_embedding(step.timesteps));  // [B, D]
  auto chunk = [&](const Tensor& mod, int i) { return slice(mod, 2, i * D, D); };
  for (int i = 0; i < config_.decoder_blocks; ++i) {
    const auto b = block("dec", i);
    const Tensor mod = reshape(linear(cond, p(b + ".ada.w"), p(b + ".ada.b")), {B, 1, 6 * D});
    Tensor n1 = layer_norm(h, ones_, zeros_);
    n1 = add(mul(n1, add_scalar(chunk(mod, 1), 1.0)), chunk(mod, 0));
    h = add(h, mul(chunk(mod, 2), attention(n1, b)));
    Tensor n2 = layer_norm(h, ones_, zeros_);
    n2 = add(mul(n2, add_scalar(chunk(mod, 4), 1.0)), chunk(mod, 3));
    h = add(h, mul(chunk(mod, 5), mlp(n2, b)));
  }
  const Tensor fmod = reshape(linear(cond, p("final.ada.w"), p("final.ada.b")), {B, 1, 2 * D});
  Tensor out = slice(h, 1, 0, Nm);
  out = layer_norm(out, ones_, zeros_);
  out = add(mul(out, add_scalar(chunk(fmod, 1), 1.0)), chunk(fmod, 0));
  return linear(out, p("final.out.w"), p("final.out.b"));
}

}  // namespace phmdiff
