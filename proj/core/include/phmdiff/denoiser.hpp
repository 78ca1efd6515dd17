#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "phmdiff/diffusion.hpp"
#include "phmdiff/optim.hpp"
#include "phmdiff/tensor.hpp"

namespace phmdiff {

class Rng;

struct DenoiserConfig {
  int embed_dim = 64;
  int num_heads = 4;
  int encoder_blocks = 2;
  int decoder_blocks = 4;
  int patch_size = 8;
  int channels = 1;
  int max_tokens = 1024;  // token positions reserved per pyramid level
  int num_levels = 3;
  int time_dim = 64;      // sinusoidal feature width
  int mlp_ratio = 4;
  // Encoder sees clean x_0 visible patches instead of the noisy x_t ones.
  bool encode_clean_visible = false;

  int token_dim() const { return patch_size * patch_size * channels; }
  bool has_coarse_stream(int level) const { return level < num_levels - 1; }
  void validate() const;  // throws ConfigError
};

struct InitOptions {
  bool zero_modulation = true;  // adaLN-Zero: residual gates start closed
  bool zero_output = true;      // output projection starts at zero, so eps_hat = 0
  double stddev = 0.02;
};

// Parameters of the visible-patch encoder and the conditional noise predictor,
// one set shared across pyramid levels.
class Denoiser {
 public:
  Denoiser(DenoiserConfig config, std::uint64_t seed, InitOptions options = {});
  Denoiser(Denoiser&&) = default;
  Denoiser& operator=(Denoiser&&) = default;
  Denoiser(const Denoiser&) = delete;
  Denoiser& operator=(const Denoiser&) = delete;

  // Deep copy with independent parameter storage.
  Denoiser clone() const;

  const DenoiserConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  // Visible tokens [B, N_v, p^2 C] with their grid positions -> latents [B, N_v, D].
  Tensor encode_visible(const Tensor& visible, const std::vector<std::vector<std::int64_t>>& positions,
                        int level) const;

  // Noise estimate for every noisy token: [B, N_m, p^2 C].
  Tensor predict_noise(const DiffusionStepInput& step) const;

  // Sinusoidal features followed by the learned two-layer MLP: [B, D].
  Tensor timestep_embedding(const std::vector<int>& timesteps) const;

 private:
  Tensor attention(const Tensor& x, const std::string& prefix) const;
  Tensor mlp(const Tensor& x, const std::string& prefix) const;
  Tensor positions_embedding(const std::vector<std::vector<std::int64_t>>& positions, std::int64_t batch,
                             std::int64_t count, int level) const;
  const Tensor& p(const std::string& name) const;

  Denoiser() = default;

  DenoiserConfig config_;
  ParameterSet params_;
  Tensor ones_, zeros_;              // affine-free layer norm constants
};

// Number of scalars in a Denoiser built from `config`.
std::size_t parameter_count(const DenoiserConfig& config);

// [sin(t f_0) .. sin(t f_{h-1}), cos(t f_0) .. cos(t f_{h-1})], f_i = 10000^(-i/h), h = dim/2.
std::vector<double> sinusoidal_embedding(int t, int dim);

}  // namespace phmdiff
