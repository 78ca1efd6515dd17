#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "phmdiff/masking.hpp"
#include "phmdiff/tensor.hpp"

namespace phmdiff {

class Rng;

// Linear variance schedule with every per-step coefficient precomputed.
// Timesteps are 1-based: t in [1, T].
class NoiseSchedule {
 public:
  NoiseSchedule(int steps, double beta_start, double beta_end);

  int steps() const { return steps_; }
  double beta(int t) const { return beta_[index(t)]; }
  double alpha(int t) const { return 1.0 - beta_[index(t)]; }
  double alpha_bar(int t) const { return alpha_bar_[index(t)]; }
  double sqrt_alpha_bar(int t) const { return sqrt_alpha_bar_[index(t)]; }
  double sqrt_one_minus_alpha_bar(int t) const { return sqrt_one_minus_alpha_bar_[index(t)]; }
  // beta_t / sqrt(1 - alpha_bar_t): weight of the noise estimate in the reverse mean.
  double eps_coef(int t) const { return eps_coef_[index(t)]; }
  double inv_sqrt_alpha(int t) const { return inv_sqrt_alpha_[index(t)]; }
  // Reverse-step standard deviation, sigma_t^2 = beta_t.
  double sigma(int t) const { return sigma_[index(t)]; }
  // True posterior variance (1 - abar_{t-1}) / (1 - abar_t) * beta_t, kept for diagnostics.
  double posterior_variance(int t) const { return posterior_variance_[index(t)]; }

  const std::vector<double>& betas() const { return beta_; }
  const std::vector<double>& alpha_bars() const { return alpha_bar_; }

 private:
  std::size_t index(int t) const;

  int steps_;
  std::vector<double> beta_, alpha_bar_, sqrt_alpha_bar_, sqrt_one_minus_alpha_bar_, eps_coef_, inv_sqrt_alpha_,
      sigma_, posterior_variance_;
};

NoiseSchedule make_schedule(int steps, double beta_start, double beta_end);
// Linear 1e-4 -> 0.02 rescaled by 1000 / T (capped at 0.999), so short chains still end near N(0, I).
NoiseSchedule default_schedule(int steps);

// Closed-form forward marginal: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
// `t` holds one timestep (shared) or one per item along axis 0.
Tensor q_sample(const Tensor& x0, std::span<const int> t, const Tensor& eps, const NoiseSchedule& sched);
Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched);

// One forward Markov step: sqrt(1 - beta_t) x_prev + sqrt(beta_t) eps.
Tensor q_step(const Tensor& x_prev, int t, const Tensor& eps, const NoiseSchedule& sched);

// Everything the noise predictor sees for one reverse/training step.
struct DiffusionStepInput {
  Tensor noisy;                                           // x_t at masked positions [B, N_m, D]
  std::vector<std::vector<std::int64_t>> noisy_positions;  // grid index of each noisy token
  Tensor visible;                                         // x_t at visible positions [B, N_v, D] (training only)
  std::vector<std::vector<std::int64_t>> visible_positions;
  Tensor source;  // source-modality tokens over the full grid [B, N, D]
  Tensor coarse;  // upsampled coarser reconstruction tokens [B, N, D]; absent at the coarsest level
  std::vector<int> timesteps;  // one per batch item, each in [1, T]
  int level = 0;
};

// Ancestral reverse step. Returns mu + sigma_t z, with z = 0 at t = 1. Noise for
// item b comes from rngs[b] (or rngs[0] for every item when only one is given).
Tensor p_sample(const Tensor& x_t, const Tensor& eps_hat, int t, const NoiseSchedule& sched, std::span<Rng> rngs);
Tensor p_sample(const DiffusionStepInput& step, const Tensor& eps_hat, const NoiseSchedule& sched,
                std::span<Rng> rngs);

// Mean squared noise-prediction error over masked token positions. `eps` is the
// full [B, N, D] injected noise; `eps_hat` is either full [B, N, D] or already
// restricted to the masked positions [B, N_m, D].
Tensor loss_eps(const Tensor& eps, const Tensor& eps_hat, std::span<const MaskPlan> plans);

}  // namespace phmdiff
