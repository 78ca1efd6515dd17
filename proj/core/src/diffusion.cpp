#include "phmdiff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "phmdiff/error.hpp"
#include "phmdiff/rng.hpp"

namespace phmdiff {

NoiseSchedule::NoiseSchedule(int steps, double beta_start, double beta_end) : steps_(steps) {
  if (steps < 1) throw ConfigError("schedule needs T >= 1, got " + std::to_string(steps));
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ConfigError("schedule needs 0 < beta_start <= beta_end < 1, got [" + std::to_string(beta_start) + ", " +
                      std::to_string(beta_end) + "]");
  }
  const auto T = static_cast<std::size_t>(steps);
  beta_.resize(T);
  alpha_bar_.resize(T);
  sqrt_alpha_bar_.resize(T);
  sqrt_one_minus_alpha_bar_.resize(T);
  eps_coef_.resize(T);
  inv_sqrt_alpha_.resize(T);
  sigma_.resize(T);
  posterior_variance_.resize(T);
  double running = 1.0;
  for (std::size_t i = 0; i < T; ++i) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(T - 1);
    const double b = beta_start + (beta_end - beta_start) * frac;
    const double prev = running;
    running *= 1.0 - b;
    beta_[i] = b;
    alpha_bar_[i] = running;
    sqrt_alpha_bar_[i] = std::sqrt(running);
    sqrt_one_minus_alpha_bar_[i] = std::sqrt(1.0 - running);
    eps_coef_[i] = b / std::sqrt(1.0 - running);
    inv_sqrt_alpha_[i] = 1.0 / std::sqrt(1.0 - b);
    sigma_[i] = std::sqrt(b);
    posterior_variance_[i] = (1.0 - prev) / (1.0 - running) * b;
  }
}

std::size_t NoiseSchedule::index(int t) const {
  if (t < 1 || t > steps_) {
    throw ContractError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps_) + "]");
  }
  return static_cast<std::size_t>(t - 1);
}

NoiseSchedule make_schedule(int steps, double beta_start, double beta_end) {
  return NoiseSchedule(steps, beta_start, beta_end);
}

NoiseSchedule default_schedule(int steps) {
  if (steps < 1) throw ConfigError("schedule needs T >= 1");
  const double s = 1000.0 / steps;
  // very short chains would push beta to 1; cap it so every step keeps some signal
  return NoiseSchedule(steps, std::min(1e-4 * s, 0.999), std::min(0.02 * s, 0.999));
}

namespace {

void same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ContractError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace

Tensor q_sample(const Tensor& x0, std::span<const int> t, const Tensor& eps, const NoiseSchedule& sched) {
  same_shape(x0, eps, "q_sample");
  const std::int64_t B = x0.rank() == 0 ? 1 : x0.dim(0);
  if (t.size() != 1 && static_cast<std::int64_t>(t.size()) != B) {
    throw ContractError("q_sample: need one timestep or one per batch item");
  }
  const std::size_t per_item = x0.numel() / static_cast<std::size_t>(t.size() == 1 ? 1 : B);
  std::vector<double> out(x0.numel());
  const auto xv = x0.data();
  const auto ev = eps.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const int ti = t.size() == 1 ? t[0] : t[i / per_item];
    out[i] = sched.sqrt_alpha_bar(ti) * xv[i] + sched.sqrt_one_minus_alpha_bar(ti) * ev[i];
  }
  return Tensor::from(x0.shape(), std::move(out));
}

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
  const int ts[1] = {t};
  return q_sample(x0, std::span<const int>(ts), eps, sched);
}

Tensor q_step(const Tensor& x_prev, int t, const Tensor& eps, const NoiseSchedule& sched) {
  same_shape(x_prev, eps, "q_step");
  const double keep = std::sqrt(1.0 - sched.beta(t));
  const double noise = std::sqrt(sched.beta(t));
  std::vector<double> out(x_prev.numel());
  const auto xv = x_prev.data();
  const auto ev = eps.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = keep * xv[i] + noise * ev[i];
  return Tensor::from(x_prev.shape(), std::move(out));
}

Tensor p_sample(const Tensor& x_t, const Tensor& eps_hat, int t, const NoiseSchedule& sched, std::span<Rng> rngs) {
  same_shape(x_t, eps_hat, "p_sample");
  const double inv = sched.inv_sqrt_alpha(t);
  const double coef = sched.eps_coef(t);
  const double sigma = t > 1 ? sched.sigma(t) : 0.0;
  const std::int64_t B = x_t.rank() == 0 ? 1 : x_t.dim(0);
  if (t > 1 && rngs.size() != 1 && static_cast<std::int64_t>(rngs.size()) != B) {
    throw ContractError("p_sample: need one generator or one per batch item");
  }
  const std::size_t per_item = x_t.numel() / static_cast<std::size_t>(B);
  std::vector<double> out(x_t.numel());
  const auto xv = x_t.data();
  const auto ev = eps_hat.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double mu = inv * (xv[i] - coef * ev[i]);
    double z = 0.0;
    if (sigma > 0.0) z = (rngs.size() == 1 ? rngs[0] : rngs[i / per_item]).normal();
    out[i] = mu + sigma * z;
  }
  return Tensor::from(x_t.shape(), std::move(out));
}

Tensor p_sample(const DiffusionStepInput& step, const Tensor& eps_hat, const NoiseSchedule& sched,
                std::span<Rng> rngs) {
  if (step.timesteps.empty()) throw ContractError("p_sample: no timestep given");
  for (int t : step.timesteps)
    if (t != step.timesteps.front()) throw ContractError("p_sample: batch items must share the reverse timestep");
  return p_sample(step.noisy, eps_hat, step.timesteps.front(), sched, rngs);
}

Tensor loss_eps(const Tensor& eps, const Tensor& eps_hat, std::span<const MaskPlan> plans) {
  if (eps.rank() != 3) throw ContractError("loss_eps expects [B, N, D] noise, got " + shape_str(eps.shape()));
  if (plans.empty() || plans.front().masked_idx.empty()) {
    throw ContractError("loss_eps: masked set is empty; training needs floor(rN) >= 1");
  }
  const auto rows = masked_rows(plans);
  const Tensor target = gather_rows(eps, rows);
  if (eps_hat.shape() == eps.shape() && eps.dim(1) != target.dim(1)) return mse(target, gather_rows(eps_hat, rows));
  if (eps_hat.shape() != target.shape()) {
    throw ContractError("loss_eps: prediction shape " + shape_str(eps_hat.shape()) + " matches neither " +
                        shape_str(eps.shape()) + " nor " + shape_str(target.shape()));
  }
  return mse(target, eps_hat);
}

}  // namespace phmdiff
