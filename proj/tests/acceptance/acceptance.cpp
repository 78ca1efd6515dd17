// Acceptance suite. Runs every criterion (or those named on the command line,
// e.g. `phmdiff_acceptance 1 4 7`) and prints one PASS/FAIL line per criterion.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "phmdiff/cgr.hpp"
#include "phmdiff/checkpoint.hpp"
#include "phmdiff/data.hpp"
#include "phmdiff/denoiser.hpp"
#include "phmdiff/diffusion.hpp"
#include "phmdiff/masking.hpp"
#include "phmdiff/metrics.hpp"
#include "phmdiff/pipeline.hpp"
#include "phmdiff/pyramid.hpp"
#include "phmdiff/rng.hpp"

using namespace phmdiff;

namespace {

// ---- pinned tolerances and budgets ----------------------------------------
constexpr int kOpCases = 50;
constexpr double kOpGradTol = 1e-4;
constexpr double kModelGradTol = 1e-3;
constexpr double kAutodiffBudgetS = 120.0;

constexpr int kMarginalSamples = 100000;
constexpr double kMarginalSe = 3.0;
constexpr double kAlphaBarTMax = 0.01;
constexpr int kReverseChains = 10000;
constexpr double kReverseMeanTol = 0.05;
constexpr double kReverseVarTol = 0.05;
constexpr double kDiffusionBudgetS = 300.0;

constexpr int kUniformityDraws = 100000;
constexpr double kChiSquareAlpha = 0.01;

constexpr double kMmdZeroTol = 1e-12;
constexpr double kMmdNonnegTol = 1e-12;
constexpr int kMmdPowerN = 500;
constexpr int kMmdPowerDim = 4;
constexpr int kMmdPowerTrials = 100;
constexpr double kMmdPowerShift = 0.5;
constexpr double kMmdPowerSigmas = 5.0;
constexpr double kMmdGradTol = 1e-4;

constexpr double kPsnrHandValue = 6.0206;
constexpr double kPsnrHandTol = 1e-6;
constexpr double kSsimOracleTol = 1e-10;

constexpr double kLossDropFraction = 0.5;
constexpr double kTTestAlpha = 0.05;
constexpr double kEndToEndBudgetS = 1800.0;

constexpr int kSpeedSeeds = 3;
constexpr double kSpeedMinGain = 0.01;
constexpr int kSpeedMaxInversions = 1;

constexpr int kLayerSamples = 50;
constexpr double kLayerMinFraction = 0.8;

// ---- reporting ------------------------------------------------------------

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int precision = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", precision, v);
  return buf;
}

void log(const std::string& line) { std::cout << "  " << line << std::endl; }

// ---- shared configurations ------------------------------------------------

// Toy denoiser used by every training criterion.
DenoiserConfig toy_model(int num_levels) {
  DenoiserConfig m;
  m.embed_dim = 32;
  m.num_heads = 2;
  m.encoder_blocks = 1;
  m.decoder_blocks = 2;
  m.patch_size = 4;
  m.max_tokens = 256;
  m.num_levels = num_levels;
  m.time_dim = 32;
  m.mlp_ratio = 2;
  return m;
}

TrainConfig toy_train(int num_levels, int timesteps, int epochs, std::uint64_t seed) {
  TrainConfig c;
  c.alpha = 0.5;
  c.num_levels = num_levels;
  c.timesteps = timesteps;
  c.batch_size = 10;
  c.epochs = epochs;
  c.learning_rate = 2e-3;
  c.lambda = 0.1;
  c.r_fine = 0.75;
  c.r_coarse = 0.25;
  c.seed = seed;
  c.model = toy_model(num_levels);
  return c;
}

std::vector<PairedSample> phantoms(int count, int size, double test_fraction, std::uint64_t seed) {
  DatasetSpec spec;
  spec.count = count;
  spec.height = spec.width = size;
  spec.test_fraction = test_fraction;
  spec.seed = seed;
  return generate_dataset(spec);
}

void train_epochs(Trainer& t, int epochs, const std::string& tag) {
  const auto t0 = std::chrono::steady_clock::now();
  for (int e = 0; e < epochs; ++e) {
    const auto r = t.train_epoch();
    if (r.epoch % 25 == 0 || r.epoch == static_cast<std::uint64_t>(epochs)) {
      log(tag + " epoch " + std::to_string(r.epoch) + " combined " + fmt(r.mean.combined) + " (" +
          fmt(seconds_since(t0), 3) + " s)");
    }
  }
}

// ---- 1: autodiff ----------------------------------------------------------

Outcome autodiff_soundness() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string worst_op;
  for (const auto& r : testing::check_all_ops(kOpCases, 20240611)) {
    o.require(r.cases >= kOpCases, r.op + " ran " + std::to_string(r.cases) + " cases");
    o.require(r.max_rel_error < kOpGradTol, r.op + " rel err " + fmt(r.max_rel_error));
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_op = r.op;
    }
  }
  o.detail << "worst op " << worst_op << " rel err " << fmt(worst) << "; ";

  DenoiserConfig c;
  c.embed_dim = 8;
  c.num_heads = 2;
  c.encoder_blocks = 1;
  c.decoder_blocks = 1;
  c.patch_size = 2;
  c.max_tokens = 16;
  c.num_levels = 2;
  c.time_dim = 8;
  c.mlp_ratio = 2;
  Denoiser d(c, 3, {false, false, 0.3});
  Rng rng(4);
  const std::int64_t B = 2, N = 6, Nm = 4, P = c.token_dim();
  DiffusionStepInput in;
  in.noisy = Tensor::randn({B, Nm, P}, rng);
  in.noisy_positions = {{0, 2, 3, 5}, {1, 2, 4, 5}};
  in.visible = Tensor::randn({B, N - Nm, P}, rng);
  in.visible_positions = {{1, 4}, {0, 3}};
  in.source = Tensor::randn({B, N, P}, rng);
  in.coarse = Tensor::randn({B, N, P}, rng);
  in.timesteps = {5, 40};
  in.level = 0;
  const auto w = Tensor::randn({B, Nm, P}, rng);
  std::vector<Tensor> params;
  for (std::size_t i = 0; i < d.params().size(); ++i) params.push_back(d.params()[i]);
  const double model_err = testing::gradient_rel_error([&] { return sum(mul(d.predict_noise(in), w)); }, params);
  o.require(model_err < kModelGradTol, "denoiser rel err " + fmt(model_err));
  o.detail << "denoiser rel err " << fmt(model_err) << "; ";

  const double elapsed = seconds_since(t0);
  o.require(elapsed < kAutodiffBudgetS, "runtime " + fmt(elapsed, 3) + " s");
  o.detail << "runtime " << fmt(elapsed, 3) << " s";
  return o;
}

// ---- 2: diffusion ---------------------------------------------------------

Outcome diffusion_math() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const int T = 1000;
  const auto s = default_schedule(T);

  // (a) one-step composition vs the closed-form marginal
  {
    const double x0 = 0.7;
    Rng rng(11);
    auto x = Tensor::full({kMarginalSamples}, x0);
    const std::set<int> probes{1, 10, 100, 500, 1000};
    double worst = 0.0;
    for (int t = 1; t <= T; ++t) {
      x = q_step(x, t, Tensor::randn({kMarginalSamples}, rng), s);
      if (!probes.count(t)) continue;
      std::vector<double> v(x.data().begin(), x.data().end());
      double m, var;
      testing::moments(v, m, var);
      const double want_m = s.sqrt_alpha_bar(t) * x0, want_v = 1.0 - s.alpha_bar(t);
      const double se_m = std::sqrt(want_v / kMarginalSamples);
      const double se_v = want_v * std::sqrt(2.0 / (kMarginalSamples - 1));
      const double zm = std::fabs(m - want_m) / se_m, zv = std::fabs(var - want_v) / se_v;
      worst = std::max({worst, zm, zv});
      o.require(zm < kMarginalSe, "t=" + std::to_string(t) + " mean off by " + fmt(zm) + " SE");
      o.require(zv < kMarginalSe, "t=" + std::to_string(t) + " variance off by " + fmt(zv) + " SE");
    }
    o.detail << "(a) worst deviation " << fmt(worst, 3) << " SE; ";
  }

  // (b) terminal signal level
  {
    const double abar = s.alpha_bar(T);
    o.require(abar < kAlphaBarTMax, "alpha_bar_T = " + fmt(abar));
    o.detail << "(b) alpha_bar_T " << fmt(abar) << "; ";
  }

  // (c) reverse chains driven by the exact posterior-mean noise of a 1-D dataset
  auto run_chain = [&](double mu, double sd, std::uint64_t seed) {
    Rng init(seed);
    Rng noise[1] = {Rng(seed + 1)};
    auto x = Tensor::randn({kReverseChains, 1, 1}, init);
    for (int t = T; t >= 1; --t) {
      const double ab = s.alpha_bar(t);
      const double scale = std::sqrt(1.0 - ab) / (ab * sd * sd + 1.0 - ab);
      std::vector<double> e(x.data().begin(), x.data().end());
      for (auto& v : e) v = scale * (v - std::sqrt(ab) * mu);
      x = p_sample(x, Tensor::from(x.shape(), e), t, s, noise);
    }
    std::vector<double> v(x.data().begin(), x.data().end());
    double m, var;
    testing::moments(v, m, var);
    return std::pair{m, var};
  };
  {
    const auto [m, var] = run_chain(0.0, 0.0, 21);
    o.require(std::fabs(m) < kReverseMeanTol && var < kReverseVarTol, "point mass mean " + fmt(m) + " var " + fmt(var));
    o.detail << "(c) point mass mean " << fmt(m, 3) << " var " << fmt(var, 3) << "; ";
    const double mu = 0.5, sd = 0.5;
    const auto [gm, gv] = run_chain(mu, sd, 31);
    o.require(std::fabs(gm - mu) < kReverseMeanTol && std::fabs(gv - sd * sd) < kReverseVarTol,
              "gaussian mean " + fmt(gm) + " var " + fmt(gv));
    o.detail << "N(0.5, 0.25) mean " << fmt(gm, 3) << " var " << fmt(gv, 3) << "; ";
  }

  const double elapsed = seconds_since(t0);
  o.require(elapsed < kDiffusionBudgetS, "runtime " + fmt(elapsed, 3) + " s");
  o.detail << "runtime " << fmt(elapsed, 3) << " s";
  return o;
}

// ---- 3: masking -----------------------------------------------------------

Outcome masking() {
  Outcome o;
  // cardinality: r = k / 100, so floor(rN) = floor(kN / 100) in integers
  int cases = 0;
  for (std::int64_t n : {1, 2, 3, 7, 16, 64, 100, 225, 900, 1024}) {
    for (int k : {0, 1, 10, 25, 29, 33, 50, 57, 75, 90, 99}) {
      const auto plan = sample_mask(n, k / 100.0, derive_seed(n, k));
      const auto want = static_cast<std::size_t>(k * n / 100);
      o.require(plan.masked_idx.size() == want, "N=" + std::to_string(n) + " r=" + fmt(k / 100.0));
      o.require(plan.masked_idx.size() + plan.visible_idx.size() == static_cast<std::size_t>(n), "partition size");
      ++cases;
    }
  }
  o.detail << cases << " (N, r) cardinalities exact; ";

  // uniformity: per-position inclusion counts of a fixed-size subset
  for (auto [n, r] : {std::pair<std::int64_t, double>{16, 0.25}, {64, 0.75}}) {
    const auto k = static_cast<double>(masked_count(n, r));
    std::vector<double> counts(static_cast<std::size_t>(n), 0.0);
    for (int d = 0; d < kUniformityDraws; ++d)
      for (auto i : sample_mask(n, r, derive_seed(777, static_cast<std::uint64_t>(d))).masked_idx) counts[i] += 1.0;
    const double p = k / static_cast<double>(n), expected = kUniformityDraws * p;
    // indicator covariance of a uniform k-subset is p(1-p) N/(N-1) (I - J/N)
    const double scale = kUniformityDraws * p * (1.0 - p) * n / (n - 1.0);
    double stat = 0.0;
    for (double c : counts) stat += (c - expected) * (c - expected) / scale;
    const double crit = testing::chi_squared_quantile(n - 1.0, 1.0 - kChiSquareAlpha);
    o.require(stat < crit, "chi-square N=" + std::to_string(n) + " stat " + fmt(stat) + " >= " + fmt(crit));
    o.detail << "chi2(N=" << n << ") " << fmt(stat, 4) << " < " << fmt(crit, 4) << "; ";
  }

  // round-trips
  Rng rng(5);
  bool patch_ok = true, split_ok = true;
  for (int trial = 0; trial < 20; ++trial) {
    const int p = 1 << (trial % 4), gh = 1 + trial % 5, gw = 2 + trial % 3;
    const auto imgs = Tensor::randn({3, 1, gh * p, gw * p}, rng);
    patch_ok &= std::ranges::equal(unpatchify(patchify(imgs, p)).data(), imgs.data());
    const std::int64_t n = gh * gw;
    const auto tokens = Tensor::randn({2, n, p * p}, rng);
    std::vector<MaskPlan> plans{sample_mask(n, 0.5, trial), sample_mask(n, 0.75, trial + 100)};
    if (plans[0].masked_idx.size() != plans[1].masked_idx.size()) plans[1] = sample_mask(n, 0.5, trial + 100);
    const auto [vis, msk] = split(tokens, plans);
    split_ok &= std::ranges::equal(scatter(vis, msk, plans).data(), tokens.data());
  }
  o.require(patch_ok, "patchify round-trip");
  o.require(split_ok, "split/scatter round-trip");
  o.detail << "round-trips bit-exact " << (patch_ok && split_ok ? "yes" : "no");
  return o;
}

// ---- 4: pyramid -----------------------------------------------------------

Outcome pyramid() {
  Outcome o;
  for (int dim : {64, 128, 240, 512}) {
    const int levels = dim == 240 ? 4 : 5;  // 240 -> 120 -> 60 -> 30 stays integral
    const auto d = pyramid_dims(dim, dim, 0.5, levels, 1);
    for (int l = 1; l < levels; ++l) {
      o.require(d[l].first * 2 == d[l - 1].first && d[l].second * 2 == d[l - 1].second,
                std::to_string(dim) + " level " + std::to_string(l));
    }
    Rng rng(static_cast<std::uint64_t>(dim));
    Image img(dim, dim);
    for (auto& v : img.pixels) v = 2.0 * rng.uniform() - 1.0;
    const auto pyr = decompose(img, 0.5, levels, 1);
    for (int l = 0; l < levels; ++l) {
      o.require(pyr.levels[l].height == d[l].first && pyr.levels[l].width == d[l].second, "decompose dims");
    }
    // every level is the 2x2 block mean of the previous one
    for (int l = 1; l < levels; ++l) {
      o.require(pyr.levels[l] == testing::naive_block_mean(pyr.levels[l - 1], 2),
                "block mean at " + std::to_string(dim) + " level " + std::to_string(l));
    }
    const Image flat(dim, dim, -0.3125);
    for (const auto& level : decompose(flat, 0.5, levels, 1).levels) {
      o.require(std::all_of(level.pixels.begin(), level.pixels.end(), [](double v) { return v == -0.3125; }),
                "constant fixed point at " + std::to_string(dim));
    }
  }
  o.detail << "dims {64, 128, 240, 512}: recurrence exact, constant fixed point, block-mean equality";
  return o;
}

// ---- 5: MMD / CGR ---------------------------------------------------------

Outcome mmd_cgr() {
  Outcome o;
  double min_v = 1e300, max_self = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    Rng rng(derive_seed(55, trial));
    const std::int64_t n = 2 + trial % 30, m = 2 + (trial * 7) % 30, d = 1 + trial % 6;
    const auto a = Tensor::randn({n, d}, rng, 0.5 + trial % 3);
    const auto b = Tensor::randn({m, d}, rng);
    min_v = std::min(min_v, mmd2(a, b, KernelSpec{}).item());
    max_self = std::max(max_self, std::fabs(mmd2(a, a, KernelSpec{}).item()));
  }
  o.require(min_v >= -kMmdNonnegTol, "min mmd2 " + fmt(min_v));
  o.require(max_self <= kMmdZeroTol, "max |mmd2(a, a)| " + fmt(max_self));
  o.detail << "min mmd2 " << fmt(min_v, 3) << ", max |mmd2(a,a)| " << fmt(max_self, 3) << "; ";

  std::vector<double> h0, h1;
  for (int trial = 0; trial < kMmdPowerTrials; ++trial) {
    Rng rng(derive_seed(5150, trial));
    const auto x = Tensor::randn({kMmdPowerN, kMmdPowerDim}, rng);
    const auto y0 = Tensor::randn({kMmdPowerN, kMmdPowerDim}, rng);
    const auto y1 = add_scalar(Tensor::randn({kMmdPowerN, kMmdPowerDim}, rng), kMmdPowerShift);
    h0.push_back(mmd2(x, y0, KernelSpec{}).item());
    h1.push_back(mmd2(x, y1, KernelSpec{}).item());
  }
  double m0, v0, m1, v1;
  testing::moments(h0, m0, v0);
  testing::moments(h1, m1, v1);
  const double z = (m1 - m0) / std::sqrt(v0 + v1);
  o.require(z > kMmdPowerSigmas, "separation " + fmt(z) + " sigma");
  o.detail << "separation " << fmt(z, 3) << " sigma; ";

  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    Rng rng(derive_seed(66, trial));
    auto a = Tensor::randn({5 + trial, 3}, rng), b = Tensor::randn({4 + trial, 3}, rng, 1.5);
    // bandwidths are a statistic of the samples; training treats them as constants
    const auto spec = KernelSpec::fixed(resolve_bandwidths(a, b, KernelSpec{}));
    worst = std::max(worst, testing::gradient_rel_error([&] { return mmd2(a, b, spec); }, {a, b}));
  }
  o.require(worst < kMmdGradTol, "gradient rel err " + fmt(worst));
  o.detail << "gradient rel err " << fmt(worst, 3);
  return o;
}

// ---- 6: metrics -----------------------------------------------------------

Outcome metrics() {
  Outcome o;
  Rng rng(8);
  bool ssim_one = true;
  double worst_oracle = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const int h = 11 + trial * 3, w = 11 + trial * 2;
    Image a(h, w), b(h, w);
    for (std::size_t i = 0; i < a.size(); ++i) {
      a.pixels[i] = 2.0 * rng.uniform() - 1.0;
      b.pixels[i] = std::clamp(a.pixels[i] + 0.3 * rng.normal(), -1.0, 1.0);
    }
    ssim_one &= ssim(a, a) == 1.0;
    worst_oracle = std::max(worst_oracle, std::fabs(ssim(a, b) - testing::naive_ssim(a, b)));
  }
  o.require(ssim_one, "SSIM(x, x) != 1");
  o.require(worst_oracle < kSsimOracleTol, "SSIM oracle gap " + fmt(worst_oracle));
  o.detail << "SSIM(x,x)=1 exact; oracle gap " << fmt(worst_oracle, 3) << "; ";

  const double p = psnr(Image(16, 16, 0.0), Image(16, 16, 1.0), 2.0);
  o.require(std::fabs(p - kPsnrHandValue) < kPsnrHandTol, "PSNR " + fmt(p, 10));
  o.detail << "PSNR(MSE=1, range=2) " << fmt(p, 8) << " dB; ";

  const std::vector<double> base{20.0, 21.5, 19.0, 22.0, 18.5, 23.0};
  std::vector<double> a, b;
  for (std::size_t i = 0; i < base.size(); ++i) {
    const double d = 0.25 * static_cast<double>(i + 1);
    a.insert(a.end(), {base[i] + d, base[i] - d});
    b.insert(b.end(), {base[i], base[i]});
  }
  const auto tt = paired_t_test(a, b);
  o.require(tt.p_value == 1.0, "p = " + fmt(tt.p_value, 17));
  o.detail << "antisymmetric t-test p " << fmt(tt.p_value, 17);
  return o;
}

// ---- 7 and 9: end-to-end training -----------------------------------------

struct EndToEnd {
  TrainConfig config;
  std::optional<Trainer> trainer;
};

EndToEnd& end_to_end_model() {
  static EndToEnd state;
  if (!state.trainer) {
    state.config = toy_train(3, 100, 250, 2024);
    auto all = phantoms(40, 64, 0.2, 7);
    state.trainer.emplace(state.config, filter_split(all, Split::kTrain));
  }
  return state;
}

Outcome end_to_end() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  auto& st = end_to_end_model();
  const auto all = phantoms(40, 64, 0.2, 7);
  const auto test = filter_split(all, Split::kTest);
  o.require(filter_split(all, Split::kTrain).size() == 32 && test.size() == 8, "32/8 split");

  auto& trainer = *st.trainer;
  train_epochs(trainer, st.config.epochs, "3-level");
  const auto& hist = trainer.loss_history();
  const double head = std::accumulate(hist.begin(), hist.begin() + 10, 0.0) / 10.0;
  const double tail = std::accumulate(hist.end() - 10, hist.end(), 0.0) / 10.0;
  const double drop = 1.0 - tail / head;
  o.require(drop >= kLossDropFraction, "loss drop " + fmt(drop));
  o.detail << "combined loss " << fmt(head) << " -> " << fmt(tail) << " (drop " << fmt(100.0 * drop, 3) << "%); ";

  const auto trained = evaluate(test, trainer.model(), st.config, 99, "trained");
  const Denoiser untrained_model(st.config.model, derive_seed(st.config.seed, 0));
  const auto untrained = evaluate(test, untrained_model, st.config, 99, "untrained");
  const auto copy = copy_source_baseline(test, "copy source");
  const std::vector<MetricReport> table{trained.report, untrained.report, copy};
  std::cout << format_metric_table(table);

  for (const auto* other : {&untrained.report, &copy}) {
    const auto tt = compare_psnr(trained.report, *other);
    o.require(tt.mean_difference > 0.0 && tt.p_value < kTTestAlpha,
              "vs " + other->task + ": diff " + fmt(tt.mean_difference) + " p " + fmt(tt.p_value));
    o.detail << "vs " << other->task << " +" << fmt(tt.mean_difference, 3) << " dB (p " << fmt(tt.p_value, 3)
             << "); ";
  }
  const double elapsed = seconds_since(t0);
  o.require(elapsed <= kEndToEndBudgetS, "runtime " + fmt(elapsed, 4) + " s");
  o.detail << "runtime " << fmt(elapsed, 4) << " s";
  return o;
}

Outcome layer_progression() {
  Outcome o;
  auto& st = end_to_end_model();
  if (st.trainer->epoch() < static_cast<std::uint64_t>(st.config.epochs)) {
    train_epochs(*st.trainer, st.config.epochs - static_cast<int>(st.trainer->epoch()), "3-level");
  }
  const auto fresh = phantoms(kLayerSamples, 64, 1.0, 4242);
  const auto ev = evaluate(fresh, st.trainer->model(), st.config, 123, "layers");
  int ok = 0;
  std::vector<double> mean_level(3, 0.0);
  for (const auto& lp : ev.level_psnr) {
    bool mono = true;
    for (std::size_t l = 0; l + 1 < lp.size(); ++l) mono &= lp[l] >= lp[l + 1];  // fine >= coarser
    ok += mono;
    for (std::size_t l = 0; l < lp.size(); ++l) mean_level[l] += lp[l] / kLayerSamples;
  }
  const double frac = static_cast<double>(ok) / kLayerSamples;
  o.require(frac >= kLayerMinFraction, "monotone on " + std::to_string(ok) + "/" + std::to_string(kLayerSamples));
  o.detail << "PSNR non-decreasing coarse->fine on " << ok << "/" << kLayerSamples << "; mean PSNR coarse/mid/fine "
           << fmt(mean_level[2], 4) << " / " << fmt(mean_level[1], 4) << " / " << fmt(mean_level[0], 4) << " dB";
  return o;
}

// ---- 8: timesteps ---------------------------------------------------------

Outcome timesteps() {
  Outcome o;
  const auto all = phantoms(40, 32, 0.2, 8);
  const auto train = filter_split(all, Split::kTrain), test = filter_split(all, Split::kTest);
  int inversions = 0;
  double gain = 0.0;
  for (int s = 0; s < kSpeedSeeds; ++s) {
    double score[2];
    for (int k = 0; k < 2; ++k) {
      const int T = k == 0 ? 50 : 1000;
      const auto cfg = toy_train(2, T, 150, 100 + s);
      Trainer t(cfg, train);
      train_epochs(t, cfg.epochs, "seed " + std::to_string(s) + " T=" + std::to_string(T));
      score[k] = evaluate(test, t.model(), cfg, 7 + s, "T").report.ssim_summary().mean;
    }
    log("seed " + std::to_string(s) + ": SSIM T=50 " + fmt(score[0]) + ", T=1000 " + fmt(score[1]));
    inversions += score[1] < score[0];
    gain += (score[1] - score[0]) / kSpeedSeeds;
  }
  o.require(gain > kSpeedMinGain, "mean SSIM gain " + fmt(gain));
  o.require(inversions <= kSpeedMaxInversions, std::to_string(inversions) + " inversions");
  o.detail << "mean SSIM gain T=1000 over T=50 " << fmt(gain, 3) << ", inversions " << inversions << "/"
           << kSpeedSeeds;
  return o;
}

// ---- 10: ablations --------------------------------------------------------

Outcome ablations() {
  Outcome o;
  const auto all = phantoms(20, 32, 0.2, 9);
  const auto train = filter_split(all, Split::kTrain), test = filter_split(all, Split::kTest);
  struct Variant {
    std::string name;
    std::function<void(TrainConfig&)> edit;
  };
  const std::vector<Variant> variants{
      {"full", [](TrainConfig&) {}},
      {"w/o CGR (lambda=0)", [](TrainConfig& c) { c.lambda = 0.0; }},
      {"w/o PH (1 level)",
       [](TrainConfig& c) {
         c.num_levels = 1;
         c.model.num_levels = 1;
       }},
      {"w/o masking (r=0)",
       [](TrainConfig& c) {
         c.r_fine = 0.0;
         c.r_coarse = 0.0;
       }},
  };
  std::vector<MetricReport> rows;
  for (const auto& v : variants) {
    auto cfg = toy_train(2, 50, 100, 5);
    v.edit(cfg);
    try {
      Trainer t(cfg, train);
      train_epochs(t, cfg.epochs, v.name);
      rows.push_back(evaluate(test, t.model(), cfg, 3, v.name).report);
      const auto& r = rows.back();
      o.require(r.images.size() == test.size() && std::isfinite(r.psnr_summary().mean) &&
                    std::isfinite(r.ssim_summary().mean),
                v.name + " metrics");
    } catch (const std::exception& e) {
      o.require(false, v.name + ": " + e.what());
    }
  }
  std::cout << "  ablation table (informational):\n" << format_metric_table(rows);
  o.detail << rows.size() << " variants trained and scored on " << test.size() << " test pairs";
  return o;
}

// ---- 11: reproducibility --------------------------------------------------

Outcome reproducibility() {
  Outcome o;
  const auto all = phantoms(12, 32, 0.25, 10);
  const auto train = filter_split(all, Split::kTrain), test = filter_split(all, Split::kTest);
  const auto cfg = toy_train(2, 50, 4, 77);

  Trainer straight(cfg, train);
  for (int e = 0; e < 2; ++e) straight.train_epoch();
  const auto path = std::filesystem::temp_directory_path() / "phmdiff_acceptance_resume.phmd";
  save_checkpoint(straight.checkpoint(), path);
  for (int e = 2; e < 4; ++e) straight.train_epoch();

  Trainer resumed(cfg, train, load_checkpoint(path));
  for (int e = 2; e < 4; ++e) resumed.train_epoch();
  std::filesystem::remove(path);
  o.require(resumed.loss_history() == straight.loss_history(), "resumed loss history differs");
  o.require(resumed.model().params().flatten() == straight.model().params().flatten(), "resumed parameters differ");
  o.detail << "resume after epoch 2 matches " << straight.loss_history().size() << " losses bit-for-bit; ";

  std::string tables[2];
  for (auto& table : tables) {
    Trainer t(cfg, train);
    for (int e = 0; e < cfg.epochs; ++e) t.train_epoch();
    const std::vector<MetricReport> rows{evaluate(test, t.model(), cfg, 5, "run").report};
    table = format_metric_table(rows) + format_metric_csv(rows);
  }
  o.require(tables[0] == tables[1], "metric tables differ across fresh runs");
  o.detail << "two fresh runs give identical metric tables";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"autodiff soundness", autodiff_soundness},
      {"diffusion math", diffusion_math},
      {"masking", masking},
      {"pyramid", pyramid},
      {"MMD / CGR", mmd_cgr},
      {"metrics", metrics},
      {"end-to-end training", end_to_end},
      {"timesteps T=1000 vs T=50", timesteps},
      {"per-level progression", layer_progression},
      {"ablation hooks", ablations},
      {"reproducibility", reproducibility},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  std::vector<std::string> summary;
  bool all_pass = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    std::cout << "== criterion " << id << ": " << criteria[i].first << std::endl;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    all_pass &= o.pass;
    const std::string line = "criterion " + std::to_string(id) + " (" + criteria[i].first + "): " +
                             (o.pass ? "PASS" : "FAIL") + " - " + o.detail.str() + " [" +
                             fmt(seconds_since(t0), 4) + " s]";
    std::cout << line << std::endl;
    summary.push_back(line);
  }
  std::cout << "\n== summary\n";
  for (const auto& s : summary) std::cout << s << "\n";
  return all_pass ? 0 : 1;
}
