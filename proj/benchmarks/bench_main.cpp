#include <benchmark/benchmark.h>

#include "phmdiff/cgr.hpp"
#include "phmdiff/data.hpp"
#include "phmdiff/denoiser.hpp"
#include "phmdiff/diffusion.hpp"
#include "phmdiff/metrics.hpp"
#include "phmdiff/pipeline.hpp"
#include "phmdiff/rng.hpp"
#include "phmdiff/tensor.hpp"

using namespace phmdiff;

namespace {

DenoiserConfig toy(int levels) {
  DenoiserConfig c;
  c.embed_dim = 32;
  c.num_heads = 2;
  c.encoder_blocks = 1;
  c.decoder_blocks = 2;
  c.patch_size = 4;
  c.max_tokens = 256;
  c.num_levels = levels;
  c.time_dim = 32;
  c.mlp_ratio = 2;
  return c;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = state.range(0);
  Rng rng(1);
  const auto a = Tensor::randn({n, n}, rng), b = Tensor::randn({n, n}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_PredictNoise(benchmark::State& state) {
  const auto tokens = state.range(0);
  const auto c = toy(1);
  Denoiser d(c, 1, {false, false, 0.02});
  Rng rng(2);
  DiffusionStepInput in;
  const std::int64_t B = 8, P = c.token_dim();
  in.noisy = Tensor::randn({B, tokens, P}, rng);
  std::vector<std::int64_t> pos(static_cast<std::size_t>(tokens));
  for (std::int64_t i = 0; i < tokens; ++i) pos[i] = i;
  in.noisy_positions.assign(B, pos);
  in.source = Tensor::randn({B, tokens, P}, rng);
  in.timesteps.assign(B, 10);
  for (auto _ : state) benchmark::DoNotOptimize(d.predict_noise(in));
}
BENCHMARK(BM_PredictNoise)->Arg(16)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_Mmd2(benchmark::State& state) {
  const auto n = state.range(0);
  Rng rng(3);
  const auto a = Tensor::randn({n, 16}, rng), b = Tensor::randn({n, 16}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(mmd2(a, b, KernelSpec{}));
}
BENCHMARK(BM_Mmd2)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_Ssim(benchmark::State& state) {
  const auto p = generate_phantom_pair(4, 64, 64, 0.5);
  for (auto _ : state) benchmark::DoNotOptimize(ssim(p.target, p.source));
}
BENCHMARK(BM_Ssim);

void BM_TrainStep(benchmark::State& state) {
  TrainConfig c;
  c.num_levels = 3;
  c.timesteps = 100;
  c.batch_size = 10;
  c.learning_rate = 2e-3;
  c.model = toy(3);
  DatasetSpec spec;
  spec.count = 10;
  spec.test_fraction = 0.0;
  Trainer t(c, generate_dataset(spec));
  std::vector<std::size_t> items{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  for (auto _ : state) benchmark::DoNotOptimize(t.train_step(items));
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond)->Iterations(5);

void BM_SampleOneImage(benchmark::State& state) {
  TrainConfig c;
  c.num_levels = 3;
  c.timesteps = static_cast<int>(state.range(0));
  c.model = toy(3);
  const Denoiser d(c.model, 1, {false, false, 0.02});
  const auto src = generate_phantom_pair(5, 64, 64, 0.5).source;
  for (auto _ : state) benchmark::DoNotOptimize(sample_hierarchical(src, d, c, 1));
}
BENCHMARK(BM_SampleOneImage)->Arg(10)->Arg(50)->Unit(benchmark::kMillisecond)->Iterations(2);

}  // namespace

BENCHMARK_MAIN();
