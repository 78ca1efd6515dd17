#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "phmdiff/cgr.hpp"
#include "phmdiff/checkpoint.hpp"
#include "phmdiff/data.hpp"
#include "phmdiff/denoiser.hpp"
#include "phmdiff/diffusion.hpp"
#include "phmdiff/image.hpp"
#include "phmdiff/metrics.hpp"
#include "phmdiff/optim.hpp"
#include "phmdiff/pyramid.hpp"
#include "phmdiff/rng.hpp"

namespace phmdiff {

struct TrainConfig {
  double alpha = 0.5;
  int num_levels = 3;
  int timesteps = 1000;  // T; schedule is default_schedule(T)
  int batch_size = 10;
  int epochs = 100;
  double learning_rate = 1e-4;
  double lambda = 0.1;  // CGR weight
  double r_fine = 0.75;
  double r_coarse = 0.25;
  std::uint64_t seed = 0;
  int checkpoint_every = 10;  // epochs
  int cgr_max_samples = 256;  // per level, drawn from the batch's masked tokens
  DenoiserConfig model;       // model.num_levels is kept equal to num_levels

  void validate() const;  // throws ConfigError
};

std::string train_config_json(const TrainConfig& config);
// Fields absent from `json` keep their value in `defaults`.
TrainConfig train_config_from_json(const std::string& json, const TrainConfig& defaults = {});
// Digest of every field that changes the optimization trajectory (epochs and cadence excluded).
std::uint64_t train_config_hash(const TrainConfig& config);

// Level pyramid of an image; a single-level config yields just the image.
Pyramid build_pyramid(const Image& image, const TrainConfig& config);

struct StepLosses {
  std::vector<double> eps_per_level;  // fine -> coarse
  std::vector<double> cgr_per_level;  // unweighted MMD^2, fine -> coarse
  double eps = 0.0;                   // sum over levels
  double cgr = 0.0;                   // lambda * sum over levels
  double combined = 0.0;
};

struct EpochRecord {
  std::uint64_t epoch = 0;
  StepLosses mean;  // averaged over the epoch's steps
};

// Owns the parameters, the optimizer state and the training generator.
class Trainer {
 public:
  Trainer(TrainConfig config, std::vector<PairedSample> train);
  Trainer(TrainConfig config, std::vector<PairedSample> train, const Checkpoint& resume);

  const TrainConfig& config() const { return config_; }
  const Denoiser& model() const { return model_; }
  Denoiser& model() { return model_; }
  std::uint64_t epoch() const { return epoch_; }
  std::uint64_t step() const { return step_; }
  const std::vector<double>& loss_history() const { return history_; }

  // One optimizer step on the given training items. Either every level
  // succeeds and the parameters move, or nothing changes.
  StepLosses train_step(std::span<const std::size_t> items);
  // Shuffled pass over the training set in batches of batch_size.
  EpochRecord train_epoch();

  Checkpoint checkpoint() const;

 private:
  struct LevelData {
    std::vector<double> target, source, coarse;  // tokens [N, P] per item
    std::int64_t tokens = 0;
  };

  void prepare();

  TrainConfig config_;
  std::vector<PairedSample> train_;
  std::vector<std::vector<LevelData>> cache_;  // [item][level]
  NoiseSchedule schedule_;
  KernelSpec kernel_;
  Denoiser model_;
  AdamState adam_;
  Rng rng_;
  std::uint64_t epoch_ = 0;
  std::uint64_t step_ = 0;
  std::vector<double> history_;
};

struct SampleTrace {
  std::vector<Image> levels;             // generated outputs, fine -> coarse
  std::vector<int> steps_per_level;      // reverse steps run at each level, fine -> coarse
  std::uint64_t seed = 0;
  std::vector<std::vector<Image>> snapshots;  // per level (fine -> coarse): x_t images every snapshot_every steps

  const Image& output() const { return levels.front(); }
};

struct SampleOptions {
  int snapshot_every = 0;  // 0 disables snapshots
};

// Coarse-to-fine generation: full reverse chain at the coarsest level from
// pure noise, then at every finer level conditioned on the upsampled output.
// Each image draws noise only from its own generator seeded by seeds[i].
std::vector<SampleTrace> sample_hierarchical(std::span<const Image> sources, const Denoiser& model,
                                             const TrainConfig& config, std::span<const std::uint64_t> seeds,
                                             const SampleOptions& options = {});
SampleTrace sample_hierarchical(const Image& source, const Denoiser& model, const TrainConfig& config,
                                std::uint64_t seed, const SampleOptions& options = {});

struct Evaluation {
  MetricReport report;                       // finest-level scores
  std::vector<std::vector<double>> level_psnr;  // [image][level fine -> coarse]
  std::vector<std::vector<double>> level_ssim;  // NaN where a level is smaller than the SSIM window
  std::vector<SampleTrace> traces;
};

// Samples every item (batches of `batch`) and scores it against its target.
Evaluation evaluate(std::span<const PairedSample> samples, const Denoiser& model, const TrainConfig& config,
                    std::uint64_t seed, const std::string& task, int batch = 8);

// Scores the unchanged source image against the target.
MetricReport copy_source_baseline(std::span<const PairedSample> samples, const std::string& task);

// Paired t-test of PSNR (a - b) over images matched by id.
TTestResult compare_psnr(const MetricReport& a, const MetricReport& b);

}  // namespace phmdiff
