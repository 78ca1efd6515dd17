#include "phmdiff/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <limits>
#include <numeric>

#include "phmdiff/error.hpp"
#include "phmdiff/masking.hpp"

namespace phmdiff {

using nlohmann::json;

void TrainConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1), got " + std::to_string(alpha));
  if (num_levels < 1) throw ConfigError("num_levels must be >= 1");
  if (timesteps < 1) throw ConfigError("timesteps must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
  if (!(0.0 <= r_coarse && r_coarse <= r_fine && r_fine < 1.0)) {
    throw ConfigError("mask ratios must satisfy 0 <= r_coarse <= r_fine < 1");
  }
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
  if (cgr_max_samples < 2) throw ConfigError("cgr_max_samples must be >= 2");
  if (model.num_levels != num_levels) {
    throw ConfigError("model.num_levels (" + std::to_string(model.num_levels) + ") must equal num_levels (" +
                      std::to_string(num_levels) + ")");
  }
  model.validate();
}

std::string train_config_json(const TrainConfig& c) {
  const json j = {{"alpha", c.alpha},
                  {"num_levels", c.num_levels},
                  {"timesteps", c.timesteps},
                  {"batch_size", c.batch_size},
                  {"epochs", c.epochs},
                  {"learning_rate", c.learning_rate},
                  {"lambda", c.lambda},
                  {"r_fine", c.r_fine},
                  {"r_coarse", c.r_coarse},
                  {"seed", c.seed},
                  {"checkpoint_every", c.checkpoint_every},
                  {"cgr_max_samples", c.cgr_max_samples},
                  {"model", json::parse(denoiser_config_json(c.model))}};
  return j.dump();
}

TrainConfig train_config_from_json(const std::string& text, const TrainConfig& defaults) {
  TrainConfig c = defaults;
  try {
    const json j = json::parse(text);
    c.alpha = j.value("alpha", c.alpha);
    c.num_levels = j.value("num_levels", c.num_levels);
    c.timesteps = j.value("timesteps", c.timesteps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.lambda = j.value("lambda", c.lambda);
    c.r_fine = j.value("r_fine", c.r_fine);
    c.r_coarse = j.value("r_coarse", c.r_coarse);
    c.seed = j.value("seed", c.seed);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.cgr_max_samples = j.value("cgr_max_samples", c.cgr_max_samples);
    if (j.contains("model")) {
      json m = json::parse(denoiser_config_json(c.model));
      m.update(j.at("model"));
      c.model = denoiser_config_from_json(m.dump());
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad training config: ") + e.what());
  }
  c.model.num_levels = c.num_levels;
  return c;
}

std::uint64_t train_config_hash(const TrainConfig& config) {
  TrainConfig c = config;
  c.epochs = 0;
  c.checkpoint_every = 1;
  const auto text = train_config_json(c);
  return fnv1a64(text.data(), text.size());
}

Pyramid build_pyramid(const Image& image, const TrainConfig& config) {
  if (config.num_levels == 1) {
    pyramid_dims(image.height, image.width, config.alpha, 1, config.model.patch_size);
    Pyramid p;
    p.alpha = config.alpha;
    p.levels.push_back(image);
    return p;
  }
  return decompose(image, config.alpha, config.num_levels, config.model.patch_size);
}

namespace {

std::vector<double> image_tokens(const Image& image, int p) {
  const Image one[1] = {image};
  const auto tb = patchify_images(one, p);
  const auto d = tb.tokens.data();
  return {d.begin(), d.end()};
}

Tensor stack_tokens(const std::vector<const std::vector<double>*>& rows, std::int64_t n, std::int64_t p) {
  std::vector<double> out;
  out.reserve(rows.size() * static_cast<std::size_t>(n * p));
  for (const auto* r : rows) out.insert(out.end(), r->begin(), r->end());
  return Tensor::from({static_cast<std::int64_t>(rows.size()), n, p}, std::move(out));
}

// Flattens [B, K, P] to [B*K, P] and keeps at most `cap` rows chosen by `rows`.
Tensor flatten_rows(const Tensor& x, const std::vector<std::int64_t>& rows) {
  const std::int64_t total = x.dim(0) * x.dim(1), d = x.dim(2);
  const Tensor flat = reshape(x, {1, total, d});
  if (static_cast<std::int64_t>(rows.size()) == total) return reshape(flat, {total, d});
  return reshape(gather_rows(flat, {rows}), {static_cast<std::int64_t>(rows.size()), d});
}

void check_finite(double v, const std::string& role, std::uint64_t step) {
  if (!std::isfinite(v)) {
    throw NumericError("non-finite " + role + " at step " + std::to_string(step));
  }
}

}  // namespace

Trainer::Trainer(TrainConfig config, std::vector<PairedSample> train)
    : config_(std::move(config)),
      train_(std::move(train)),
      schedule_(default_schedule(std::max(config_.timesteps, 1))),
      model_(Denoiser((config_.validate(), config_.model), derive_seed(config_.seed, 0))),
      rng_(derive_seed(config_.seed, 1)) {
  adam_ = AdamState::for_params(model_.params(), config_.learning_rate);
  prepare();
}

Trainer::Trainer(TrainConfig config, std::vector<PairedSample> train, const Checkpoint& resume)
    : Trainer(std::move(config), std::move(train)) {
  if (denoiser_config_json(resume.denoiser) != denoiser_config_json(config_.model)) {
    throw ConfigError("checkpoint model configuration differs from the requested one");
  }
  if (resume.params.size() != model_.params().scalar_count()) {
    throw CorruptionError("checkpoint holds " + std::to_string(resume.params.size()) + " parameters, model needs " +
                          std::to_string(model_.params().scalar_count()));
  }
  model_.params().assign(resume.params);
  adam_ = resume.adam;
  adam_.learning_rate = config_.learning_rate;
  rng_.restore(resume.rng_state);
  epoch_ = resume.epoch;
  step_ = resume.step;
  history_ = resume.loss_history;
}

void Trainer::prepare() {
  const int p = config_.model.patch_size;
  cache_.clear();
  for (const auto& s : train_) {
    if (!s.source.same_dims(s.target)) throw IoError("sample '" + s.id + "': source and target dims differ");
    const auto tp = build_pyramid(s.target, config_);
    const auto sp = build_pyramid(s.source, config_);
    std::vector<LevelData> levels(tp.size());
    for (std::size_t l = 0; l < tp.size(); ++l) {
      auto& ld = levels[l];
      ld.target = image_tokens(tp.levels[l], p);
      ld.source = image_tokens(sp.levels[l], p);
      ld.tokens = static_cast<std::int64_t>(tp.levels[l].height / p) * (tp.levels[l].width / p);
      if (ld.tokens > config_.model.max_tokens) {
        throw ConfigError("level " + std::to_string(l) + " has " + std::to_string(ld.tokens) +
                          " tokens, more than model.max_tokens " + std::to_string(config_.model.max_tokens));
      }
      if (l + 1 < tp.size()) {
        // teacher forcing: the coarse channel is the upsampled coarser target
        const auto& fine = tp.levels[l];
        ld.coarse = image_tokens(upsample_to(tp.levels[l + 1], 1.0 / config_.alpha, fine.height, fine.width), p);
      }
    }
    if (!cache_.empty() && cache_.front().front().tokens != levels.front().tokens) {
      throw IoError("sample '" + s.id + "' has different dimensions from the rest of the training set");
    }
    cache_.push_back(std::move(levels));
  }
}

StepLosses Trainer::train_step(std::span<const std::size_t> items) {
  if (items.empty()) throw ContractError("train_step: empty batch");
  for (auto i : items)
    if (i >= train_.size()) throw ContractError("train_step: item index out of range");
  const auto B = static_cast<std::int64_t>(items.size());
  const std::int64_t P = config_.model.token_dim();
  const int L = config_.num_levels;
  const std::uint64_t step_no = step_ + 1;

  // Every random draw happens before the forward pass so a failing step leaves
  // only the generator advanced, exactly as a successful one would.
  Tape tape;
  StepLosses out;
  Tensor total;
  std::vector<Tensor> cgr_hat, cgr_true;
  {
    TapeScope scope(tape);
    for (int l = 0; l < L; ++l) {
      const std::int64_t N = cache_[items[0]][l].tokens;
      const double r = level_mask_ratio(l, L, config_.r_fine, config_.r_coarse);
      std::vector<int> ts(items.size());
      std::vector<MaskPlan> plans;
      std::vector<const std::vector<double>*> x0_rows, src_rows, coarse_rows;
      for (std::size_t b = 0; b < items.size(); ++b) {
        ts[b] = rng_.uniform_int(1, config_.timesteps);
        const std::uint64_t mask_seed = rng_.engine()();
        // r = 0 leaves nothing to learn from; every position then carries the loss
        plans.push_back(masked_count(N, r) == 0 ? full_mask(N) : sample_mask(N, r, mask_seed));
        const auto& ld = cache_[items[b]][l];
        x0_rows.push_back(&ld.target);
        src_rows.push_back(&ld.source);
        if (l + 1 < L) coarse_rows.push_back(&ld.coarse);
      }
      const Tensor x0 = stack_tokens(x0_rows, N, P);
      const Tensor eps = Tensor::randn({B, N, P}, rng_);
      const Tensor xt = q_sample(x0, std::span<const int>(ts), eps, schedule_);

      DiffusionStepInput in;
      auto [visible, noisy] = split(xt, plans);
      in.noisy = noisy;
      in.noisy_positions = masked_rows(plans);
      if (visible.defined() && config_.model.encoder_blocks > 0) {
        in.visible = config_.model.encode_clean_visible ? split(x0, plans).first : visible;
        in.visible_positions = visible_rows(plans);
      }
      in.source = stack_tokens(src_rows, N, P);
      if (l + 1 < L) in.coarse = stack_tokens(coarse_rows, N, P);
      in.timesteps = ts;
      in.level = l;

      const Tensor eps_hat = model_.predict_noise(in);
      const Tensor le = loss_eps(eps, eps_hat, plans);
      out.eps_per_level.push_back(le.item());
      total = total.defined() ? add(total, le) : le;

      // CGR samples: masked-token noise vectors, capped per level
      const Tensor eps_m = gather_rows(eps, in.noisy_positions);
      const std::int64_t pool = B * eps_m.dim(1);
      std::vector<std::int64_t> rows(static_cast<std::size_t>(pool));
      std::iota(rows.begin(), rows.end(), 0);
      const std::int64_t keep = std::min<std::int64_t>(pool, config_.cgr_max_samples);
      for (std::int64_t i = 0; i < keep && keep < pool; ++i) {
        const auto j = i + static_cast<std::int64_t>(rng_.uniform_index(static_cast<std::size_t>(pool - i)));
        std::swap(rows[i], rows[j]);
      }
      rows.resize(static_cast<std::size_t>(keep));
      std::sort(rows.begin(), rows.end());
      if (keep < 1) throw ContractError("level " + std::to_string(l) + " has no masked tokens for CGR");
      cgr_hat.push_back(flatten_rows(config_.lambda > 0.0 ? eps_hat : eps_hat.detach(), rows));
      cgr_true.push_back(flatten_rows(eps_m, rows));
    }
    const auto report = cgr_loss(cgr_hat, cgr_true, kernel_, config_.lambda);
    out.cgr_per_level = report.values;
    out.cgr = report.combined_value;
    out.eps = total.item();
    if (config_.lambda > 0.0) total = add(total, report.combined);
    out.combined = total.item();
  }

  for (int l = 0; l < L; ++l) {
    check_finite(out.eps_per_level[l], "L_eps at level " + std::to_string(l), step_no);
    check_finite(out.cgr_per_level[l], "CGR MMD^2 at level " + std::to_string(l), step_no);
  }
  check_finite(out.combined, "combined loss", step_no);

  auto& params = model_.params();
  params.zero_grad();
  backward(total, tape);
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (double g : params[i].grad()) {
      if (!std::isfinite(g)) {
        params.zero_grad();
        throw NumericError("non-finite gradient of parameter '" + params.name(i) + "' at step " +
                           std::to_string(step_no));
      }
    }
  }
  adam_step(params, adam_);
  step_ = step_no;
  history_.push_back(out.combined);
  return out;
}

EpochRecord Trainer::train_epoch() {
  if (train_.empty()) throw ContractError("training set is empty");
  std::vector<std::size_t> order(train_.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng_.engine());
  EpochRecord rec;
  rec.epoch = epoch_ + 1;
  const auto L = static_cast<std::size_t>(config_.num_levels);
  rec.mean.eps_per_level.assign(L, 0.0);
  rec.mean.cgr_per_level.assign(L, 0.0);
  std::size_t steps = 0;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config_.batch_size)) {
    const auto end = std::min(order.size(), start + static_cast<std::size_t>(config_.batch_size));
    const auto s = train_step(std::span<const std::size_t>(order.data() + start, end - start));
    for (std::size_t l = 0; l < L; ++l) {
      rec.mean.eps_per_level[l] += s.eps_per_level[l];
      rec.mean.cgr_per_level[l] += s.cgr_per_level[l];
    }
    rec.mean.eps += s.eps;
    rec.mean.cgr += s.cgr;
    rec.mean.combined += s.combined;
    ++steps;
  }
  const double inv = 1.0 / static_cast<double>(steps);
  for (std::size_t l = 0; l < L; ++l) {
    rec.mean.eps_per_level[l] *= inv;
    rec.mean.cgr_per_level[l] *= inv;
  }
  rec.mean.eps *= inv;
  rec.mean.cgr *= inv;
  rec.mean.combined *= inv;
  epoch_ = rec.epoch;
  return rec;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.denoiser = config_.model;
  c.params = model_.params().flatten();
  c.adam = adam_;
  c.rng_state = rng_.state();
  c.epoch = epoch_;
  c.step = step_;
  c.loss_history = history_;
  c.config_json = train_config_json(config_);
  return c;
}

// ---------------------------------------------------------------------------
// Sampling

std::vector<SampleTrace> sample_hierarchical(std::span<const Image> sources, const Denoiser& model,
                                             const TrainConfig& config, std::span<const std::uint64_t> seeds,
                                             const SampleOptions& options) {
  if (sources.size() != seeds.size()) throw ContractError("sample_hierarchical: need one seed per source image");
  if (sources.empty()) return {};
  if (model.config().num_levels != config.num_levels || model.config().patch_size != config.model.patch_size) {
    throw ConfigError("model was built for a different pyramid or patch size");
  }
  const int L = config.num_levels, p = config.model.patch_size;
  const auto B = static_cast<std::int64_t>(sources.size());
  const std::int64_t P = model.config().token_dim();
  const auto schedule = default_schedule(config.timesteps);

  std::vector<Pyramid> src;
  for (const auto& s : sources) {
    src.push_back(build_pyramid(s, config));
    if (!s.same_dims(sources.front())) throw ContractError("sample_hierarchical: source images differ in size");
  }
  std::vector<Rng> rngs;
  std::vector<SampleTrace> traces(sources.size());
  for (std::size_t b = 0; b < sources.size(); ++b) {
    rngs.emplace_back(seeds[b]);
    traces[b].seed = seeds[b];
    traces[b].levels.resize(static_cast<std::size_t>(L));
    traces[b].steps_per_level.assign(static_cast<std::size_t>(L), config.timesteps);
    if (options.snapshot_every > 0) traces[b].snapshots.resize(static_cast<std::size_t>(L));
  }

  for (int l = L - 1; l >= 0; --l) {
    const int h = src[0].levels[l].height, w = src[0].levels[l].width;
    const std::int64_t N = static_cast<std::int64_t>(h / p) * (w / p);
    std::vector<Image> level_src, level_coarse;
    for (std::size_t b = 0; b < sources.size(); ++b) {
      level_src.push_back(src[b].levels[l]);
      if (l + 1 < L) level_coarse.push_back(upsample_to(traces[b].levels[l + 1], 1.0 / config.alpha, h, w));
    }
    DiffusionStepInput in;
    in.source = patchify_images(level_src, p).tokens;
    if (l + 1 < L) in.coarse = patchify_images(level_coarse, p).tokens;
    std::vector<std::int64_t> all(static_cast<std::size_t>(N));
    std::iota(all.begin(), all.end(), 0);
    in.noisy_positions = {all};
    in.level = l;

    std::vector<double> init(static_cast<std::size_t>(B * N * P));
    const std::size_t per_item = static_cast<std::size_t>(N * P);
    for (std::size_t i = 0; i < init.size(); ++i) init[i] = rngs[i / per_item].normal();
    Tensor x = Tensor::from({B, N, P}, std::move(init));
    for (int t = config.timesteps; t >= 1; --t) {
      in.noisy = x;
      in.timesteps.assign(static_cast<std::size_t>(B), t);
      const Tensor eps_hat = model.predict_noise(in);
      x = p_sample(x, eps_hat, t, schedule, rngs);
      if (options.snapshot_every > 0 && (t - 1) % options.snapshot_every == 0) {
        const auto imgs = unpatchify_images(x, p, h, w);
        for (std::size_t b = 0; b < imgs.size(); ++b) traces[b].snapshots[l].push_back(imgs[b]);
      }
    }
    const auto imgs = unpatchify_images(x, p, h, w);
    for (std::size_t b = 0; b < imgs.size(); ++b) {
      const auto& out = imgs[b];
      for (double v : out.pixels) {
        if (!std::isfinite(v)) throw NumericError("non-finite sample at level " + std::to_string(l));
      }
      traces[b].levels[l] = clamp_image(out);
    }
  }
  return traces;
}

SampleTrace sample_hierarchical(const Image& source, const Denoiser& model, const TrainConfig& config,
                                std::uint64_t seed, const SampleOptions& options) {
  const Image s[1] = {source};
  const std::uint64_t k[1] = {seed};
  return std::move(sample_hierarchical(s, model, config, k, options).front());
}

// ---------------------------------------------------------------------------
// Evaluation

Evaluation evaluate(std::span<const PairedSample> samples, const Denoiser& model, const TrainConfig& config,
                    std::uint64_t seed, const std::string& task, int batch) {
  if (samples.empty()) throw DegenerateInputError("evaluate: the split has no samples");
  if (batch < 1) throw ConfigError("evaluation batch must be >= 1");
  Evaluation ev;
  ev.report.task = task;
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch)) {
    const auto end = std::min(samples.size(), start + static_cast<std::size_t>(batch));
    std::vector<Image> srcs;
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = start; i < end; ++i) {
      srcs.push_back(samples[i].source);
      seeds.push_back(derive_seed(seed, i));
    }
    auto traces = sample_hierarchical(srcs, model, config, seeds);
    for (std::size_t i = start; i < end; ++i) {
      auto& tr = traces[i - start];
      const auto tgt = build_pyramid(samples[i].target, config);
      std::vector<double> lp, ls;
      for (std::size_t l = 0; l < tgt.size(); ++l) {
        lp.push_back(psnr(tgt.levels[l], tr.levels[l]));
        const bool fits = tgt.levels[l].height >= SsimOptions{}.window && tgt.levels[l].width >= SsimOptions{}.window;
        ls.push_back(fits ? ssim(tgt.levels[l], tr.levels[l]) : std::numeric_limits<double>::quiet_NaN());
      }
      ev.report.images.push_back({samples[i].id, lp.front(), ls.front()});
      ev.level_psnr.push_back(std::move(lp));
      ev.level_ssim.push_back(std::move(ls));
      ev.traces.push_back(std::move(tr));
    }
  }
  return ev;
}

MetricReport copy_source_baseline(std::span<const PairedSample> samples, const std::string& task) {
  if (samples.empty()) throw DegenerateInputError("copy_source_baseline: the split has no samples");
  MetricReport r;
  r.task = task;
  for (const auto& s : samples) r.images.push_back({s.id, psnr(s.target, s.source), ssim(s.target, s.source)});
  return r;
}

TTestResult compare_psnr(const MetricReport& a, const MetricReport& b) {
  if (a.images.size() != b.images.size()) throw ContractError("compare_psnr: reports cover different image sets");
  std::vector<double> xa, xb;
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    const auto it = std::find_if(b.images.begin(), b.images.end(),
                                 [&](const ImageScore& s) { return s.id == a.images[i].id; });
    if (it == b.images.end()) throw ContractError("compare_psnr: image '" + a.images[i].id + "' missing from second report");
    xa.push_back(a.images[i].psnr_db);
    xb.push_back(it->psnr_db);
  }
  return paired_t_test(xa, xb);
}

}  // namespace phmdiff
