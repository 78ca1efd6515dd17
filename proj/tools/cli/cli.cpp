#include "cli.hpp"

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "phmdiff/checkpoint.hpp"
#include "phmdiff/error.hpp"
#include "phmdiff/metrics.hpp"
#include "phmdiff/pyramid.hpp"

namespace phmdiff::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kLatestCheckpoint = "checkpoint.phmd";
constexpr const char* kLossLog = "loss_log.csv";
constexpr const char* kResolvedConfig = "resolved-config.json";

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void ensure_dir(const std::string& dir) {
  if (dir.empty()) throw ConfigError("an output directory (--out) is required");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void echo_config(const RunConfig& config) {
  write_text(fs::path(config.paths.out) / kResolvedConfig, json::parse(run_config_json(config)).dump(2) + "\n");
}

std::vector<PairedSample> load_split(const RunConfig& config) {
  if (config.paths.manifest.empty()) throw ConfigError("a dataset manifest (--manifest) is required");
  if (!fs::exists(config.paths.manifest)) throw IoError("manifest '" + config.paths.manifest + "' does not exist");
  return filter_split(load_dataset(config.paths.manifest), parse_split(config.eval.split));
}

struct LoadedModel {
  TrainConfig config;
  Denoiser model;
};

LoadedModel load_model(const std::string& path) {
  if (path.empty()) throw ConfigError("a checkpoint (--checkpoint) is required");
  if (!fs::exists(path)) throw IoError("checkpoint '" + path + "' does not exist");
  const auto ckpt = load_checkpoint(path);
  auto config = train_config_from_json(ckpt.config_json);
  config.validate();
  Denoiser model(ckpt.denoiser, 0);
  if (model.params().scalar_count() != ckpt.params.size()) {
    throw CorruptionError("checkpoint '" + path + "' parameter count does not match its model configuration");
  }
  model.params().assign(ckpt.params);
  return {config, std::move(model)};
}

// Error magnitude |a - b| in [0, 2] stored on the usual [-1, 1] PGM scale.
Image error_map(const Image& a, const Image& b) {
  Image e(a.height, a.width);
  for (std::size_t i = 0; i < e.size(); ++i) e.pixels[i] = std::fabs(a.pixels[i] - b.pixels[i]) - 1.0;
  return e;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const RunConfig& config, std::ostream& out) {
  ensure_dir(config.paths.out);
  const auto samples = generate_dataset(config.data);
  write_dataset(config.paths.out, samples);
  echo_config(config);
  out << "wrote " << samples.size() << " pairs to " << config.paths.out << "\n";
  return kOk;
}

int cmd_train(RunConfig config, std::ostream& out) {
  config.train.model.num_levels = config.train.num_levels;
  config.train.validate();
  ensure_dir(config.paths.out);
  auto train = load_split(RunConfig{config.train, config.data, config.paths, {"train"}, {}, false, false});
  if (train.empty()) throw DegenerateInputError("the manifest has no training samples");

  const fs::path dir = config.paths.out;
  const fs::path latest = dir / kLatestCheckpoint;
  const fs::path log_path = dir / kLossLog;
  std::unique_ptr<Trainer> trainer;
  std::vector<std::string> kept_rows;
  if (config.resume && fs::exists(latest)) {
    const auto ckpt = load_checkpoint(latest);
    const auto saved = train_config_from_json(ckpt.config_json);
    if (train_config_hash(saved) != train_config_hash(config.train)) {
      if (!config.force) {
        throw ConfigError("configuration differs from the checkpoint in '" + dir.string() +
                          "'; pass --force to resume anyway");
      }
      out << "warning: resuming with a configuration that differs from the checkpoint\n";
    }
    trainer = std::make_unique<Trainer>(config.train, std::move(train), ckpt);
    // keep the log rows the checkpoint already covers, drop anything written after it
    if (fs::exists(log_path)) {
      std::istringstream is(read_text(log_path));
      std::string line;
      std::getline(is, line);
      while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (std::stoull(line.substr(0, line.find(','))) <= ckpt.epoch) kept_rows.push_back(line);
      }
    }
    out << "resumed at epoch " << ckpt.epoch << "\n";
  } else {
    trainer = std::make_unique<Trainer>(config.train, std::move(train));
  }
  echo_config(config);

  std::string log = loss_log_header(config.train.num_levels);
  for (const auto& r : kept_rows) log += r + "\n";
  write_text(log_path, log);

  std::ofstream log_out(log_path, std::ios::app);
  const auto total = static_cast<std::uint64_t>(config.train.epochs);
  while (trainer->epoch() < total) {
    const auto rec = trainer->train_epoch();
    log_out << loss_log_row(rec) << std::flush;
    out << "epoch " << rec.epoch << " combined " << fmt17(rec.mean.combined) << "\n";
    const bool due = rec.epoch % static_cast<std::uint64_t>(config.train.checkpoint_every) == 0;
    if (due || rec.epoch == total) {
      const auto ckpt = trainer->checkpoint();
      save_checkpoint(ckpt, latest);
      char name[48];
      std::snprintf(name, sizeof name, "checkpoint_epoch_%04llu.phmd", static_cast<unsigned long long>(rec.epoch));
      save_checkpoint(ckpt, dir / name);
    }
  }
  if (!fs::exists(latest)) save_checkpoint(trainer->checkpoint(), latest);
  return kOk;
}

int cmd_sample(RunConfig config, std::ostream& out) {
  ensure_dir(config.paths.out);
  auto loaded = load_model(config.paths.checkpoint);
  config.train = loaded.config;
  if (config.paths.source.empty()) throw ConfigError("a source image (--source) is required");
  const Image source = load_image_pgm(config.paths.source);
  std::optional<Pyramid> target;
  if (!config.paths.target.empty()) {
    const Image t = load_image_pgm(config.paths.target);
    if (!t.same_dims(source)) throw IoError("source and target images differ in size");
    target = build_pyramid(t, loaded.config);
  }
  SampleOptions opts;
  opts.snapshot_every = config.sample.snapshot_every;
  const auto trace = sample_hierarchical(source, loaded.model, loaded.config, config.sample.seed, opts);
  echo_config(config);

  const fs::path dir = config.paths.out;
  json levels = json::array();
  for (std::size_t l = 0; l < trace.levels.size(); ++l) {
    const auto& img = trace.levels[l];
    const std::string file = "level_" + std::to_string(l) + ".pgm";
    save_image_pgm(img, dir / file);
    json entry = {{"level", l},
                  {"height", img.height},
                  {"width", img.width},
                  {"steps", trace.steps_per_level[l]},
                  {"file", file}};
    if (target) {
      const auto& ref = target->levels[l];
      const std::string err_file = "error_level_" + std::to_string(l) + ".pgm";
      save_image_pgm(error_map(img, ref), dir / err_file);
      entry["error_file"] = err_file;
      entry["psnr_db"] = psnr(ref, img);
      if (img.height >= 11 && img.width >= 11) entry["ssim"] = ssim(ref, img);
    }
    for (std::size_t s = 0; s < (trace.snapshots.empty() ? 0 : trace.snapshots[l].size()); ++s) {
      save_image_pgm(trace.snapshots[l][s], dir / ("snapshot_level_" + std::to_string(l) + "_" + std::to_string(s) + ".pgm"));
    }
    levels.push_back(entry);
  }
  const json doc = {{"seed", trace.seed}, {"timesteps", loaded.config.timesteps}, {"levels", levels}};
  write_text(dir / "trace.json", doc.dump(2) + "\n");
  out << "wrote " << trace.levels.size() << " levels to " << dir.string() << "\n";
  return kOk;
}

int cmd_eval(RunConfig config, std::ostream& out, std::ostream& err) {
  auto first = load_model(config.paths.checkpoint);
  const auto samples = load_split(config);
  if (samples.empty()) throw DegenerateInputError("split '" + config.eval.split + "' has no samples");
  std::vector<MetricReport> reports;
  const auto ev = evaluate(samples, first.model, first.config, config.eval.seed, config.eval.task, config.eval.batch);
  reports.push_back(ev.report);
  std::optional<Evaluation> ev2;
  if (!config.paths.checkpoint2.empty()) {
    auto second = load_model(config.paths.checkpoint2);
    ev2 = evaluate(samples, second.model, second.config, config.eval.seed, config.eval.task + " (ckpt2)",
                   config.eval.batch);
    reports.push_back(ev2->report);
  }
  if (config.eval.baseline) reports.push_back(copy_source_baseline(samples, config.eval.task + " (copy source)"));

  const auto table = format_metric_table(reports);
  const auto csv = format_metric_csv(reports);
  out << table;
  if (!config.paths.out.empty()) {
    ensure_dir(config.paths.out);
    config.train = first.config;
    echo_config(config);
    write_text(fs::path(config.paths.out) / "metrics_table.txt", table);
    write_text(fs::path(config.paths.out) / "metrics.csv", csv);
    std::string per = "task,id,psnr_db,ssim\n";
    for (const auto& r : reports)
      for (const auto& s : r.images) per += r.task + "," + s.id + "," + fmt17(s.psnr_db) + "," + fmt17(s.ssim) + "\n";
    write_text(fs::path(config.paths.out) / "per_image.csv", per);
  }
  if (ev2) {
    try {
      const auto t = compare_psnr(ev.report, ev2->report);
      std::ostringstream os;
      os << "paired t-test (PSNR, ckpt1 - ckpt2): t = " << fmt17(t.t_statistic) << ", df = " << t.degrees_of_freedom
         << ", p = " << fmt17(t.p_value) << "\n";
      out << os.str();
      if (!config.paths.out.empty()) write_text(fs::path(config.paths.out) / "ttest.txt", os.str());
    } catch (const DegenerateInputError& e) {
      err << "error: paired t-test undefined: " << e.what() << "\n";
      return kDataError;
    }
  }
  return kOk;
}

int cmd_decompose(const RunConfig& config, std::ostream& out) {
  ensure_dir(config.paths.out);
  if (config.paths.image.empty()) throw ConfigError("an input image (--image) is required");
  const Image img = load_image_pgm(config.paths.image);
  const auto pyr = build_pyramid(img, config.train);
  for (std::size_t l = 0; l < pyr.size(); ++l) {
    save_image_pgm(pyr.levels[l], fs::path(config.paths.out) / ("level_" + std::to_string(l) + ".pgm"));
    out << "level " << l << ": " << pyr.levels[l].height << "x" << pyr.levels[l].width << "\n";
  }
  echo_config(config);
  return kOk;
}

// --config is read before the flags so that flags override file values.
RunConfig initial_config(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    std::string path;
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
    if (!path.empty()) return run_config_from_json(read_text(path));
  }
  return {};
}

void add_train_flags(CLI::App* app, RunConfig& c) {
  auto& t = c.train;
  app->add_option("--alpha", t.alpha, "Pyramid scale factor in (0, 1)");
  app->add_option("--levels", t.num_levels, "Number of pyramid levels");
  app->add_option("--timesteps", t.timesteps, "Diffusion steps T");
  app->add_option("--batch-size", t.batch_size, "Mini-batch size");
  app->add_option("--epochs", t.epochs, "Total training epochs");
  app->add_option("--lr", t.learning_rate, "Adam learning rate");
  app->add_option("--lambda", t.lambda, "Cross-granularity regularization weight");
  app->add_option("--r-fine", t.r_fine, "Mask ratio at the finest level");
  app->add_option("--r-coarse", t.r_coarse, "Mask ratio at the coarsest level");
  app->add_option("--seed", t.seed, "Training seed");
  app->add_option("--checkpoint-every", t.checkpoint_every, "Checkpoint cadence in epochs");
  app->add_option("--cgr-samples", t.cgr_max_samples, "Masked-token noise vectors per level used by the regularizer");
  app->add_option("--embed-dim", t.model.embed_dim, "Transformer width");
  app->add_option("--heads", t.model.num_heads, "Attention heads");
  app->add_option("--encoder-blocks", t.model.encoder_blocks, "Encoder blocks");
  app->add_option("--decoder-blocks", t.model.decoder_blocks, "Decoder blocks");
  app->add_option("--patch-size", t.model.patch_size, "Patch size p");
  app->add_option("--max-tokens", t.model.max_tokens, "Token positions reserved per level");
  app->add_option("--time-dim", t.model.time_dim, "Sinusoidal timestep feature width");
  app->add_option("--mlp-ratio", t.model.mlp_ratio, "MLP hidden width multiplier");
  app->add_flag("--encode-clean-visible", t.model.encode_clean_visible, "Encode clean rather than noisy visible patches");
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig c = initial_config(args);
  std::string config_path;

  CLI::App app{"Pyramid hierarchical masked diffusion for paired image translation", "phmdiff"};
  app.require_subcommand(1);
  app.fallthrough();
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);  // a repeated flag overrides
  app.add_option("--config", config_path, "JSON configuration file (flags override its values)");

  auto* gen = app.add_subcommand("gen-data", "Generate a paired phantom dataset with a manifest");
  gen->add_option("--out", c.paths.out, "Output directory");
  gen->add_option("--count", c.data.count, "Number of pairs");
  gen->add_option("--height", c.data.height, "Image height");
  gen->add_option("--width", c.data.width, "Image width");
  gen->add_option("--difficulty", c.data.difficulty, "Intensity-remap strength in [0, 1]");
  gen->add_option("--val-fraction", c.data.val_fraction, "Fraction of pairs tagged val");
  gen->add_option("--test-fraction", c.data.test_fraction, "Fraction of pairs tagged test");
  gen->add_option("--seed", c.data.seed, "Dataset seed");

  auto* train = app.add_subcommand("train", "Train a model; writes checkpoints and a CSV loss log");
  train->add_option("--manifest", c.paths.manifest, "Dataset manifest (manifest.jsonl)");
  train->add_option("--out", c.paths.out, "Run directory for checkpoints and logs");
  train->add_flag("--resume", c.resume, "Continue from the run directory's latest checkpoint");
  train->add_flag("--force", c.force, "Resume even if the configuration changed");
  add_train_flags(train, c);

  auto* sample = app.add_subcommand("sample", "Generate one image coarse-to-fine from a source image");
  sample->add_option("--checkpoint", c.paths.checkpoint, "Checkpoint file");
  sample->add_option("--source", c.paths.source, "Source PGM");
  sample->add_option("--target", c.paths.target, "Optional target PGM; enables error maps and scores");
  sample->add_option("--out", c.paths.out, "Output directory");
  sample->add_option("--seed", c.sample.seed, "Sampling seed");
  sample->add_option("--snapshot-every", c.sample.snapshot_every, "Also write x_t every k reverse steps");

  auto* eval = app.add_subcommand("eval", "Score checkpoints on a dataset split");
  eval->add_option("--checkpoint", c.paths.checkpoint, "Checkpoint file");
  eval->add_option("--checkpoint2", c.paths.checkpoint2, "Second checkpoint for a paired t-test");
  eval->add_option("--manifest", c.paths.manifest, "Dataset manifest");
  eval->add_option("--split", c.eval.split, "Split to evaluate (train, val, test)");
  eval->add_option("--out", c.paths.out, "Optional output directory for tables");
  eval->add_option("--seed", c.eval.seed, "Sampling seed");
  eval->add_option("--batch", c.eval.batch, "Images sampled together");
  eval->add_option("--task", c.eval.task, "Task label in the table");
  eval->add_flag("--baseline", c.eval.baseline, "Add a copy-source baseline row");

  auto* decompose_cmd = app.add_subcommand("decompose", "Write the pyramid levels of an image");
  decompose_cmd->add_option("--image", c.paths.image, "Input PGM");
  decompose_cmd->add_option("--out", c.paths.out, "Output directory");
  decompose_cmd->add_option("--levels", c.train.num_levels, "Number of levels");
  decompose_cmd->add_option("--alpha", c.train.alpha, "Scale factor");
  decompose_cmd->add_option("--patch-size", c.train.model.patch_size, "Patch size the level dims must divide");

  std::vector<const char*> argv{"phmdiff"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }
  c.train.model.num_levels = c.train.num_levels;

  if (gen->parsed()) return cmd_gen_data(c, out);
  if (train->parsed()) return cmd_train(c, out);
  if (sample->parsed()) return cmd_sample(c, out);
  if (eval->parsed()) return cmd_eval(c, out, err);
  return cmd_decompose(c, out);
}

}  // namespace

std::string run_config_json(const RunConfig& c) {
  const json j = {{"train", json::parse(train_config_json(c.train))},
                  {"data",
                   {{"count", c.data.count},
                    {"height", c.data.height},
                    {"width", c.data.width},
                    {"difficulty", c.data.difficulty},
                    {"val_fraction", c.data.val_fraction},
                    {"test_fraction", c.data.test_fraction},
                    {"seed", c.data.seed}}},
                  {"paths",
                   {{"manifest", c.paths.manifest},
                    {"out", c.paths.out},
                    {"checkpoint", c.paths.checkpoint},
                    {"checkpoint2", c.paths.checkpoint2},
                    {"source", c.paths.source},
                    {"target", c.paths.target},
                    {"image", c.paths.image}}},
                  {"eval",
                   {{"split", c.eval.split},
                    {"seed", c.eval.seed},
                    {"batch", c.eval.batch},
                    {"task", c.eval.task},
                    {"baseline", c.eval.baseline}}},
                  {"sample", {{"seed", c.sample.seed}, {"snapshot_every", c.sample.snapshot_every}}},
                  {"resume", c.resume},
                  {"force", c.force}};
  return j.dump();
}

RunConfig run_config_from_json(const std::string& text) {
  RunConfig c;
  try {
    const json j = json::parse(text);
    if (j.contains("train")) c.train = train_config_from_json(j.at("train").dump(), c.train);
    if (j.contains("data")) {
      const auto& d = j.at("data");
      c.data.count = d.value("count", c.data.count);
      c.data.height = d.value("height", c.data.height);
      c.data.width = d.value("width", c.data.width);
      c.data.difficulty = d.value("difficulty", c.data.difficulty);
      c.data.val_fraction = d.value("val_fraction", c.data.val_fraction);
      c.data.test_fraction = d.value("test_fraction", c.data.test_fraction);
      c.data.seed = d.value("seed", c.data.seed);
    }
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      c.paths.manifest = p.value("manifest", c.paths.manifest);
      c.paths.out = p.value("out", c.paths.out);
      c.paths.checkpoint = p.value("checkpoint", c.paths.checkpoint);
      c.paths.checkpoint2 = p.value("checkpoint2", c.paths.checkpoint2);
      c.paths.source = p.value("source", c.paths.source);
      c.paths.target = p.value("target", c.paths.target);
      c.paths.image = p.value("image", c.paths.image);
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      c.eval.split = e.value("split", c.eval.split);
      c.eval.seed = e.value("seed", c.eval.seed);
      c.eval.batch = e.value("batch", c.eval.batch);
      c.eval.task = e.value("task", c.eval.task);
      c.eval.baseline = e.value("baseline", c.eval.baseline);
    }
    if (j.contains("sample")) {
      const auto& s = j.at("sample");
      c.sample.seed = s.value("seed", c.sample.seed);
      c.sample.snapshot_every = s.value("snapshot_every", c.sample.snapshot_every);
    }
    c.resume = j.value("resume", c.resume);
    c.force = j.value("force", c.force);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad configuration file: ") + e.what());
  }
  return c;
}

std::string loss_log_header(int num_levels) {
  std::string h = "epoch,L_eps";
  if (num_levels == 3) {
    h += ",L_l,L_m,L_h";  // low (coarsest), middle, high (finest) resolution
  } else {
    for (int l = num_levels - 1; l >= 0; --l) h += ",L_cgr_level" + std::to_string(l);
  }
  return h + ",combined\n";
}

std::string loss_log_row(const EpochRecord& r) {
  std::string row = std::to_string(r.epoch) + "," + fmt17(r.mean.eps);
  for (auto it = r.mean.cgr_per_level.rbegin(); it != r.mean.cgr_per_level.rend(); ++it) row += "," + fmt17(*it);
  return row + "," + fmt17(r.mean.combined) + "\n";
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    return dispatch(args, out, err);
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kConfigError;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kNumericError;
  } catch (const IoError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const DegenerateInputError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace phmdiff::cli
