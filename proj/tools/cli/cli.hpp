#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "phmdiff/data.hpp"
#include "phmdiff/pipeline.hpp"

namespace phmdiff::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigError = 2, kDataError = 3, kNumericError = 4 };

struct Paths {
  std::string manifest;
  std::string out;  // output directory of the command
  std::string checkpoint;
  std::string checkpoint2;
  std::string source;  // single image (sample)
  std::string target;
  std::string image;  // decompose input
};

struct EvalOptions {
  std::string split = "test";
  std::uint64_t seed = 1234;
  int batch = 8;
  std::string task = "source->target";
  bool baseline = false;  // add a copy-source row
};

struct SampleCommandOptions {
  std::uint64_t seed = 1234;
  int snapshot_every = 0;
};

// Every knob of every command. Loaded from --config, then overridden by flags.
struct RunConfig {
  TrainConfig train;
  DatasetSpec data;
  Paths paths;
  EvalOptions eval;
  SampleCommandOptions sample;
  bool resume = false;
  bool force = false;
};

std::string run_config_json(const RunConfig& config);
RunConfig run_config_from_json(const std::string& json);

// Header + one row per epoch; floats at 17 significant digits.
std::string loss_log_header(int num_levels);
std::string loss_log_row(const EpochRecord& record);

// Runs one command line; returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace phmdiff::cli
