#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "phmdiff/denoiser.hpp"
#include "phmdiff/optim.hpp"

namespace phmdiff {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Binary layout (little-endian):
//   "PHMD" | u32 version | u64 header length | JSON header | u64 payload count | f64 payload
// The payload is parameters, then Adam first moments, then second moments.
// The header stores the FNV-1a digest of the payload bytes.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  DenoiserConfig denoiser;
  std::vector<double> params;
  AdamState adam;
  std::string rng_state;
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
  std::vector<double> loss_history;  // combined loss per optimizer step
  std::string config_json;           // training configuration, opaque to the container
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string denoiser_config_json(const DenoiserConfig& config);
DenoiserConfig denoiser_config_from_json(const std::string& json);

}  // namespace phmdiff
