#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "phmdiff/image.hpp"

namespace phmdiff {

enum class Split { kTrain, kVal, kTest };

std::string split_name(Split s);
Split parse_split(const std::string& s);

// Aligned source/target images sharing geometry but not intensity mapping.
struct PairedSample {
  std::string id;
  Split split = Split::kTrain;
  Image source;
  Image target;
};

// Procedural anatomy-like phantom. `difficulty` in [0, 1] blends the target
// intensity map from identity (0) to a monotone contrast remap (1).
PairedSample generate_phantom_pair(std::uint64_t seed, int height, int width, double difficulty);

// The intensity map applied to the source (values in [-1, 1]).
double modality_map(double source_value, double difficulty);

struct DatasetSpec {
  int count = 40;
  int height = 64;
  int width = 64;
  double difficulty = 0.5;
  double val_fraction = 0.0;
  double test_fraction = 0.2;
  std::uint64_t seed = 7;
};

// Train items first, then val, then test; per-item seeds derived from spec.seed.
std::vector<PairedSample> generate_dataset(const DatasetSpec& spec);

// --- PGM (binary P5, 16-bit big-endian); [-1, 1] maps affinely onto [0, 65535].
std::vector<std::uint8_t> encode_pgm(const Image& image);
Image decode_pgm(const std::vector<std::uint8_t>& bytes);
void save_image_pgm(const Image& image, const std::filesystem::path& path);
Image load_image_pgm(const std::filesystem::path& path);

// --- dataset manifest: one JSON object per line {id, split, source, target}.
struct ManifestEntry {
  std::string id;
  Split split = Split::kTrain;
  std::string source;  // relative to the manifest directory
  std::string target;
};

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

// Writes images + manifest.jsonl under `dir`; returns the manifest entries.
std::vector<ManifestEntry> write_dataset(const std::filesystem::path& dir, const std::vector<PairedSample>& samples);
std::vector<PairedSample> load_dataset(const std::filesystem::path& manifest_path);
std::vector<PairedSample> filter_split(const std::vector<PairedSample>& samples, Split split);

// 64-bit FNV-1a.
std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace phmdiff
