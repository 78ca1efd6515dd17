#include "phmdiff/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <json.hpp>
#include <numbers>
#include <sstream>

#include "phmdiff/error.hpp"
#include "phmdiff/rng.hpp"

namespace phmdiff {

namespace fs = std::filesystem;
using nlohmann::json;

std::string split_name(Split s) {
  switch (s) {
    case Split::kTrain:
      return "train";
    case Split::kVal:
      return "val";
    case Split::kTest:
      return "test";
  }
  return "train";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw ConfigError("unknown split '" + s + "'");
}

// ---------------------------------------------------------------------------
// Phantoms

namespace {

struct Ellipse {
  double cx, cy, rx, ry, angle, intensity;
};

// Soft membership in [0, 1]; the edge spans roughly one pixel.
double ellipse_weight(const Ellipse& e, double x, double y, double edge) {
  const double c = std::cos(e.angle), s = std::sin(e.angle);
  const double dx = x - e.cx, dy = y - e.cy;
  const double u = (c * dx + s * dy) / e.rx;
  const double v = (-s * dx + c * dy) / e.ry;
  const double rho = std::sqrt(u * u + v * v);
  return 1.0 / (1.0 + std::exp((rho - 1.0) / edge));
}

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

}  // namespace

double modality_map(double source_value, double difficulty) {
  const double u = std::clamp((source_value + 1.0) / 2.0, 0.0, 1.0);
  // monotone, invertible on [0, 1]; lifts mid-range tissue intensities
  const double h = 1.0 - (1.0 - u) * (1.0 - u) * (1.0 - u);
  const double mapped = (1.0 - difficulty) * u + difficulty * h;
  return 2.0 * mapped - 1.0;
}

PairedSample generate_phantom_pair(std::uint64_t seed, int height, int width, double difficulty) {
  if (height < 4 || width < 4) {
    throw ConfigError("phantom dims must be at least 4x4, got " + std::to_string(height) + "x" + std::to_string(width));
  }
  if (!(difficulty >= 0.0 && difficulty <= 1.0)) throw ConfigError("phantom difficulty must lie in [0, 1]");
  Rng rng(seed);
  const double pi = std::numbers::pi;
  const Ellipse body{uniform(rng, -0.05, 0.05), uniform(rng, -0.05, 0.05), uniform(rng, 0.72, 0.88),
                     uniform(rng, 0.58, 0.8),  uniform(rng, -0.3, 0.3),   uniform(rng, 0.42, 0.52)};
  std::vector<Ellipse> organs;
  const int count = rng.uniform_int(3, 5);
  for (int i = 0; i < count; ++i) {
    Ellipse e;
    e.rx = uniform(rng, 0.1, 0.3);
    e.ry = uniform(rng, 0.1, 0.3);
    e.cx = body.cx + uniform(rng, -0.45, 0.45) * body.rx;
    e.cy = body.cy + uniform(rng, -0.45, 0.45) * body.ry;
    e.angle = uniform(rng, 0.0, pi);
    // keep at least 0.2 contrast to the surrounding body
    e.intensity = rng.uniform() < 0.5 ? uniform(rng, 0.08, 0.25) : uniform(rng, 0.7, 0.95);
    organs.push_back(e);
  }
  const double fx = uniform(rng, 1.0, 3.0), fy = uniform(rng, 1.0, 3.0);
  const double phase_x = uniform(rng, 0.0, 2 * pi), phase_y = uniform(rng, 0.0, 2 * pi);
  const double edge = 0.6 / std::min(height, width);

  PairedSample s;
  s.id = "phantom_" + std::to_string(seed);
  s.source = Image(height, width);
  s.target = Image(height, width);
  for (int py = 0; py < height; ++py) {
    const double y = (py + 0.5) / height * 2.0 - 1.0;
    for (int px = 0; px < width; ++px) {
      const double x = (px + 0.5) / width * 2.0 - 1.0;
      const double wb = ellipse_weight(body, x, y, edge);
      double u = wb * body.intensity;
      for (const auto& e : organs) {
        const double w = ellipse_weight(e, x, y, edge) * wb;
        u = u * (1.0 - w) + e.intensity * w;
      }
      u += wb * 0.02 * std::sin(pi * fx * x + phase_x) * std::sin(pi * fy * y + phase_y);
      const double v = std::clamp(2.0 * u - 1.0, -1.0, 1.0);
      s.source.at(py, px) = v;
      s.target.at(py, px) = difficulty == 0.0 ? v : modality_map(v, difficulty);
    }
  }
  return s;
}

std::vector<PairedSample> generate_dataset(const DatasetSpec& spec) {
  if (spec.count < 0) throw ConfigError("dataset count must be non-negative");
  if (spec.val_fraction < 0 || spec.test_fraction < 0 || spec.val_fraction + spec.test_fraction > 1.0) {
    throw ConfigError("split fractions must be non-negative and sum to at most 1");
  }
  const int n_test = static_cast<int>(std::lround(spec.count * spec.test_fraction));
  const int n_val = static_cast<int>(std::lround(spec.count * spec.val_fraction));
  const int n_train = spec.count - n_test - n_val;
  std::vector<PairedSample> out;
  for (int i = 0; i < spec.count; ++i) {
    auto s = generate_phantom_pair(derive_seed(spec.seed, static_cast<std::uint64_t>(i)), spec.height, spec.width,
                                   spec.difficulty);
    char id[32];
    std::snprintf(id, sizeof id, "sample_%04d", i);
    s.id = id;
    s.split = i < n_train ? Split::kTrain : (i < n_train + n_val ? Split::kVal : Split::kTest);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<PairedSample> filter_split(const std::vector<PairedSample>& samples, Split split) {
  std::vector<PairedSample> out;
  std::copy_if(samples.begin(), samples.end(), std::back_inserter(out),
               [split](const PairedSample& s) { return s.split == split; });
  return out;
}

// ---------------------------------------------------------------------------
// PGM

std::vector<std::uint8_t> encode_pgm(const Image& image) {
  const std::string header =
      "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n65535\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + image.size() * 2);
  for (double v : image.pixels) {
    const double q = std::round((std::clamp(v, -1.0, 1.0) + 1.0) * 0.5 * 65535.0);
    const auto u = static_cast<std::uint16_t>(q);
    out.push_back(static_cast<std::uint8_t>(u >> 8));
    out.push_back(static_cast<std::uint8_t>(u & 0xFF));
  }
  return out;
}

namespace {

class PgmReader {
 public:
  explicit PgmReader(const std::vector<std::uint8_t>& bytes) : b_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (std::isspace(b_[pos_])) {
        ++pos_;
      } else if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  long read_int(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    long v = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + (b_[pos_] - '0');
      if (v > 1'000'000) throw ParseError(std::string("PGM ") + what + " is too large", start);
      ++pos_;
    }
    if (pos_ == start) throw ParseError(std::string("PGM: expected ") + what, start);
    return v;
  }

  std::size_t pos_ = 0;
  const std::vector<std::uint8_t>& b_;
};

}  // namespace

Image decode_pgm(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw ParseError("not a binary PGM (missing P5 magic)", 0);
  PgmReader r(bytes);
  r.pos_ = 2;
  const long width = r.read_int("width");
  const long height = r.read_int("height");
  const long maxval = r.read_int("maxval");
  if (width < 1 || height < 1) throw ParseError("PGM dims must be positive", r.pos_);
  if (maxval < 1 || maxval > 65535) throw ParseError("PGM maxval out of range", r.pos_);
  if (r.pos_ >= bytes.size() || !std::isspace(bytes[r.pos_])) throw ParseError("PGM header not terminated", r.pos_);
  ++r.pos_;
  const std::size_t bps = maxval > 255 ? 2 : 1;
  const std::size_t need = static_cast<std::size_t>(width) * height * bps;
  if (bytes.size() - r.pos_ < need) {
    throw ParseError("PGM raster truncated: need " + std::to_string(need) + " bytes, have " +
                         std::to_string(bytes.size() - r.pos_),
                     bytes.size());
  }
  Image img(static_cast<int>(height), static_cast<int>(width));
  for (std::size_t i = 0; i < img.size(); ++i) {
    const std::size_t o = r.pos_ + i * bps;
    const unsigned q = bps == 2 ? (static_cast<unsigned>(bytes[o]) << 8) | bytes[o + 1] : bytes[o];
    img.pixels[i] = static_cast<double>(q) / static_cast<double>(maxval) * 2.0 - 1.0;
  }
  return img;
}

namespace {

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace

void save_image_pgm(const Image& image, const fs::path& path) { write_file(path, encode_pgm(image)); }

Image load_image_pgm(const fs::path& path) {
  try {
    return decode_pgm(read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.offset());
  }
}

// ---------------------------------------------------------------------------
// Manifest

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  for (const auto& e : entries) {
    json j = {{"id", e.id}, {"split", split_name(e.split)}, {"source", e.source}, {"target", e.target}};
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    const std::size_t line_start = offset;
    offset += line.size() + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      ManifestEntry e;
      e.id = j.at("id").get<std::string>();
      e.split = parse_split(j.at("split").get<std::string>());
      e.source = j.at("source").get<std::string>();
      e.target = j.at("target").get<std::string>();
      entries.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw ParseError("manifest '" + path.string() + "': " + ex.what(), line_start);
    }
  }
  return entries;
}

std::vector<ManifestEntry> write_dataset(const fs::path& dir, const std::vector<PairedSample>& samples) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  std::vector<ManifestEntry> entries;
  for (const auto& s : samples) {
    ManifestEntry e{s.id, s.split, s.id + "_source.pgm", s.id + "_target.pgm"};
    save_image_pgm(s.source, dir / e.source);
    save_image_pgm(s.target, dir / e.target);
    entries.push_back(std::move(e));
  }
  write_manifest(dir / "manifest.jsonl", entries);
  return entries;
}

std::vector<PairedSample> load_dataset(const fs::path& manifest_path) {
  const auto dir = manifest_path.parent_path();
  std::vector<PairedSample> out;
  for (const auto& e : read_manifest(manifest_path)) {
    PairedSample s;
    s.id = e.id;
    s.split = e.split;
    s.source = load_image_pgm(dir / e.source);
    s.target = load_image_pgm(dir / e.target);
    if (!s.source.same_dims(s.target)) throw IoError("sample '" + e.id + "': source and target dims differ");
    out.push_back(std::move(s));
  }
  return out;
}

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed) {
  auto h = seed;
  const auto* p = static_cast<const std::uint8_t*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace phmdiff
