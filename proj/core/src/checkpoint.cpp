#include "phmdiff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <json.hpp>

#include "phmdiff/data.hpp"
#include "phmdiff/error.hpp"

namespace phmdiff {

namespace {

using nlohmann::json;
static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'P', 'H', 'M', 'D'};

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n) {
      throw CorruptionError(std::string("checkpoint truncated while reading ") + what + " at byte " +
                            std::to_string(pos_));
    }
  }

  std::size_t pos() const { return pos_; }
  void advance(std::size_t n) { pos_ += n; }
  const std::uint8_t* here() const { return b_.data() + pos_; }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

json config_to_json(const DenoiserConfig& c) {
  return {{"embed_dim", c.embed_dim},
          {"num_heads", c.num_heads},
          {"encoder_blocks", c.encoder_blocks},
          {"decoder_blocks", c.decoder_blocks},
          {"patch_size", c.patch_size},
          {"channels", c.channels},
          {"max_tokens", c.max_tokens},
          {"num_levels", c.num_levels},
          {"time_dim", c.time_dim},
          {"mlp_ratio", c.mlp_ratio},
          {"encode_clean_visible", c.encode_clean_visible}};
}

DenoiserConfig config_from_json(const json& j) {
  DenoiserConfig c;
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.num_heads = j.value("num_heads", c.num_heads);
  c.encoder_blocks = j.value("encoder_blocks", c.encoder_blocks);
  c.decoder_blocks = j.value("decoder_blocks", c.decoder_blocks);
  c.patch_size = j.value("patch_size", c.patch_size);
  c.channels = j.value("channels", c.channels);
  c.max_tokens = j.value("max_tokens", c.max_tokens);
  c.num_levels = j.value("num_levels", c.num_levels);
  c.time_dim = j.value("time_dim", c.time_dim);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  c.encode_clean_visible = j.value("encode_clean_visible", c.encode_clean_visible);
  return c;
}

}  // namespace

std::string denoiser_config_json(const DenoiserConfig& config) { return config_to_json(config).dump(); }

DenoiserConfig denoiser_config_from_json(const std::string& text) {
  try {
    auto c = config_from_json(json::parse(text));
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad denoiser config: ") + e.what());
  }
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  const std::size_t n = ckpt.params.size();
  if (ckpt.adam.m.size() != n || ckpt.adam.v.size() != n) {
    throw ContractError("checkpoint: Adam moment sizes " + std::to_string(ckpt.adam.m.size()) + "/" +
                        std::to_string(ckpt.adam.v.size()) + " do not match " + std::to_string(n) + " parameters");
  }
  std::vector<double> payload;
  payload.reserve(3 * n);
  payload.insert(payload.end(), ckpt.params.begin(), ckpt.params.end());
  payload.insert(payload.end(), ckpt.adam.m.begin(), ckpt.adam.m.end());
  payload.insert(payload.end(), ckpt.adam.v.begin(), ckpt.adam.v.end());
  const auto digest = fnv1a64(payload.data(), payload.size() * sizeof(double));

  const json header = {{"denoiser", config_to_json(ckpt.denoiser)},
                       {"param_count", n},
                       {"adam",
                        {{"step_count", ckpt.adam.step_count},
                         {"learning_rate", ckpt.adam.learning_rate},
                         {"beta1", ckpt.adam.beta1},
                         {"beta2", ckpt.adam.beta2},
                         {"epsilon", ckpt.adam.epsilon}}},
                       {"rng_state", ckpt.rng_state},
                       {"epoch", ckpt.epoch},
                       {"step", ckpt.step},
                       {"loss_history", ckpt.loss_history},
                       {"config", ckpt.config_json},
                       {"payload_fnv1a64", digest}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put<std::uint32_t>(out, ckpt.version);
  put<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  put<std::uint64_t>(out, payload.size());
  const auto* raw = reinterpret_cast<const std::uint8_t*>(payload.data());
  out.insert(out.end(), raw, raw + payload.size() * sizeof(double));
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  r.need(4, "magic");
  if (std::memcmp(r.here(), kMagic, 4) != 0) throw CorruptionError("not a checkpoint file (bad magic)");
  r.advance(4);
  Checkpoint ckpt;
  ckpt.version = r.get<std::uint32_t>("version");
  if (ckpt.version != kCheckpointVersion) {
    throw VersionError("unsupported checkpoint version " + std::to_string(ckpt.version) + " (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  }
  const auto header_len = r.get<std::uint64_t>("header length");
  r.need(header_len, "header");
  json header;
  try {
    header = json::parse(r.here(), r.here() + header_len);
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  r.advance(header_len);
  const auto count = r.get<std::uint64_t>("payload count");
  if (count > r.remaining() / sizeof(double)) throw CorruptionError("checkpoint payload truncated");
  std::vector<double> payload(count);
  std::memcpy(payload.data(), r.here(), count * sizeof(double));
  r.advance(count * sizeof(double));
  if (r.remaining() != 0) throw CorruptionError("checkpoint has trailing bytes");

  try {
    const std::size_t n = header.at("param_count").get<std::size_t>();
    if (count != 3 * n) throw CorruptionError("checkpoint payload size does not match parameter count");
    if (fnv1a64(payload.data(), payload.size() * sizeof(double)) != header.at("payload_fnv1a64").get<std::uint64_t>()) {
      throw CorruptionError("checkpoint payload digest mismatch");
    }
    ckpt.denoiser = config_from_json(header.at("denoiser"));
    ckpt.params.assign(payload.begin(), payload.begin() + n);
    const auto& a = header.at("adam");
    ckpt.adam.step_count = a.at("step_count").get<std::uint64_t>();
    ckpt.adam.learning_rate = a.at("learning_rate").get<double>();
    ckpt.adam.beta1 = a.at("beta1").get<double>();
    ckpt.adam.beta2 = a.at("beta2").get<double>();
    ckpt.adam.epsilon = a.at("epsilon").get<double>();
    ckpt.adam.m.assign(payload.begin() + n, payload.begin() + 2 * n);
    ckpt.adam.v.assign(payload.begin() + 2 * n, payload.end());
    ckpt.rng_state = header.at("rng_state").get<std::string>();
    ckpt.epoch = header.at("epoch").get<std::uint64_t>();
    ckpt.step = header.at("step").get<std::uint64_t>();
    ckpt.loss_history = header.at("loss_history").get<std::vector<double>>();
    ckpt.config_json = header.at("config").get<std::string>();
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("checkpoint header incomplete: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  // write-then-rename so an interrupted save never clobbers the previous file
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at '" + path.string() + "': " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  const std::vector<std::uint8_t> bytes(std::istreambuf_iterator<char>(in), {});
  return decode_checkpoint(bytes);
}

}  // namespace phmdiff
