#include <doctest.h>

#include <filesystem>

#include "phmdiff/checkpoint.hpp"
#include "phmdiff/error.hpp"
#include "phmdiff/rng.hpp"

using namespace phmdiff;

namespace {

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.denoiser.embed_dim = 16;
  c.denoiser.num_heads = 2;
  c.denoiser.patch_size = 4;
  c.params = {0.5, -1.25, 3.0e-9, 7.0};
  c.adam.m = {0.1, 0.2, 0.3, 0.4};
  c.adam.v = {1.0, 2.0, 3.0, 4.0};
  c.adam.step_count = 17;
  c.adam.learning_rate = 2e-3;
  Rng rng(42);
  rng.normal();
  c.rng_state = rng.state();
  c.epoch = 3;
  c.step = 17;
  c.loss_history = {1.0, 0.5, 0.25};
  c.config_json = R"({"alpha":0.5})";
  return c;
}

}  // namespace

TEST_SUITE("checkpoint") {
  TEST_CASE("encode/decode is exact") {
    const auto c = sample_checkpoint();
    const auto back = decode_checkpoint(encode_checkpoint(c));
    CHECK(back.params == c.params);
    CHECK(back.adam.m == c.adam.m);
    CHECK(back.adam.v == c.adam.v);
    CHECK(back.adam.step_count == 17);
    CHECK(back.adam.learning_rate == 2e-3);
    CHECK(back.rng_state == c.rng_state);
    CHECK(back.epoch == 3);
    CHECK(back.step == 17);
    CHECK(back.loss_history == c.loss_history);
    CHECK(back.config_json == c.config_json);
    CHECK(denoiser_config_json(back.denoiser) == denoiser_config_json(c.denoiser));
  }

  TEST_CASE("file round-trip leaves no temporary behind") {
    const auto path = std::filesystem::temp_directory_path() / "phmdiff_test_ckpt.phmd";
    const auto c = sample_checkpoint();
    save_checkpoint(c, path);
    auto tmp = path;
    tmp += ".tmp";
    CHECK_FALSE(std::filesystem::exists(tmp));
    CHECK(load_checkpoint(path).params == c.params);
    std::filesystem::remove(path);
  }

  TEST_CASE("restored generator continues the same stream") {
    Rng a(9);
    a.normal();
    Rng b(0);
    b.restore(a.state());
    for (int i = 0; i < 5; ++i) CHECK(a.normal() == b.normal());
  }

  TEST_CASE("corruption is detected") {
    const auto bytes = encode_checkpoint(sample_checkpoint());

    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bad_magic), CorruptionError);

    auto truncated = bytes;
    truncated.resize(bytes.size() - 3);
    CHECK_THROWS_AS(decode_checkpoint(truncated), CorruptionError);

    auto trailing = bytes;
    trailing.push_back(0);
    CHECK_THROWS_AS(decode_checkpoint(trailing), CorruptionError);

    auto flipped = bytes;
    flipped[bytes.size() - 1] ^= 0x01;
    CHECK_THROWS_AS(decode_checkpoint(flipped), CorruptionError);

    CHECK_THROWS_AS(decode_checkpoint({}), CorruptionError);
  }

  TEST_CASE("unknown version is a VersionError") {
    auto bytes = encode_checkpoint(sample_checkpoint());
    bytes[4] = 99;
    CHECK_THROWS_AS(decode_checkpoint(bytes), VersionError);
  }

  TEST_CASE("mismatched optimizer moments are refused") {
    auto c = sample_checkpoint();
    c.adam.v.pop_back();
    CHECK_THROWS_AS(encode_checkpoint(c), ContractError);
  }

  TEST_CASE("missing file is an IoError") {
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/x.phmd"), IoError);
  }

  TEST_CASE("denoiser config json round-trip and validation") {
    DenoiserConfig c;
    c.embed_dim = 24;
    c.num_heads = 3;
    c.encode_clean_visible = true;
    const auto back = denoiser_config_from_json(denoiser_config_json(c));
    CHECK(back.embed_dim == 24);
    CHECK(back.num_heads == 3);
    CHECK(back.encode_clean_visible);
    CHECK_THROWS_AS(denoiser_config_from_json(R"({"embed_dim": 10, "num_heads": 4})"), ConfigError);
    CHECK_THROWS_AS(denoiser_config_from_json("not json"), ConfigError);
  }
}
