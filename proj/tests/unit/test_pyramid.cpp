#include <doctest.h>

#include "oracles.hpp"
#include "phmdiff/error.hpp"
#include "phmdiff/pyramid.hpp"
#include "phmdiff/rng.hpp"

using namespace phmdiff;

namespace {

Image random_image(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Image img(h, w);
  for (auto& v : img.pixels) v = rng.uniform() * 2.0 - 1.0;
  return img;
}

}  // namespace

TEST_SUITE("pyramid") {
  TEST_CASE("dimension recurrence for alpha 0.5") {
    const auto d = pyramid_dims(240, 240, 0.5, 3, 2);
    REQUIRE(d.size() == 3);
    CHECK(d[0] == std::pair{240, 240});
    CHECK(d[1] == std::pair{120, 120});
    CHECK(d[2] == std::pair{60, 60});
  }

  TEST_CASE("odd dims floor at each level") {
    const auto d = pyramid_dims(65, 33, 0.5, 3, 1);
    CHECK(d[1] == std::pair{32, 16});
    CHECK(d[2] == std::pair{16, 8});
  }

  TEST_CASE("a level that collapses or breaks patch divisibility is a config error naming the level") {
    CHECK_THROWS_AS(pyramid_dims(16, 16, 0.5, 6, 1), ConfigError);
    try {
      pyramid_dims(64, 64, 0.5, 4, 16);
      FAIL("expected a config error");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("level 3") != std::string::npos);
    }
  }

  TEST_CASE("alpha outside (0, 1) is rejected") {
    CHECK_THROWS_AS(pyramid_dims(64, 64, 1.5, 2, 1), ConfigError);
    CHECK_THROWS_AS(pyramid_dims(64, 64, 0.0, 2, 1), ConfigError);
  }

  TEST_CASE("constant image is a fixed point of decomposition") {
    const Image c(64, 64, 0.375);
    const auto p = decompose(c, 0.5, 3, 4);
    for (const auto& level : p.levels)
      for (double v : level.pixels) CHECK(v == 0.375);
  }

  TEST_CASE("alpha 0.5 downsampling equals the 2x2 block mean") {
    const auto img = random_image(32, 48, 1);
    const auto got = downsample(img, 0.5);
    const auto want = testing::naive_block_mean(img, 2);
    REQUIRE(got.same_dims(want));
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got.pixels[i] == doctest::Approx(want.pixels[i]).epsilon(1e-15));
  }

  TEST_CASE("non-integer inverse alpha falls back to bilinear resampling") {
    const auto img = random_image(30, 30, 2);
    const auto out = downsample(img, 0.6);
    CHECK(out.height == 18);
    CHECK(out.width == 18);
  }

  TEST_CASE("upsampled output dims and constant preservation") {
    const Image c(8, 8, -0.25);
    const auto up = upsample(c, 2.0);
    CHECK(up.height == 16);
    for (double v : up.pixels) CHECK(v == doctest::Approx(-0.25).epsilon(1e-15));
    CHECK_THROWS_AS(upsample_to(c, 2.0, 17, 16), ContractError);
  }

  TEST_CASE("bilinear upsampling reproduces a linear ramp in the interior") {
    Image ramp(8, 8);
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) ramp.at(y, x) = 0.1 * x;
    const auto up = resize_bilinear(ramp, 16, 16);
    // output pixel centre x_o maps to (x_o + 0.5) / 2 - 0.5 in input coordinates
    for (int x = 1; x < 15; ++x) CHECK(up.at(5, x) == doctest::Approx(0.1 * ((x + 0.5) / 2 - 0.5)).epsilon(1e-12));
  }

  TEST_CASE("merge checks dims") {
    CHECK_NOTHROW(merge(Image(8, 8), Image(8, 8)));
    CHECK_THROWS_AS(merge(Image(8, 8), Image(8, 4)), ContractError);
  }

  TEST_CASE("decompose needs two levels") { CHECK_THROWS_AS(decompose(Image(8, 8), 0.5, 1, 1), ConfigError); }
}
