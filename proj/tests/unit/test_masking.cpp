#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "oracles.hpp"
#include "phmdiff/error.hpp"
#include "phmdiff/masking.hpp"
#include "phmdiff/rng.hpp"

using namespace phmdiff;

TEST_SUITE("masking") {
  TEST_CASE("patchify token count and length") {
    const Image img(4, 4, 0.0);
    const Image one[1] = {img};
    const auto tb = patchify_images(one, 2);
    CHECK(tb.tokens.shape() == Shape{1, 4, 4});
    const Image big(240, 240);
    const Image one_big[1] = {big};
    CHECK(patchify_images(one_big, 8).num_tokens() == 900);
  }

  TEST_CASE("patchify agrees with direct pixel indexing") {
    Rng rng(1);
    Image img(12, 8);
    for (auto& v : img.pixels) v = rng.normal();
    const Image one[1] = {img};
    const auto tb = patchify_images(one, 4);
    const auto want = testing::naive_patchify(img, 4);
    REQUIRE(want.size() == tb.tokens.numel());
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(tb.tokens.at(i) == want[i]);
  }

  TEST_CASE("unpatchify(patchify(x)) is bit-exact") {
    Rng rng(2);
    const auto x = Tensor::randn({3, 2, 16, 8}, rng);
    const auto back = unpatchify(patchify(x, 4));
    CHECK(std::equal(x.data().begin(), x.data().end(), back.data().begin()));
  }

  TEST_CASE("indivisible dims are a shape error") {
    CHECK_THROWS_AS(patchify(Tensor::zeros({1, 1, 10, 8}), 4), ShapeError);
  }

  TEST_CASE("mask cardinality is floor(rN)") {
    CHECK(sample_mask(64, 0.75, 1).masked_idx.size() == 48);
    CHECK(sample_mask(64, 0.75, 1).visible_idx.size() == 16);
    CHECK(sample_mask(10, 0.0, 1).masked_idx.empty());
    CHECK(masked_count(100, 0.29) == 29);
    CHECK(masked_count(7, 0.5) == 3);
    for (std::int64_t n : {1, 2, 3, 16, 17, 100, 256, 900})
      for (double r : {0.0, 0.1, 0.25, 0.3, 0.5, 0.7, 0.75, 0.99}) {
        const auto plan = sample_mask(n, r, static_cast<std::uint64_t>(n * 1000 + r * 100));
        CHECK(static_cast<std::int64_t>(plan.masked_idx.size()) == static_cast<std::int64_t>(std::floor(r * n + 1e-9)));
        std::vector<std::int64_t> all(plan.masked_idx);
        all.insert(all.end(), plan.visible_idx.begin(), plan.visible_idx.end());
        std::sort(all.begin(), all.end());
        std::vector<std::int64_t> want(static_cast<std::size_t>(n));
        std::iota(want.begin(), want.end(), 0);
        CHECK(all == want);
        CHECK(std::is_sorted(plan.masked_idx.begin(), plan.masked_idx.end()));
      }
  }

  TEST_CASE("ratio outside [0, 1) is rejected") {
    CHECK_THROWS_AS(sample_mask(10, 1.0, 0), ConfigError);
    CHECK_THROWS_AS(sample_mask(10, -0.1, 0), ConfigError);
  }

  TEST_CASE("inclusion frequency is about r") {
    std::vector<int> counts(16, 0);
    const int draws = 20000;
    for (int d = 0; d < draws; ++d)
      for (auto i : sample_mask(16, 0.5, derive_seed(99, d)).masked_idx) ++counts[i];
    for (int c : counts) CHECK(static_cast<double>(c) / draws == doctest::Approx(0.5).epsilon(0.04));
  }

  TEST_CASE("level ratios interpolate linearly") {
    CHECK(level_mask_ratio(0, 3, 0.75, 0.25) == 0.75);
    CHECK(level_mask_ratio(1, 3, 0.75, 0.25) == doctest::Approx(0.5));
    CHECK(level_mask_ratio(2, 3, 0.75, 0.25) == 0.25);
    CHECK(level_mask_ratio(1, 2, 0.75, 0.25) == 0.25);
    for (int l = 0; l < 7; ++l) {
      const double r = level_mask_ratio(l, 7, 0.9, 0.1);
      CHECK(r <= 0.9);
      CHECK(r >= 0.1);
    }
    CHECK_THROWS_AS(level_mask_ratio(0, 3, 0.2, 0.5), ConfigError);
  }

  TEST_CASE("split then scatter reassembles the tokens bit-exactly") {
    Rng rng(4);
    const auto tokens = Tensor::randn({3, 20, 5}, rng);
    std::vector<MaskPlan> plans;
    for (int b = 0; b < 3; ++b) plans.push_back(sample_mask(20, 0.6, derive_seed(4, b)));
    const auto [vis, msk] = split(tokens, plans);
    CHECK(vis.shape() == Shape{3, 8, 5});
    CHECK(msk.shape() == Shape{3, 12, 5});
    const auto back = scatter(vis, msk, plans);
    CHECK(std::equal(tokens.data().begin(), tokens.data().end(), back.data().begin()));
  }

  TEST_CASE("empty masked set leaves all tokens visible") {
    Rng rng(5);
    const auto tokens = Tensor::randn({1, 6, 2}, rng);
    const MaskPlan plans[1] = {sample_mask(6, 0.0, 1)};
    const auto [vis, msk] = split(tokens, plans);
    CHECK_FALSE(msk.defined());
    CHECK(std::equal(tokens.data().begin(), tokens.data().end(), vis.data().begin()));
  }

  TEST_CASE("all but one masked leaves one visible token") {
    MaskPlan plan = full_mask(5);
    plan.masked_idx.erase(plan.masked_idx.begin() + 2);
    plan.visible_idx = {2};
    const MaskPlan plans[1] = {plan};
    const auto [vis, msk] = split(Tensor::zeros({1, 5, 3}), plans);
    CHECK(vis.dim(1) == 1);
  }

  TEST_CASE("a plan for the wrong token count is a contract error") {
    const MaskPlan plans[1] = {sample_mask(8, 0.5, 1)};
    CHECK_THROWS_AS(split(Tensor::zeros({1, 9, 2}), plans), ContractError);
  }
}
