#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "phmdiff/error.hpp"
#include "phmdiff/rng.hpp"
#include "phmdiff/tensor.hpp"

using namespace phmdiff;

TEST_SUITE("tensor") {
  TEST_CASE("add broadcasts a row over a matrix") {
    const auto a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    const auto b = Tensor::from({3}, {10, 20, 30});
    const auto c = add(a, b);
    CHECK(c.shape() == Shape{2, 3});
    const std::vector<double> want{11, 22, 33, 14, 25, 36};
    CHECK(std::vector<double>(c.data().begin(), c.data().end()) == want);
  }

  TEST_CASE("incompatible broadcast raises a shape error") {
    CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({2})), ShapeError);
  }

  TEST_CASE("matmul matches a hand product") {
    const auto a = Tensor::from({2, 2}, {1, 2, 3, 4});
    const auto b = Tensor::from({2, 2}, {5, 6, 7, 8});
    const auto c = matmul(a, b);
    CHECK(c.at(0) == 19);
    CHECK(c.at(1) == 22);
    CHECK(c.at(2) == 43);
    CHECK(c.at(3) == 50);
  }

  TEST_CASE("matmul inner-dimension mismatch raises") {
    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
  }

  TEST_CASE("softmax rows sum to one and are shift invariant") {
    Rng rng(3);
    const auto x = Tensor::randn({4, 7}, rng, 5.0);
    const auto s = softmax(x);
    const auto s2 = softmax(add_scalar(x, 100.0));
    for (int r = 0; r < 4; ++r) {
      double acc = 0.0;
      for (int c = 0; c < 7; ++c) acc += s.at(r * 7 + c);
      CHECK(acc == doctest::Approx(1.0).epsilon(1e-14));
    }
    for (std::size_t i = 0; i < s.numel(); ++i) CHECK(s.at(i) == doctest::Approx(s2.at(i)).epsilon(1e-12));
  }

  TEST_CASE("layer_norm output has zero mean and unit variance with identity affine") {
    Rng rng(5);
    const auto x = Tensor::randn({3, 16}, rng, 3.0);
    const auto y = layer_norm(x, Tensor::full({16}, 1.0), Tensor::zeros({16}), 1e-12);
    for (int r = 0; r < 3; ++r) {
      double m = 0, v = 0;
      for (int c = 0; c < 16; ++c) m += y.at(r * 16 + c);
      m /= 16;
      for (int c = 0; c < 16; ++c) v += (y.at(r * 16 + c) - m) * (y.at(r * 16 + c) - m);
      CHECK(std::fabs(m) < 1e-12);
      CHECK(v / 16 == doctest::Approx(1.0).epsilon(1e-12));
    }
  }

  TEST_CASE("no tape is recorded outside a TapeScope") {
    auto x = Tensor::full({2}, 1.0);
    x.set_requires_grad(true);
    Tape tape;
    const auto y = mul(x, x);
    CHECK(tape.size() == 0);
    {
      TapeScope scope(tape);
      const auto z = mul(x, x);
      CHECK(tape.size() == 1);
    }
    CHECK(active_tape() == nullptr);
  }

  TEST_CASE("ops on constants are not recorded") {
    Tape tape;
    TapeScope scope(tape);
    const auto z = add(Tensor::full({2}, 1.0), Tensor::full({2}, 2.0));
    CHECK(tape.size() == 0);
  }

  TEST_CASE("backward rejects a non-scalar loss") {
    Tape tape;
    auto x = Tensor::full({2}, 1.0);
    x.set_requires_grad(true);
    Tensor y;
    {
      TapeScope scope(tape);
      y = scale(x, 2.0);
    }
    CHECK_THROWS_AS(backward(y, tape), ContractError);
  }

  TEST_CASE("gradient of a reused tensor accumulates") {
    auto x = Tensor::from({1}, {3.0});
    x.set_requires_grad(true);
    Tape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      loss = sum(add(mul(x, x), x));  // x^2 + x
    }
    backward(loss, tape);
    CHECK(x.grad()[0] == doctest::Approx(7.0));
  }

  TEST_CASE("mse against a direct sum of squares") {
    Rng rng(11);
    const auto a = Tensor::randn({3, 5}, rng), b = Tensor::randn({3, 5}, rng);
    double want = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) want += (a.at(i) - b.at(i)) * (a.at(i) - b.at(i));
    CHECK(mse(a, b).item() == doctest::Approx(want / 15).epsilon(1e-14));
  }

  TEST_CASE("pairwise_sq_dist against explicit differences") {
    Rng rng(12);
    const auto a = Tensor::randn({4, 3}, rng), b = Tensor::randn({5, 3}, rng);
    const auto d = pairwise_sq_dist(a, b);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 5; ++j) {
        double s = 0;
        for (int k = 0; k < 3; ++k) s += std::pow(a.at(i * 3 + k) - b.at(j * 3 + k), 2);
        CHECK(d.at(i * 5 + j) == doctest::Approx(s).epsilon(1e-12));
      }
  }

  TEST_CASE("concat and slice invert each other") {
    Rng rng(13);
    const auto a = Tensor::randn({2, 3, 4}, rng), b = Tensor::randn({2, 5, 4}, rng);
    const auto c = concat({a, b}, 1);
    const auto back = slice(c, 1, 3, 5);
    for (std::size_t i = 0; i < b.numel(); ++i) CHECK(back.at(i) == b.at(i));
  }

  TEST_CASE("every op passes finite-difference gradient checks") {
    for (const auto& rep : testing::check_all_ops(20, 2024)) {
      INFO(rep.op);
      CHECK(rep.max_rel_error < 1e-4);
    }
  }
}
