#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace phmdiff {

// SplitMix64 step; used to derive independent per-sample / per-chain seeds.
std::uint64_t splitmix64(std::uint64_t x);

// Derive the k-th child seed of `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t k);

// Seeded generator owned by exactly one consumer. State (engine + cached normal
// variate) can be serialized and restored for bit-exact resumption.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform();                       // [0, 1)
  double normal();                        // N(0, 1)
  std::size_t uniform_index(std::size_t n);  // {0..n-1}
  int uniform_int(int lo, int hi);        // [lo, hi]

  std::mt19937_64& engine() { return engine_; }

  std::string state() const;
  void restore(const std::string& state);

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace phmdiff
