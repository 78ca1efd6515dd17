#include "phmdiff/rng.hpp"

#include <sstream>

#include "phmdiff/error.hpp"

namespace phmdiff {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t k) {
  return splitmix64(splitmix64(seed) ^ splitmix64(k + 0x632BE59BD9B4E019ULL));
}

double Rng::uniform() { return uniform_(engine_); }

double Rng::normal() { return normal_(engine_); }

std::size_t Rng::uniform_index(std::size_t n) {
  if (n == 0) throw ContractError("uniform_index: empty range");
  std::uniform_int_distribution<std::size_t> d(0, n - 1);
  return d(engine_);
}

int Rng::uniform_int(int lo, int hi) {
  if (hi < lo) throw ContractError("uniform_int: empty range");
  std::uniform_int_distribution<int> d(lo, hi);
  return d(engine_);
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_ << ' ' << normal_ << ' ' << uniform_;
  return os.str();
}

void Rng::restore(const std::string& state) {
  std::istringstream is(state);
  is >> engine_ >> normal_ >> uniform_;
  if (!is) throw CorruptionError("rng state string is malformed");
}

}  // namespace phmdiff
