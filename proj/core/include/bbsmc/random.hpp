#pragma once

#include <cstdint>
#include <random>

namespace bbsmc {

// Mixing function used to derive independent substream seeds from a master
// seed. Standard splitmix64 finalizer; statistically independent outputs for
// distinct inputs.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Seeded random generator with reproducible substream derivation.
//
// Substreams are derived from the *seed*, not the generator state, so
// rng.substream(j) is identical no matter how many draws were consumed.
// Replicate j of an experiment uses substream(j); nested components derive
// further substreams from their own ids.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), gen_(mix64(seed)) {}

  std::uint64_t seed() const { return seed_; }

  Rng substream(std::uint64_t id) const { return Rng(mix64(seed_ ^ mix64(id))); }

  // U[0,1)
  double uniform() { return unit_(gen_); }

  // U[a,b)
  double uniform(double a, double b) { return a + (b - a) * unit_(gen_); }

  // Strictly positive U(0,1); rejects the (measure-zero) exact zero.
  double uniform_pos() {
    double u;
    do {
      u = unit_(gen_);
    } while (u <= 0.0);
    return u;
  }

  // Uniform on {0, 1, ..., n-1}
  int uniform_int(int n) { return static_cast<int>(std::uniform_int_distribution<int>(0, n - 1)(gen_)); }

  double normal() { return normal_(gen_); }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 gen_;
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace bbsmc
