#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace imbpos {

// Seeded random stream with platform-independent distributions.
//
// std::mt19937_64 output is fully specified by the standard, but the
// std::*_distribution adaptors are not, so the mappings to uniform reals,
// bounded integers and normals are defined here. Every stochastic step in the
// library draws from one of these streams, which is what makes results
// byte-identical across runs and toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform();

  // Uniform integer in [0, n). n must be positive.
  std::size_t below(std::size_t n);

  // Standard normal via Box-Muller; the second variate is cached.
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Hierarchical seed derivation: child = H(parent, tag, index).
std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag, std::uint64_t index = 0);

}  // namespace imbpos
