#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace ltm {

/// Independent generator for (seed, stream), mixed through std::seed_seq.
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

/// Standard normal draws from one generator.
class NormalSource {
 public:
  explicit NormalSource(std::mt19937_64 rng) : rng_(rng) {}

  double operator()() { return dist_(rng_); }
  void fill(std::span<double> out) {
    for (double& v : out) v = dist_(rng_);
  }
  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
  std::normal_distribution<double> dist_{0.0, 1.0};
};

}  // namespace ltm
