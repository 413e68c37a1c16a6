#pragma once

// Shared helpers for the unit tests: seeded random inputs and central
// finite differences.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "ltm/matrix.hpp"

namespace ltm::test {

inline std::vector<double> random_vector(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  std::vector<double> v(n);
  for (double& x : v) x = normal(rng);
  return v;
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0) {
  Matrix m(rows, cols);
  const auto v = random_vector(rows * cols, seed, scale);
  std::copy(v.begin(), v.end(), m.data());
  return m;
}

/// Central difference of f along coordinate i of x.
inline double central_difference(const std::function<double(std::span<const double>)>& f, std::vector<double> x,
                                 std::size_t i, double h) {
  const double x0 = x[i];
  x[i] = x0 + h;
  const double up = f(x);
  x[i] = x0 - h;
  const double down = f(x);
  return (up - down) / (2.0 * h);
}

/// |a - b| / max(|a|, |b|, floor).
inline double rel_error(double a, double b, double floor = 1e-12) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace ltm::test
