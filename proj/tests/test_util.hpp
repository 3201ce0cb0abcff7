#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "sowpic/core.hpp"

namespace sowpic::testing {

inline GridGeometry cube_geometry(int n, int tile = 8, double dx = 1.0e-6) {
  GridGeometry g;
  g.n_cell = {n, n, n};
  g.prob_lo = {0.0, 0.0, 0.0};
  g.prob_hi = {n * dx, n * dx, n * dx};
  g.dx = {dx, dx, dx};
  g.tile_shape = {tile, tile, tile};
  g.guard = 3;
  return g;
}

/// Fills every node (guards included) of the listed components with U(-1, 1).
inline void randomize(FieldSet& f, std::mt19937_64& rng, int first = 0, int last = 9) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int c = first; c < last; ++c) {
    auto& a = f[static_cast<Component>(c)];
    for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] = u(rng);
  }
}

/// Infinity-norm relative difference between two equally sized ranges.
template <typename A, typename B>
double rel_inf(const A& a, const B& b, std::size_t n) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    num = std::max(num, std::abs(a[i] - b[i]));
    den = std::max(den, std::abs(b[i]));
  }
  return den > 0.0 ? num / den : num;
}

}  // namespace sowpic::testing
