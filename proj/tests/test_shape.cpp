#include <doctest.h>

#include <numeric>
#include <random>

#include "bspline_oracle.hpp"
#include "sowpic/shape.hpp"
#include "test_util.hpp"

using namespace sowpic;
using namespace sowpic::shape;

TEST_SUITE("shape") {
  TEST_CASE("anchor_and_fraction") {
    auto [i0, xi] = anchor_and_fraction(5.0, 3);
    CHECK(i0 == 4);
    CHECK(xi == 0.0);
    CHECK(anchor_and_fraction(3.5, 1).second == 0.5);
    const auto g = testing::cube_geometry(8);
    auto [a, f] = anchor_and_fraction(g.prob_lo[0] + 2.75 * g.dx[0], 0, g, 3);
    CHECK(a == 1);
    CHECK(f == doctest::Approx(0.75).epsilon(1e-12));
    // Order 2 anchors on the nearest node.
    CHECK(anchor_and_fraction(3.4, 2).first == 2);
    CHECK(anchor_and_fraction(3.6, 2).first == 3);
    CHECK_THROWS_AS(anchor_and_fraction(1.0, 4), ConfigError);
  }

  TEST_CASE("closed-form weights") {
    auto w1 = shape_weights(0.0, 1);
    CHECK(w1[0] == 1.0);
    CHECK(w1[1] == 0.0);
    auto w0 = shape_weights(0.0, 3);
    CHECK(std::abs(w0[0] - 1.0 / 6.0) <= 1e-15);
    CHECK(std::abs(w0[1] - 2.0 / 3.0) <= 1e-15);
    CHECK(std::abs(w0[2] - 1.0 / 6.0) <= 1e-15);
    CHECK(w0[3] == 0.0);
    auto wh = shape_weights(0.5, 3);
    CHECK(std::abs(wh[0] - 1.0 / 48.0) <= 1e-15);
    CHECK(std::abs(wh[1] - 23.0 / 48.0) <= 1e-15);
    CHECK(std::abs(wh[2] - 23.0 / 48.0) <= 1e-15);
    CHECK(std::abs(wh[3] - 1.0 / 48.0) <= 1e-15);
    CHECK_THROWS_AS(shape_weights(0.2, 5), ConfigError);
  }

  TEST_CASE("weights agree with the centred B-spline at every node") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 40.0);
    for (int order = 1; order <= 3; ++order) {
      for (int t = 0; t < 2000; ++t) {
        const double s = u(rng);
        const auto aw = axis_weights(s, order);
        // Node i sits at coordinate i in cell units.
        for (int k = 0; k <= order; ++k) {
          CHECK(std::abs(aw.w[k] - testing::centred_bspline(order, s - (aw.i0 + k))) <= 1e-14);
        }
      }
    }
  }

  TEST_CASE("partition of unity and positivity") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int order = 1; order <= 3; ++order) {
      double worst = 0.0;
      for (int t = 0; t < 10000; ++t) {
        const auto w = shape_weights(u(rng), order);
        for (double v : w) CHECK(v >= 0.0);
        worst = std::max(worst, std::abs(w[0] + w[1] + w[2] + w[3] - 1.0));
      }
      CHECK(worst <= 1e-14);
    }
  }

  TEST_CASE("shift consistency at the cell boundary") {
    for (int order : {1, 3}) {
      const double below = std::nextafter(1.0, 0.0);
      const auto hi = shape_weights(below, order);
      const auto lo = shape_weights(0.0, order);
      for (int k = 0; k < order; ++k) CHECK(std::abs(hi[k + 1] - lo[k]) <= 1e-12);
      CHECK(std::abs(hi[0]) <= 1e-12);
    }
    // Order 2 switches anchor at the half-cell point.
    const auto a = axis_weights(std::nextafter(2.5, 0.0), 2);
    const auto b = axis_weights(2.5, 2);
    CHECK(b.i0 == a.i0 + 1);
    for (int k = 0; k < 2; ++k) CHECK(std::abs(a.w[k + 1] - b.w[k]) <= 1e-12);
  }

  TEST_CASE("stencil_weights_3d") {
    const auto w = stencil_weights_3d(axis_weights(3.0, 1), axis_weights(4.0, 1), axis_weights(5.0, 1));
    CHECK(w.K == 8);
    CHECK(w.anchor == Int3{3, 4, 5});
    CHECK(w.w[0] == 1.0);
    for (int q = 1; q < 8; ++q) CHECK(w.w[q] == 0.0);

    const auto h = stencil_weights_3d(axis_weights(0.5, 1), axis_weights(0.5, 1), axis_weights(0.5, 1));
    for (int q = 0; q < 8; ++q) CHECK(h.w[q] == 0.125);

    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 30.0);
    for (int t = 0; t < 1000; ++t) {
      const auto ax = axis_weights(u(rng), 3), ay = axis_weights(u(rng), 3), az = axis_weights(u(rng), 3);
      const auto s = stencil_weights_3d(ax, ay, az);
      CHECK(s.K == 64);
      const double sum = std::accumulate(s.w.begin(), s.w.begin() + s.K, 0.0);
      CHECK(std::abs(sum - 1.0) <= 1e-14);
      // x-fastest flattening.
      CHECK(s.w[1 + 4 * (2 + 4 * 3)] == doctest::Approx(ax.w[1] * ay.w[2] * az.w[3]).epsilon(1e-15));
    }
  }

  TEST_CASE("cell-anchored embedding") {
    // Odd orders are unchanged.
    const auto a = cell_anchored_weights(6.3, 6, 3);
    const auto b = axis_weights(6.3, 3);
    CHECK(a.i0 == b.i0);
    CHECK(a.w == b.w);
    // Order 2: both halves of a cell map onto one 4-wide stencil.
    for (double s : {6.1, 6.9}) {
      const auto e = cell_anchored_weights(s, 6, 2);
      CHECK(e.i0 == 5);
      CHECK(e.width == 4);
      for (int k = 0; k < 4; ++k) CHECK(std::abs(e.w[k] - testing::centred_bspline(2, s - (5 + k))) <= 1e-14);
    }
  }
}
