#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <thread>

#include "sowpic/solver.hpp"
#include "test_util.hpp"

using namespace sowpic;
using namespace sowpic::solver;

namespace {

GridGeometry line_geometry(int nx, double dx) {
  GridGeometry g;
  g.n_cell = {nx, 4, 4};
  g.tile_shape = {4, 4, 4};
  g.dx = {dx, dx, dx};
  g.prob_lo = {0, 0, 0};
  g.prob_hi = {nx * dx, 4 * dx, 4 * dx};
  return g;
}

double field_energy(const FieldSet& f, const GridGeometry& g) {
  double e = 0.0;
  const Int3 n = f.interior();
  for (int k = 0; k < n[2]; ++k)
    for (int j = 0; j < n[1]; ++j)
      for (int i = 0; i < n[0]; ++i) {
        double e2 = 0, b2 = 0;
        for (int a = 0; a < 3; ++a) {
          e2 += f.e(a)(i, j, k) * f.e(a)(i, j, k);
          b2 += f.b(a)(i, j, k) * f.b(a)(i, j, k);
        }
        e += 0.5 * (constants::eps0 * e2 + b2 / constants::mu0) * g.cell_volume();
      }
  return e;
}

void full_step(FieldSet& f, const GridGeometry& g, double dt) {
  for (int c = 0; c < 6; ++c) fill_periodic_guards(f[static_cast<Component>(c)]);
  advance_B_half(f, g.dx, dt);
  for (int c = 3; c < 6; ++c) fill_periodic_guards(f[static_cast<Component>(c)]);
  advance_E_full(f, g.dx, dt);
  for (int c = 0; c < 3; ++c) fill_periodic_guards(f[static_cast<Component>(c)]);
  advance_B_half(f, g.dx, dt);
}

}  // namespace

TEST_SUITE("solver") {
  TEST_CASE("time step honours the CFL relation") {
    const auto g = testing::cube_geometry(8);
    const double dt = compute_dt(g, 0.7);
    CHECK(dt == doctest::Approx(0.7 * 1e-6 / (constants::c * std::sqrt(3.0))).epsilon(1e-15));
  }

  TEST_CASE("advance_B_half") {
    const auto g = line_geometry(64, 1e-6);
    auto f = allocate_fields(g.n_cell, 3);
    f.ex.fill(2.0);
    f.ey.fill(-1.0);
    advance_B_half(f, g.dx, 1e-15);
    for (int c = 3; c < 6; ++c) CHECK(f[static_cast<Component>(c)](5, 1, 1) == 0.0);

    // Ey = sin(kx): dBz/dt = -dEy/dx = -k cos(kx).
    auto s = allocate_fields(g.n_cell, 3);
    const double k = 2.0 * std::numbers::pi / (64 * 1e-6);
    for (int kk = -3; kk < 7; ++kk)
      for (int j = -3; j < 7; ++j)
        for (int i = -3; i < 67; ++i) s.ey(i, j, kk) = std::sin(k * i * 1e-6);
    const double dt = 1e-15;
    advance_B_half(s, g.dx, dt);
    const double kdx = k * 1e-6;
    double worst = 0;
    for (int i = 0; i < 64; ++i) {
      const double exact = -0.5 * dt * k * std::cos(k * i * 1e-6);
      worst = std::max(worst, std::abs(s.bz(i, 2, 2) - exact));
    }
    CHECK(worst <= 0.5 * dt * k * kdx * kdx / 6.0 * 1.01);

    // Two half steps on a static E equal one full step of -dt curl E.
    auto two = allocate_fields(g.n_cell, 3);
    auto one = allocate_fields(g.n_cell, 3);
    std::mt19937_64 rng(2);
    testing::randomize(two, rng, 0, 3);
    for (int c = 0; c < 3; ++c) one[static_cast<Component>(c)] = two[static_cast<Component>(c)];
    advance_B_half(two, g.dx, dt);
    advance_B_half(two, g.dx, dt);
    advance_B_half(one, g.dx, 2 * dt);
    for (int c = 3; c < 6; ++c) {
      const auto& a = two[static_cast<Component>(c)];
      const auto& b = one[static_cast<Component>(c)];
      CHECK(testing::rel_inf(a.data(), b.data(), a.size()) <= 1e-15);
    }
  }

  TEST_CASE("advance_E_full") {
    const auto g = line_geometry(8, 1e-6);
    auto f = allocate_fields(g.n_cell, 3);
    f.jy.fill(3.0);
    const double dt = 2e-16;
    advance_E_full(f, g.dx, dt);
    CHECK(f.ey(3, 1, 2) == dt * (0.0 - 3.0 * (1.0 / constants::eps0)));
    CHECK(f.ex(3, 1, 2) == 0.0);

    auto z = allocate_fields(g.n_cell, 3);
    advance_E_full(z, g.dx, dt);
    advance_B_half(z, g.dx, dt);
    for (int c = 0; c < 6; ++c) CHECK(z[static_cast<Component>(c)](2, 2, 2) == 0.0);
  }

  TEST_CASE("vacuum plane wave: dispersion and energy") {
    const double dx = 1e-6;
    const auto g = line_geometry(32, dx);
    auto f = allocate_fields(g.n_cell, 3);
    const double k = 2.0 * std::numbers::pi / (32 * dx);
    const double dt = compute_dt(g, 0.7);
    const double w = k * constants::c;
    // Ey and Bz both at t = 0 on shared nodes.
    for (int kk = 0; kk < 4; ++kk)
      for (int j = 0; j < 4; ++j)
        for (int i = 0; i < 32; ++i) {
          f.ey(i, j, kk) = std::sin(k * i * dx);
          f.bz(i, j, kk) = std::sin(k * i * dx) / constants::c;
        }
    const double e0 = field_energy(f, g);
    double drift = 0;
    for (int s = 1; s <= 1000; ++s) {
      full_step(f, g, dt);
      if (s == 100) {
        double worst = 0;
        for (int i = 0; i < 32; ++i) worst = std::max(worst, std::abs(f.ey(i, 1, 1) - std::sin(k * i * dx - w * 100 * dt)));
        const double kdx = k * dx;
        CHECK(worst <= w * 100 * dt * kdx * kdx / 2.0);
      }
      drift = std::max(drift, std::abs(field_energy(f, g) - e0) / e0);
    }
    CHECK(drift <= 1e-3);
  }

  TEST_CASE("periodic guard fill and fold on one domain") {
    auto a = NodeArray({4, 4, 4}, 2);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int k = 0; k < 4; ++k)
      for (int j = 0; j < 4; ++j)
        for (int i = 0; i < 4; ++i) a(i, j, k) = u(rng);
    fill_periodic_guards(a);
    CHECK(a(-1, 0, 0) == a(3, 0, 0));
    CHECK(a(5, -2, 4) == a(1, 2, 0));
    NodeArray uni({4, 4, 4}, 2);
    uni.fill(1.5);
    fill_periodic_guards(uni);
    for (std::size_t i = 0; i < uni.size(); ++i) CHECK(uni.data()[i] == 1.5);

    NodeArray j({4, 4, 4}, 2);
    j(-1, 0, 0) = 2.0;
    j(4, 0, 0) = 3.0;
    j(1, 1, 1) = 1.0;
    fold_periodic_guards(j);
    CHECK(j(3, 0, 0) == 2.0);
    CHECK(j(0, 0, 0) == 3.0);
    CHECK(j(1, 1, 1) == 1.0);
    CHECK(j(-1, 0, 0) == 0.0);
  }

  TEST_CASE("two-rank halo exchange and guard reduction match the single domain") {
    auto g = testing::cube_geometry(16, 8);
    layout::Decomposition single(g, {1, 1, 1});
    layout::Decomposition two(g, {2, 1, 1});
    fabric::RankFabric fab(2, CostModel{});
    FieldExchanger ex(two, &fab);
    fabric::RankFabric fab1(1, CostModel{});
    FieldExchanger ex1(single, &fab1);

    std::mt19937_64 rng(7);
    auto global = allocate_fields(g.n_cell, 3);
    testing::randomize(global, rng);
    std::vector<FieldSet> parts;
    for (int r = 0; r < 2; ++r) {
      parts.push_back(allocate_fields(two.rank_extent(), 3));
      testing::randomize(parts[r], rng);  // guards start as garbage
      const Int3 o = two.rank_origin(r);
      for (int c = 0; c < 9; ++c)
        for (int k = 0; k < 16; ++k)
          for (int j = 0; j < 16; ++j)
            for (int i = 0; i < 8; ++i)
              parts[r][static_cast<Component>(c)](i, j, k) = global[static_cast<Component>(c)](o[0] + i, j, k);
    }
    // Expected reduction result: every node's interior value plus all guard
    // images of it across both ranks.
    auto expect_j = allocate_fields(g.n_cell, 0);
    for (int r = 0; r < 2; ++r) {
      const Int3 o = two.rank_origin(r);
      for (int k = -3; k < 19; ++k)
        for (int j = -3; j < 19; ++j)
          for (int i = -3; i < 11; ++i) {
            auto w = [](int v) { return (v % 16 + 16) % 16; };
            expect_j.jx(w(o[0] + i), w(j), w(k)) += parts[r].jx(i, j, k);
          }
    }

    fab.start_workers(2);
    auto worker = [&](int r) {
      ex.halo_exchange(r, parts[r], {Component::Ex, Component::Ey, Component::Ez}, 0);
      ex.reduce_guards(r, parts[r], {Component::Jx, Component::Jy, Component::Jz}, 1);
      fab.worker_done();
    };
    std::thread t0(worker, 0), t1(worker, 1);
    t0.join();
    t1.join();

    fill_periodic_guards(global.ex);
    ex1.halo_exchange(0, global, {Component::Ex}, 0);
    for (int r = 0; r < 2; ++r) {
      const Int3 o = two.rank_origin(r);
      for (int k = -3; k < 19; ++k)
        for (int j = -3; j < 19; ++j)
          for (int i = -3; i < 11; ++i) {
            const int gi = o[0] + i;
            CHECK(parts[r].ex(i, j, k) == global.ex(gi < -3 ? gi + 16 : gi > 18 ? gi - 16 : gi, j, k));
          }
      for (int k = 0; k < 16; ++k)
        for (int j = 0; j < 16; ++j)
          for (int i = 0; i < 8; ++i) {
            const double e = expect_j.jx(o[0] + i, j, k);
            CHECK(std::abs(parts[r].jx(i, j, k) - e) <= 1e-12 * std::max(1.0, std::abs(e)));
          }
      CHECK(parts[r].jx(-1, 0, 0) == 0.0);
    }
  }

  TEST_CASE("exchanger rejects rank boxes thinner than the guard") {
    auto g = testing::cube_geometry(16, 2);
    layout::Decomposition d(g, {8, 1, 1});
    CHECK_THROWS_AS(FieldExchanger(d, nullptr), ConfigError);
  }
}
