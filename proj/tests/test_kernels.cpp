#include <doctest.h>

#include <random>
#include <vector>

#include "sowpic/kernels.hpp"
#include "test_util.hpp"

using namespace sowpic;
using namespace sowpic::kernels;

namespace {

std::vector<Vec3> positions_in_cell(std::mt19937_64& rng, const Int3& cell, int n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Vec3> out;
  for (int i = 0; i < n; ++i) out.push_back({cell[0] + u(rng), cell[1] + u(rng), cell[2] + u(rng)});
  return out;
}

}  // namespace

TEST_SUITE("kernels") {
  TEST_CASE("mopa unit vectors, zero vector, and two updates") {
    MopaTile t;
    TileVector a{}, b{};
    a[2] = 1.0;
    b[5] = 1.0;
    mopa_accumulate(t, a, b);
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) CHECK(t(i, j) == (i == 2 && j == 5 ? 1.0 : 0.0));

    MopaTile before = t;
    TileVector zero{}, any{1, 2, 3, 4, 5, 6, 7, 8};
    mopa_accumulate(t, zero, any);
    CHECK(t.c == before.c);

    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1, 1);
    TileVector a1, b1, a2, b2;
    for (int i = 0; i < 8; ++i) a1[i] = u(rng), b1[i] = u(rng), a2[i] = u(rng), b2[i] = u(rng);
    MopaTile s;
    mopa_accumulate(s, a1, b1);
    mopa_accumulate(s, a2, b2);
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) CHECK(s(i, j) == std::fma(a2[i], b2[j], std::fma(a1[i], b1[j], 0.0)));
  }

  TEST_CASE("scalar gather on uniform, zero and linear fields") {
    const auto g = testing::cube_geometry(8);
    auto f = allocate_fields(g);
    f.ex.fill(5.0);
    std::mt19937_64 rng(2);
    for (int order = 1; order <= 3; ++order) {
      for (const auto& s : positions_in_cell(rng, {3, 4, 5}, 20)) {
        const auto r = gather_scalar(s, f, order);
        CHECK(std::abs(r.e[0] - 5.0) <= 1e-14);
        CHECK(r.b[2] == 0.0);
      }
    }
    auto z = allocate_fields(g);
    const auto r0 = gather_scalar(Vec3{2.2, 3.3, 4.4}, z, 3);
    CHECK(r0.e == Vec3{0, 0, 0});
    CHECK(r0.b == Vec3{0, 0, 0});

    // Ex = 0.7 * i is reproduced exactly by linear (and cubic) B-splines.
    auto lin = allocate_fields(g);
    for (int k = -3; k < 11; ++k)
      for (int j = -3; j < 11; ++j)
        for (int i = -3; i < 11; ++i) lin.ex(i, j, k) = 0.7 * i;
    for (const auto& s : positions_in_cell(rng, {2, 6, 1}, 50)) {
      CHECK(std::abs(gather_scalar(s, lin, 1).e[0] - 0.7 * s[0]) <= 1e-13);
      CHECK(std::abs(gather_scalar(s, lin, 3).e[0] - 0.7 * s[0]) <= 1e-13);
    }
  }

  TEST_CASE("gather outside the guard region is an ownership error") {
    const auto g = testing::cube_geometry(8);
    auto f = allocate_fields(g);
    CHECK_THROWS_AS(gather_scalar(Vec3{-3.5, 1, 1}, f, 3), OwnershipError);
    CHECK_THROWS_AS(gather_scalar(Vec3{10.5, 1, 1}, f, 3), OwnershipError);
    CHECK_NOTHROW(gather_scalar(Vec3{-1.5, 1, 1}, f, 3));
  }

  TEST_CASE("weight matrix rows and padding") {
    InterpBatch b;
    std::vector<Vec3> one{{3.0, 3.0, 3.0}};
    build_weight_matrix(b, one, 1);
    CHECK(b.K == 8);
    CHECK(b.anchor == Int3{3, 3, 3});
    CHECK(b.W(0, 0) == 1.0);
    for (int q = 1; q < 8; ++q) CHECK(b.W(0, q) == 0.0);
    for (int i = 1; i < 8; ++i)
      for (int q = 0; q < 8; ++q) CHECK(b.W(i, q) == 0.0);

    std::vector<Vec3> same(8, Vec3{3.2, 3.7, 3.1});
    build_weight_matrix(b, same, 3);
    for (int i = 1; i < 8; ++i)
      for (int q = 0; q < 64; ++q) CHECK(b.W(i, q) == b.W(0, q));

    std::mt19937_64 rng(3);
    for (int order = 1; order <= 3; ++order) {
      auto pos = positions_in_cell(rng, {4, 2, 5}, 5);
      build_weight_matrix(b, pos, order);
      for (int i = 0; i < 5; ++i) {
        double sum = 0;
        for (int q = 0; q < b.K; ++q) sum += b.W(i, q);
        CHECK(std::abs(sum - 1.0) <= 1e-14);
      }
      for (int i = 5; i < 8; ++i)
        for (int q = 0; q < b.K; ++q) CHECK(b.W(i, q) == 0.0);
    }

    std::vector<Vec3> mixed{{1.5, 1.5, 1.5}, {2.5, 1.5, 1.5}};
    CHECK_THROWS_AS(build_weight_matrix(b, mixed, 3), LayoutError);
  }

  TEST_CASE("grid field matrix") {
    const auto g = testing::cube_geometry(8);
    auto f = allocate_fields(g);
    InterpBatch b;
    std::vector<Vec3> pos{{3.5, 3.5, 3.5}};
    build_weight_matrix(b, pos, 3);
    build_grid_field_matrix(b, f);
    for (int q = 0; q < 64; ++q)
      for (int d = 0; d < 8; ++d) CHECK(b.G(q, d) == 0.0);

    f.ex.fill(3.0);
    build_grid_field_matrix(b, f);
    for (int q = 0; q < 64; ++q) {
      CHECK(b.G(q, 0) == 3.0);
      CHECK(b.G(q, 6) == 0.0);
      CHECK(b.G(q, 7) == 0.0);
    }

    std::mt19937_64 rng(4);
    testing::randomize(f, rng);
    build_grid_field_matrix(b, f);
    for (int k = 0; k < 4; ++k)
      for (int j = 0; j < 4; ++j)
        for (int i = 0; i < 4; ++i) {
          const int q = i + 4 * (j + 4 * k);
          const int x = 2 + i, y = 2 + j, z = 2 + k;
          CHECK(b.G(q, 0) == f.ex(x, y, z));
          CHECK(b.G(q, 1) == f.ey(x, y, z));
          CHECK(b.G(q, 2) == f.ez(x, y, z));
          CHECK(b.G(q, 3) == f.bx(x, y, z));
          CHECK(b.G(q, 4) == f.by(x, y, z));
          CHECK(b.G(q, 5) == f.bz(x, y, z));
        }
    b.anchor = {-5, 0, 0};
    CHECK_THROWS_AS(build_grid_field_matrix(b, f), OwnershipError);
  }

  TEST_CASE("interpolate_batch: degenerate K=1 and uniform field") {
    InterpBatch b;
    b.K = 1;
    b.w_cols[0] = {2, 0, 0, 0, 0, 0, 0, 0};
    b.g_rows[0] = {3, 0, 0, 0, 0, 0, 0, 0};
    interpolate_batch(b);
    CHECK(b.F(0, 0) == 6.0);

    const auto g = testing::cube_geometry(8);
    auto f = allocate_fields(g);
    f.ex.fill(5.0);
    std::mt19937_64 rng(6);
    auto pos = positions_in_cell(rng, {1, 2, 3}, 6);
    build_weight_matrix(b, pos, 3);
    build_grid_field_matrix(b, f);
    interpolate_batch(b);
    for (int i = 0; i < 6; ++i) CHECK(std::abs(b.F(i, 0) - 5.0) <= 1e-14);
    for (int i = 6; i < 8; ++i) CHECK(b.F(i, 0) == 0.0);
  }

  TEST_CASE("batched interpolation matches the scalar gather") {
    const auto g = testing::cube_geometry(8);
    auto f = allocate_fields(g);
    std::mt19937_64 rng(8);
    testing::randomize(f, rng, 0, 6);
    std::uniform_int_distribution<int> cell(0, 7), count(1, 8);
    for (int order = 1; order <= 3; ++order) {
      double worst = 0;
      for (int t = 0; t < 1000; ++t) {
        const auto pos = positions_in_cell(rng, {cell(rng), cell(rng), cell(rng)}, count(rng));
        InterpBatch b;
        build_weight_matrix(b, pos, order);
        build_grid_field_matrix(b, f);
        interpolate_batch(b);
        for (std::size_t i = 0; i < pos.size(); ++i) {
          const auto r = gather_scalar(pos[i], f, order);
          const double ref[6] = {r.e[0], r.e[1], r.e[2], r.b[0], r.b[1], r.b[2]};
          double num = 0, den = 0;
          for (int d = 0; d < 6; ++d) {
            num = std::max(num, std::abs(b.F(static_cast<int>(i), d) - ref[d]));
            den = std::max(den, std::abs(ref[d]));
          }
          worst = std::max(worst, num / den);
        }
      }
      CHECK(worst <= 1e-12);
    }
  }

  TEST_CASE("boris push special cases") {
    const double q = constants::electron_charge, m = constants::electron_mass, dt = 1e-16;
    const Vec3 x{1e-6, 2e-6, 3e-6};
    const Vec3 u{0.1, -0.2, 0.05};
    auto r = boris_push(x, u, {0, 0, 0}, {0, 0, 0}, q, m, dt);
    CHECK(r.u_new == u);
    const double gam = std::sqrt(1 + 0.01 + 0.04 + 0.0025);
    for (int a = 0; a < 3; ++a) {
      CHECK(r.x_new[a] == doctest::Approx(x[a] + u[a] * constants::c * dt / gam).epsilon(1e-15));
    }

    // Two half kicks compose exactly from rest.
    const double e0 = 1.0e11;
    auto k = boris_push(x, {0, 0, 0}, {e0, 0, 0}, {0, 0, 0}, q, m, dt);
    const double half = q * dt / (2.0 * m * constants::c) * e0;
    CHECK(k.u_new[0] == 2.0 * half);
    CHECK(k.u_new[0] == doctest::Approx(q * e0 * dt / (m * constants::c)).epsilon(1e-15));
    CHECK(k.u_new[1] == 0.0);

    // Pure magnetic rotation preserves |u|.
    Vec3 uu{0.3, 0.4, 0.1};
    Vec3 xx = x;
    const double u0 = std::sqrt(0.09 + 0.16 + 0.01);
    double worst = 0;
    for (int s = 0; s < 1000; ++s) {
      auto p = boris_push(xx, uu, {0, 0, 0}, {0, 0, 50.0}, q, m, dt);
      xx = p.x_new;
      uu = p.u_new;
      worst = std::max(worst, std::abs(std::sqrt(uu[0] * uu[0] + uu[1] * uu[1] + uu[2] * uu[2]) - u0) / u0);
    }
    CHECK(worst <= 1e-13);

    CHECK_THROWS_AS(boris_push(x, {NAN, 0, 0}, {0, 0, 0}, {0, 0, 0}, q, m, dt, nullptr, 9), NumericError);
  }

  TEST_CASE("push wraps on periodic axes") {
    const auto g = testing::cube_geometry(8);
    const Vec3 x{g.prob_hi[0] - 1e-9, 1e-6, 1e-6};
    auto r = boris_push(x, {0.5, 0, 0}, {0, 0, 0}, {0, 0, 0}, -1.0, 1.0, 1e-16, &g);
    CHECK(r.x_new[0] >= g.prob_lo[0]);
    CHECK(r.x_new[0] < g.prob_lo[0] + g.dx[0]);
  }

  TEST_CASE("scalar deposit edge cases and single-node arithmetic") {
    const auto g = testing::cube_geometry(8);
    const auto frame = LocalFrame::whole(g);
    auto J = allocate_fields(g);
    const double q = -1.6e-19, w = 1e6;
    deposit_scalar({2e-6, 2e-6, 2e-6}, {0.1, 0, 0}, q, 0.0, J, frame, 3);
    deposit_scalar({2e-6, 2e-6, 2e-6}, {0, 0, 0}, q, w, J, frame, 3);
    for (int c = 6; c < 9; ++c) {
      const auto& a = J[static_cast<Component>(c)];
      for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.data()[i] == 0.0);
    }

    const Vec3 u{0.2, 0, 0};
    deposit_scalar({3e-6, 4e-6, 5e-6}, u, q, w, J, frame, 1);
    const double v0 = 0.2 * constants::c / std::sqrt(1.04);
    const double expect = q * w * v0 / g.cell_volume();
    CHECK(J.jx(3, 4, 5) == doctest::Approx(expect).epsilon(1e-14));
    double rest = 0;
    for (std::size_t i = 0; i < J.jx.size(); ++i) rest += std::abs(J.jx.data()[i]);
    CHECK(rest == doctest::Approx(std::abs(expect)).epsilon(1e-14));
  }

  TEST_CASE("batched deposit matches scalar deposit") {
    const auto g = testing::cube_geometry(8);
    const auto frame = LocalFrame::whole(g);
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(0.0, 1.0), mom(-0.3, 0.3), wt(0.5, 2.0);
    const double q = -1.6e-19;
    for (int order = 1; order <= 3; ++order) {
      for (int n : {0, 1, 7, 512}) {
        std::vector<std::uint64_t> id(n);
        std::vector<double> x(n), y(n), z(n), ux(n), uy(n), uz(n), w(n);
        for (int i = 0; i < n; ++i) {
          id[i] = i;
          x[i] = (4 + u(rng)) * g.dx[0];
          y[i] = (2 + u(rng)) * g.dx[1];
          z[i] = (5 + u(rng)) * g.dx[2];
          ux[i] = mom(rng), uy[i] = mom(rng), uz[i] = mom(rng), w[i] = 1e6 * wt(rng);
        }
        ParticleSpan seg{id.data(), x.data(), y.data(), z.data(), ux.data(), uy.data(), uz.data(), w.data(),
                         static_cast<std::size_t>(n)};
        auto Jb = allocate_fields(g), Js = allocate_fields(g);
        deposit_batch(seg, q, Jb, frame, order);
        for (int i = 0; i < n; ++i) {
          deposit_scalar({x[i], y[i], z[i]}, {ux[i], uy[i], uz[i]}, q, w[i], Js, frame, order);
        }
        for (int c = 6; c < 9; ++c) {
          const auto& a = Jb[static_cast<Component>(c)];
          const auto& b = Js[static_cast<Component>(c)];
          const double tol = n == 1 ? 1e-15 : 1e-12;
          CHECK(testing::rel_inf(a.data(), b.data(), a.size()) <= tol);
        }
      }
    }
    // Mixed cells are rejected.
    std::vector<std::uint64_t> id{0, 1};
    std::vector<double> x{1.5e-6, 2.5e-6}, y{1.5e-6, 1.5e-6}, z{1.5e-6, 1.5e-6}, v{0.1, 0.1}, w{1, 1};
    ParticleSpan bad{id.data(), x.data(), y.data(), z.data(), v.data(), v.data(), v.data(), w.data(), 2};
    auto J = allocate_fields(g);
    CHECK_THROWS_AS(deposit_batch(bad, q, J, frame, 3), LayoutError);
  }

  TEST_CASE("deposit is linear in disjoint particle sets") {
    const auto g = testing::cube_geometry(8);
    const auto frame = LocalFrame::whole(g);
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> pos(0.0, 8e-6), mom(-0.5, 0.5);
    std::vector<ParticleRecord> ps(200);
    for (auto& p : ps) p = {0, pos(rng), pos(rng), pos(rng), mom(rng), mom(rng), mom(rng), 1e5};
    auto Ja = allocate_fields(g), Jb = allocate_fields(g), Jab = allocate_fields(g);
    for (int i = 0; i < 200; ++i) {
      auto& dst = i < 100 ? Ja : Jb;
      deposit_scalar(ps[i].position(), ps[i].momentum(), -1.6e-19, ps[i].w, dst, frame, 3);
      deposit_scalar(ps[i].position(), ps[i].momentum(), -1.6e-19, ps[i].w, Jab, frame, 3);
    }
    double scale = 0;
    for (std::size_t i = 0; i < Jab.jx.size(); ++i) scale = std::max(scale, std::abs(Jab.jx.data()[i]));
    for (std::size_t i = 0; i < Jab.jx.size(); ++i) {
      CHECK(std::abs(Ja.jx.data()[i] + Jb.jx.data()[i] - Jab.jx.data()[i]) <= 1e-13 * scale);
    }
  }

  TEST_CASE("atomic scalar deposit equals plain scalar deposit serially") {
    const auto g = testing::cube_geometry(8);
    const auto frame = LocalFrame::whole(g);
    auto J1 = allocate_fields(g), J2 = allocate_fields(g);
    deposit_scalar({3.3e-6, 4.1e-6, 2.2e-6}, {0.1, 0.2, -0.3}, -1.0, 2.0, J1, frame, 3, false);
    deposit_scalar({3.3e-6, 4.1e-6, 2.2e-6}, {0.1, 0.2, -0.3}, -1.0, 2.0, J2, frame, 3, true);
    for (std::size_t i = 0; i < J1.jy.size(); ++i) CHECK(J1.jy.data()[i] == J2.jy.data()[i]);
  }
}
