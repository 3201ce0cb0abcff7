#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "sowpic/oracle.hpp"
#include "sowpic/pipeline.hpp"
#include "test_util.hpp"

using namespace sowpic;
using namespace sowpic::pipeline;

namespace {

SimulationConfig small_config(int n = 16, int ppc = 2, double u_th = 0.05) {
  SimulationConfig c;
  c.n_cell = {n, n, n};
  c.prob_lo = {0.0, 0.0, 0.0};
  c.prob_hi = {n * 1e-6, n * 1e-6, n * 1e-6};
  c.ppc = ppc;
  c.u_th = u_th;
  c.steps = 4;
  c.warmup = 0;
  c.virtual_time = true;
  return c;
}

std::vector<std::uint64_t> ids_of(const std::vector<ParticleRecord>& ps) {
  std::vector<std::uint64_t> ids;
  for (const auto& p : ps) ids.push_back(p.id);
  return ids;
}

FieldSet random_fields(const GridGeometry& g, std::uint64_t seed, double e_scale) {
  FieldSet f = allocate_fields(g.n_cell, 0);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int c = 0; c < 6; ++c) {
    const double s = c < 3 ? e_scale : e_scale / constants::c;
    auto& a = f[static_cast<Component>(c)];
    for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] = s * u(rng);
  }
  return f;
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("zero particles reduce a step to the field solve") {
    SimulationConfig c = small_config(16, 0);
    Simulation sim(c);
    const auto m = sim.step();
    CHECK(m.n_particles == 0);
    CHECK(m.t_particle() == 0.0);
    CHECK(m.t_field > 0.0);
  }

  TEST_CASE("a resting particle in zero fields is a fixed point") {
    SimulationConfig c = small_config(16, 0);
    ParticleRecord p;
    p.id = 7;
    p.x = 3.3e-6;
    p.y = 9.1e-6;
    p.z = 12.7e-6;
    p.w = 1.0;
    for (const char* v : {"G7/D3/C2", "G0/D0/C0", "G5/D1/C1"}) {
      CAPTURE(v);
      SimulationConfig cv = c;
      apply_config_value(cv, "variant", v);
      Simulation sim(cv, {p});
      for (int s = 0; s < 5; ++s) sim.step();
      REQUIRE(sim.particles().size() == 1);
      CHECK(sim.particles()[0] == p);
    }
  }

  TEST_CASE("one step matches the oracle on 1000 particles") {
    SimulationConfig c = small_config(16, 0);
    const GridGeometry g = build_geometry(c);
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> n(0.0, 0.1);
    std::vector<ParticleRecord> ps;
    for (std::uint64_t i = 0; i < 1000; ++i) {
      ParticleRecord p;
      p.id = i;
      p.x = u(rng) * g.length(0);
      p.y = u(rng) * g.length(1);
      p.z = u(rng) * g.length(2);
      p.ux = n(rng);
      p.uy = n(rng);
      p.uz = n(rng);
      p.w = 1e5 * (1.0 + u(rng));
      ps.push_back(p);
    }
    const FieldSet f = random_fields(g, 5, 1e10);
    for (const char* v : {"G7/D3/C2", "G4/D2/C2", "G0/D0/C0", "G6/D1/C4"}) {
      CAPTURE(v);
      SimulationConfig cv = c;
      apply_config_value(cv, "variant", v);
      Simulation sim(cv, ps);
      sim.set_fields(f);
      oracle::OracleState ref = oracle::make_state(cv, ps);
      oracle::set_fields(ref, f);
      sim.step();
      oracle::reference_step(ref);
      const auto rep = oracle::compare_states(sim.particles(), sim.gather_fields(), ref.particles,
                                              [&] {
                                                FieldSet out = allocate_fields(g.n_cell, 0);
                                                for (int k = 0; k < 9; ++k) {
                                                  const auto cc = static_cast<Component>(k);
                                                  for (int z = 0; z < g.n_cell[2]; ++z)
                                                    for (int y = 0; y < g.n_cell[1]; ++y)
                                                      for (int x = 0; x < g.n_cell[0]; ++x)
                                                        out[cc](x, y, z) = ref.fields[cc](x, y, z);
                                                }
                                                return out;
                                              }(),
                                              g, 1e-12);
      INFO(rep.to_text());
      CHECK(rep.pass);
    }
  }

  TEST_CASE("same seed twice gives the same checksum") {
    SimulationConfig c = small_config(16, 2, 0.1);
    c.ranks = {2, 1, 1};
    Simulation a(c), b(c);
    const auto ra = a.run();
    const auto rb = b.run();
    CHECK(ra.checksum == rb.checksum);
    CHECK(ra.steps.size() == 4);
    c.seed = 2;
    Simulation d(c);
    CHECK(d.run().checksum != ra.checksum);
  }

  TEST_CASE("cold plasma never migrates") {
    SimulationConfig c = small_config(16, 2, 0.0);
    c.ranks = {2, 2, 1};
    Simulation sim(c);
    for (int s = 0; s < 3; ++s) {
      const auto m = sim.step();
      CHECK(m.n_local_migrants == 0);
      CHECK(m.n_remote_migrants == 0);
      CHECK(m.n_tail == 0);
    }
  }

  TEST_CASE("layout audit holds every step on eight ranks") {
    SimulationConfig c = small_config(16, 4, 0.2);
    c.ranks = {2, 2, 2};
    Simulation sim(c);
    const auto ids = ids_of(sim.particles());
    bool moved = false;
    for (int s = 0; s < 6; ++s) {
      const CellMap before = cell_map(sim);
      const auto m = sim.step();
      moved = moved || m.n_remote_migrants > 0;
      const AuditReport rep = audit(sim, ids, &before);
      INFO(s, rep.messages.empty() ? std::string() : rep.messages.front());
      CHECK(rep.ok());
      CHECK_NOTHROW(metrics::check_buckets(m));
    }
    CHECK(moved);
  }

  TEST_CASE("communication variants end in identical states") {
    SimulationConfig c = small_config(16, 2, 0.0);
    c.workload = Workload::MigrationSlab;
    c.drift = {0.3, 0.1, 0.0};
    c.ranks = {2, 2, 1};
    std::uint64_t reference = 0;
    for (const char* comm : {"C0", "C1", "C2", "C3", "C4"}) {
      CAPTURE(comm);
      SimulationConfig cv = c;
      apply_config_value(cv, "comm", comm);
      Simulation sim(cv);
      std::int64_t remote = 0;
      for (int s = 0; s < 8; ++s) remote += sim.step().n_remote_migrants;
      CHECK(remote > 0);
      if (reference == 0) reference = sim.checksum();
      CHECK(sim.checksum() == reference);
    }
  }

  TEST_CASE("index supply permutation is a stable sort by cell") {
    SimulationConfig c = small_config(8, 0);
    const GridGeometry g = build_geometry(c);
    layout::ParticleTile tile = layout::init_tile(g, {0, 0, 0}, 1);
    std::vector<ParticleRecord> ps;
    for (int i = 0; i < 20; ++i) {
      ParticleRecord p;
      p.id = static_cast<std::uint64_t>(i);
      p.x = (7.5 - (i % 8)) * 1e-6;  // cells 7, 6, ..., 0, 7, ...
      p.y = 0.5e-6;
      p.z = 0.5e-6;
      ps.push_back(p);
    }
    layout::load_flat(tile, ps);
    std::vector<layout::Segment> seg;
    const auto perm = layout::index_sort(tile.current(), tile, g, seg);
    // Oracle: std::stable_sort of slot numbers by cell.
    std::vector<std::size_t> expect(ps.size());
    for (std::size_t i = 0; i < expect.size(); ++i) expect[i] = i;
    std::stable_sort(expect.begin(), expect.end(), [&](std::size_t a, std::size_t b) {
      return cell_of(ps[a].position(), g).flat < cell_of(ps[b].position(), g).flat;
    });
    CHECK(perm == expect);

    std::sort(ps.begin(), ps.end(), [&](const ParticleRecord& a, const ParticleRecord& b) {
      return cell_of(a.position(), g).flat < cell_of(b.position(), g).flat;
    });
    layout::ParticleTile sorted = layout::init_tile(g, {0, 0, 0}, 1);
    layout::load_flat(sorted, ps);
    std::vector<layout::Segment> seg2;
    const auto id = layout::index_sort(sorted.current(), sorted, g, seg2);
    for (std::size_t i = 0; i < id.size(); ++i) CHECK(id[i] == i);
  }

  TEST_CASE("explicit reorder leaves a valid ordered layout") {
    SimulationConfig c = small_config(16, 3, 0.2);
    apply_config_value(c, "variant", "G3/D0/C0");
    c.ranks = {2, 1, 1};
    Simulation sim(c);
    const auto ids = ids_of(sim.particles());
    for (int s = 0; s < 3; ++s) sim.step();
    for (int r = 0; r < sim.rank_count(); ++r)
      for (auto& tile : sim.rank(r).tiles) layout::explicit_reorder(tile, sim.geometry());
    const AuditReport rep = audit(sim, ids, nullptr);
    INFO((rep.messages.empty() ? std::string() : rep.messages.front()));
    CHECK(rep.ok());
    CHECK(sim.rank(0).tiles[0].current().ordered);
  }

  TEST_CASE("errors carry rank, step and phase context") {
    SimulationConfig c = small_config(16, 0);
    c.ranks = {2, 1, 1};
    ParticleRecord p;
    p.id = 99;
    p.x = 12.5e-6;
    p.y = 1e-6;
    p.z = 1e-6;
    p.ux = std::numeric_limits<double>::quiet_NaN();
    p.w = 1.0;
    Simulation sim(c, {p});
    try {
      sim.step();
      FAIL("expected a NumericError");
    } catch (const NumericError& e) {
      CHECK(e.particle_id() == 99);
      const std::string what = e.what();
      CHECK(what.find("rank 1") != std::string::npos);
      CHECK(what.find("step 0") != std::string::npos);
      CHECK(what.find("interpolation") != std::string::npos);
    }
  }

  TEST_CASE("header-only CSV when no steps are measured") {
    SimulationConfig c = small_config(8, 1);
    c.steps = 0;
    Simulation sim(c);
    const auto rep = sim.run();
    CHECK(rep.steps.empty());
    std::ostringstream out;
    metrics::write_csv(out, rep.steps, c.frequency_hz);
    CHECK(out.str() == metrics::csv_header() + "\n");
  }
}
