#include <cmath>
#include <random>

#include "sowpic/metrics.hpp"

namespace sowpic::metrics {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Samples every cell accepted by `keep` in global row-major order.
template <typename Keep>
std::vector<ParticleRecord> sample(const SimulationConfig& cfg, Keep keep, const Vec3& drift) {
  const GridGeometry g = build_geometry(cfg);
  std::vector<ParticleRecord> out;
  if (cfg.ppc <= 0) return out;
  const double w = cfg.density * g.cell_volume() / cfg.ppc;
  std::uint64_t next_id = 0;
  for (int k = 0; k < g.n_cell[2]; ++k)
    for (int j = 0; j < g.n_cell[1]; ++j)
      for (int i = 0; i < g.n_cell[0]; ++i) {
        if (!keep(i)) continue;
        const auto flat = static_cast<std::uint64_t>(flatten(i, j, k, g.n_cell));
        std::mt19937_64 rng(splitmix64(cfg.seed ^ splitmix64(flat)));
        std::uniform_real_distribution<double> jitter(0.0, 1.0);
        std::normal_distribution<double> thermal(0.0, 1.0);
        for (int p = 0; p < cfg.ppc; ++p) {
          ParticleRecord r;
          r.id = next_id++;
          const Int3 c{i, j, k};
          double* pos[3] = {&r.x, &r.y, &r.z};
          for (int a = 0; a < 3; ++a) {
            *pos[a] = g.prob_lo[a] + (c[a] + jitter(rng)) * g.dx[a];
            // Keep the sample inside its cell despite rounding.
            if (std::floor(cell_coordinate(*pos[a], a, g)) != c[a]) *pos[a] = g.prob_lo[a] + (c[a] + 0.5) * g.dx[a];
          }
          r.ux = cfg.u_th * thermal(rng) + drift[0];
          r.uy = cfg.u_th * thermal(rng) + drift[1];
          r.uz = cfg.u_th * thermal(rng) + drift[2];
          r.w = w;
          out.push_back(r);
        }
      }
  return out;
}

}  // namespace

std::vector<ParticleRecord> init_uniform_plasma(const SimulationConfig& cfg) {
  return sample(cfg, [](int) { return true; }, cfg.drift);
}

std::vector<ParticleRecord> init_migration_slab(const SimulationConfig& cfg) {
  const int n = cfg.n_cell[0];
  const int lo = n / 3;
  const int hi = (2 * n) / 3;
  return sample(cfg, [&](int i) { return i >= lo && i < hi; }, cfg.drift);
}

std::vector<ParticleRecord> init_workload(const SimulationConfig& cfg) {
  return cfg.workload == Workload::MigrationSlab ? init_migration_slab(cfg) : init_uniform_plasma(cfg);
}

}  // namespace sowpic::metrics
