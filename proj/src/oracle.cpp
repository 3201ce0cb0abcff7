#include "sowpic/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "sowpic/kernels.hpp"
#include "sowpic/solver.hpp"

namespace sowpic::oracle {

namespace {

// Centred B-spline S(t) of the given order, written piecewise.
double spline(int order, double t) {
  const double a = std::abs(t);
  switch (order) {
    case 1:
      return a < 1.0 ? 1.0 - a : 0.0;
    case 2:
      if (a < 0.5) return 0.75 - a * a;
      return a < 1.5 ? 0.5 * (1.5 - a) * (1.5 - a) : 0.0;
    case 3:
      if (a < 1.0) return 2.0 / 3.0 - a * a + 0.5 * a * a * a;
      return a < 2.0 ? (2.0 - a) * (2.0 - a) * (2.0 - a) / 6.0 : 0.0;
    default:
      throw ConfigError("unsupported shape order " + std::to_string(order));
  }
}

constexpr int kReach = 2;  // nodes examined on each side of the containing cell

// Weights of the 2*kReach+1 candidate nodes along one axis.
struct Axis {
  int first = 0;
  double w[2 * kReach + 1]{};
};

Axis axis(double x, int a, const GridGeometry& g, int order) {
  const double s = (x - g.prob_lo[a]) / g.dx[a];
  Axis out;
  out.first = static_cast<int>(std::floor(s)) - kReach;
  for (int i = 0; i <= 2 * kReach; ++i) out.w[i] = spline(order, s - (out.first + i));
  return out;
}

std::string triple(const Int3& v) {
  return "(" + std::to_string(v[0]) + "," + std::to_string(v[1]) + "," + std::to_string(v[2]) + ")";
}

}  // namespace

OracleState make_state(const SimulationConfig& config, std::vector<ParticleRecord> particles) {
  OracleState s;
  s.config = config;
  s.geom = build_geometry(config);
  std::sort(particles.begin(), particles.end(), [](const ParticleRecord& a, const ParticleRecord& b) { return a.id < b.id; });
  s.particles = std::move(particles);
  s.fields = allocate_fields(s.geom);
  s.dt = solver::compute_dt(s.geom, config.dt_safety);
  return s;
}

void set_fields(OracleState& s, const FieldSet& global) {
  const Int3 n = s.geom.n_cell;
  if (global.interior() != n) throw ConfigError("oracle fields must cover the whole grid");
  for (int c = 0; c < 9; ++c) {
    const auto comp = static_cast<Component>(c);
    for (int k = 0; k < n[2]; ++k)
      for (int j = 0; j < n[1]; ++j)
        for (int i = 0; i < n[0]; ++i) s.fields[comp](i, j, k) = global[comp](i, j, k);
    solver::fill_periodic_guards(s.fields[comp]);
  }
}

FieldSample reference_gather(const Vec3& x, const FieldSet& f, const GridGeometry& g, int order) {
  const Axis ax = axis(x[0], 0, g, order);
  const Axis ay = axis(x[1], 1, g, order);
  const Axis az = axis(x[2], 2, g, order);
  FieldSample out;
  for (int k = 0; k <= 2 * kReach; ++k) {
    for (int j = 0; j <= 2 * kReach; ++j) {
      for (int i = 0; i <= 2 * kReach; ++i) {
        const double w = ax.w[i] * ay.w[j] * az.w[k];
        if (w == 0.0) continue;
        const int ni = ax.first + i, nj = ay.first + j, nk = az.first + k;
        if (!f.ex.in_bounds(ni, nj, nk)) throw OwnershipError("oracle gather outside the guard layers");
        for (int a = 0; a < 3; ++a) {
          out.e[a] += w * f.e(a)(ni, nj, nk);
          out.b[a] += w * f.b(a)(ni, nj, nk);
        }
      }
    }
  }
  return out;
}

void reference_deposit(const ParticleRecord& p, double q, FieldSet& f, const GridGeometry& g, int order) {
  const double gamma = std::sqrt(1.0 + p.ux * p.ux + p.uy * p.uy + p.uz * p.uz);
  const double scale = q * p.w * constants::c / gamma / g.cell_volume();
  const Vec3 jv{scale * p.ux, scale * p.uy, scale * p.uz};
  const Axis ax = axis(p.x, 0, g, order);
  const Axis ay = axis(p.y, 1, g, order);
  const Axis az = axis(p.z, 2, g, order);
  for (int k = 0; k <= 2 * kReach; ++k) {
    for (int j = 0; j <= 2 * kReach; ++j) {
      for (int i = 0; i <= 2 * kReach; ++i) {
        const double w = ax.w[i] * ay.w[j] * az.w[k];
        if (w == 0.0) continue;
        const int ni = ax.first + i, nj = ay.first + j, nk = az.first + k;
        if (!f.jx.in_bounds(ni, nj, nk)) throw OwnershipError("oracle deposit outside the guard layers");
        for (int a = 0; a < 3; ++a) f.j(a)(ni, nj, nk) += jv[a] * w;
      }
    }
  }
}

void reference_step(OracleState& s) {
  const SimulationConfig& c = s.config;
  for (int a = 0; a < 3; ++a) s.fields.j(a).fill(0.0);
  for (auto& p : s.particles) {
    const FieldSample f = reference_gather(p.position(), s.fields, s.geom, c.order);
    const auto r = kernels::boris_push(p.position(), p.momentum(), f.e, f.b, c.q, c.m, s.dt, &s.geom, p.id);
    p.x = r.x_new[0];
    p.y = r.x_new[1];
    p.z = r.x_new[2];
    p.ux = r.u_new[0];
    p.uy = r.u_new[1];
    p.uz = r.u_new[2];
    reference_deposit(p, c.q, s.fields, s.geom, c.order);
  }
  for (int a = 0; a < 3; ++a) solver::fold_periodic_guards(s.fields.j(a));

  solver::advance_B_half(s.fields, s.geom.dx, s.dt);
  for (int a = 0; a < 3; ++a) solver::fill_periodic_guards(s.fields.b(a));
  solver::advance_E_full(s.fields, s.geom.dx, s.dt);
  for (int a = 0; a < 3; ++a) solver::fill_periodic_guards(s.fields.e(a));
  solver::advance_B_half(s.fields, s.geom.dx, s.dt);
  for (int a = 0; a < 3; ++a) solver::fill_periodic_guards(s.fields.b(a));
  ++s.step;
}

// ---------------------------------------------------------------------------

std::string CompareReport::to_text() const {
  std::ostringstream out;
  out.precision(3);
  out << std::scientific << "particles: max error " << particle_max_error << " (id " << worst_particle << ")\n";
  static const char* names[9] = {"Ex", "Ey", "Ez", "Bx", "By", "Bz", "Jx", "Jy", "Jz"};
  out << "fields:";
  for (int c = 0; c < 9; ++c) out << ' ' << names[c] << '=' << field_error[static_cast<std::size_t>(c)];
  out << "\ntolerance " << tolerance << ": " << (pass ? "pass" : "FAIL") << '\n';
  return out.str();
}

CompareReport compare_states(const std::vector<ParticleRecord>& test, const FieldSet& test_fields,
                             const std::vector<ParticleRecord>& reference, const FieldSet& reference_fields,
                             const GridGeometry& g, double tolerance) {
  CompareReport rep;
  rep.tolerance = tolerance;
  if (test.size() != reference.size()) {
    throw ComparisonError("particle counts differ: " + std::to_string(test.size()) + " vs " +
                          std::to_string(reference.size()));
  }
  auto by_id = [](std::vector<ParticleRecord> v) {
    std::sort(v.begin(), v.end(), [](const ParticleRecord& a, const ParticleRecord& b) { return a.id < b.id; });
    return v;
  };
  const auto a = by_id(test);
  const auto b = by_id(reference);

  double u_scale = 0.0;
  for (const auto& p : b) u_scale = std::max({u_scale, std::abs(p.ux), std::abs(p.uy), std::abs(p.uz)});
  if (u_scale == 0.0) u_scale = 1.0;

  for (std::size_t i = 0; i < a.size(); ++i) {
    const ParticleRecord& p = a[i];
    const ParticleRecord& r = b[i];
    if (p.id != r.id) throw ComparisonError("particle id sets differ at id " + std::to_string(r.id));
    double e = 0.0;
    const double pos[3] = {p.x - r.x, p.y - r.y, p.z - r.z};
    for (int ax = 0; ax < 3; ++ax) {
      // Differences across the periodic seam are measured the short way.
      const double L = g.length(ax);
      double d = std::fmod(std::abs(pos[ax]), L);
      d = std::min(d, L - d);
      e = std::max(e, d / L);
    }
    e = std::max({e, std::abs(p.ux - r.ux) / u_scale, std::abs(p.uy - r.uy) / u_scale, std::abs(p.uz - r.uz) / u_scale});
    if (r.w != 0.0) e = std::max(e, std::abs(p.w - r.w) / std::abs(r.w));
    if (e > rep.particle_max_error) {
      rep.particle_max_error = e;
      rep.worst_particle = p.id;
    }
  }

  if (test_fields.interior() != reference_fields.interior()) {
    throw ComparisonError("field grids differ: " + triple(test_fields.interior()) + " vs " +
                          triple(reference_fields.interior()));
  }
  const Int3 n = reference_fields.interior();
  for (int c = 0; c < 9; ++c) {
    const auto comp = static_cast<Component>(c);
    double scale = 0.0, diff = 0.0;
    for (int k = 0; k < n[2]; ++k)
      for (int j = 0; j < n[1]; ++j)
        for (int i = 0; i < n[0]; ++i) {
          const double r = reference_fields[comp](i, j, k);
          scale = std::max(scale, std::abs(r));
          diff = std::max(diff, std::abs(test_fields[comp](i, j, k) - r));
        }
    const double e = scale > 0.0 ? diff / scale : (diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
    rep.field_error[static_cast<std::size_t>(c)] = e;
    rep.field_max_error = std::max(rep.field_max_error, e);
  }
  rep.pass = rep.particle_max_error <= tolerance && rep.field_max_error <= tolerance;
  return rep;
}

}  // namespace sowpic::oracle
