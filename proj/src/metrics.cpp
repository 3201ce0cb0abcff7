#include "sowpic/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <sstream>

namespace sowpic::metrics {

namespace {

// Field table shared by the CSV writer and parser.
struct Column {
  const char* name;
  double StepMetrics::* real = nullptr;
  std::int64_t StepMetrics::* count = nullptr;
};

const std::vector<Column>& columns() {
  static const std::vector<Column> cols = {
      {"step", nullptr, &StepMetrics::step},
      {"t_interpolation", &StepMetrics::t_interpolation},
      {"t_deposit", &StepMetrics::t_deposit},
      {"t_redistribute", &StepMetrics::t_redistribute},
      {"t_prep", &StepMetrics::t_prep},
      {"t_sort", &StepMetrics::t_sort},
      {"t_kernel", &StepMetrics::t_kernel},
      {"t_reduce", &StepMetrics::t_reduce},
      {"t_pack", &StepMetrics::t_pack},
      {"t_issue", &StepMetrics::t_issue},
      {"t_wait", &StepMetrics::t_wait},
      {"t_post_process", &StepMetrics::t_post_process},
      {"t_wait_max", &StepMetrics::t_wait_max},
      {"t_field", &StepMetrics::t_field},
      {"n_particles", nullptr, &StepMetrics::n_particles},
      {"n_local_migrants", nullptr, &StepMetrics::n_local_migrants},
      {"n_remote_migrants", nullptr, &StepMetrics::n_remote_migrants},
      {"n_tail", nullptr, &StepMetrics::n_tail},
      {"layout_work", nullptr, &StepMetrics::layout_work},
      {"flops_interp", &StepMetrics::flops_interp},
      {"flops_deposit", &StepMetrics::flops_deposit},
  };
  return cols;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

bool near(double a, double b, double eps) { return std::abs(a - b) <= eps * std::max({1e-300, std::abs(a), std::abs(b)}); }

}  // namespace

StepMetrics merge_ranks(std::span<const StepMetrics> per_rank) {
  StepMetrics out;
  if (per_rank.empty()) return out;
  const double n = static_cast<double>(per_rank.size());
  out.step = per_rank.front().step;
  for (const auto& c : columns()) {
    if (c.real) {
      double s = 0.0;
      for (const auto& m : per_rank) s += m.*c.real;
      out.*c.real = s / n;
    } else if (c.count && c.count != &StepMetrics::step) {
      std::int64_t s = 0;
      for (const auto& m : per_rank) s += m.*c.count;
      out.*c.count = s;
    }
  }
  // Flop counts are totals, not means.
  out.flops_interp = 0.0;
  out.flops_deposit = 0.0;
  out.t_wait_max = 0.0;
  for (const auto& m : per_rank) {
    out.flops_interp += m.flops_interp;
    out.flops_deposit += m.flops_deposit;
    out.t_wait_max = std::max(out.t_wait_max, m.t_wait);
  }
  return out;
}

void check_buckets(const StepMetrics& m, double eps) {
  const double phases = m.t_interpolation + m.t_deposit;
  const double subs = m.t_prep + m.t_sort + m.t_kernel + m.t_reduce;
  if (!near(phases, subs, eps) && std::abs(phases - subs) > 1e-15) {
    throw MetricError("compute sub-buckets sum to " + fmt(subs) + " but phases take " + fmt(phases));
  }
  const double comm = m.t_pack + m.t_issue + m.t_wait + m.t_post_process;
  if (!near(m.t_redistribute, comm, eps) && std::abs(m.t_redistribute - comm) > 1e-15) {
    throw MetricError("redistribution sub-buckets sum to " + fmt(comm) + " but the phase takes " +
                      fmt(m.t_redistribute));
  }
  for (const auto& c : columns()) {
    if (c.real && m.*c.real < 0.0) throw MetricError(std::string("negative ") + c.name);
    if (c.count && m.*c.count < 0) throw MetricError(std::string("negative ") + c.name);
  }
}

Throughput pps_cpp(double n, double t, double freq) {
  if (!(t > 0.0)) throw MetricError("PPS needs a positive step time");
  const double pps = n / t;
  if (!(pps > 0.0)) throw MetricError("CPP needs a positive particle rate");
  return {pps, freq / pps};
}

double overlap_ratio(double base_issue, double base_wait, double over_issue, double over_wait) {
  const double base = base_issue + base_wait;
  if (!(base > 0.0)) throw MetricError("overlap ratio needs a positive baseline exposure");
  return 1.0 - (over_issue + over_wait) / base;
}

double peak_efficiency(double n, double t, double p, double fi, double fd) {
  if (!(t > 0.0) || !(p > 0.0)) throw MetricError("peak efficiency needs positive time and peak");
  return 100.0 * n * (fi + fd) / (t * p);
}

double fom_node(double cells, double particles, double t, double nodes, double alpha, double beta) {
  if (!(t > 0.0) || !(nodes > 0.0)) throw MetricError("FOM needs positive time and node count");
  return (alpha * cells + beta * particles) / (t * nodes);
}

// ---------------------------------------------------------------------------

std::string csv_header() {
  std::string h;
  for (const auto& c : columns()) h += std::string(h.empty() ? "" : ",") + c.name;
  return h + ",pps,cpp";
}

std::string csv_row(const StepMetrics& m, double freq) {
  std::string row;
  for (const auto& c : columns()) {
    row += row.empty() ? "" : ",";
    row += c.real ? fmt(m.*c.real) : std::to_string(m.*c.count);
  }
  const double t = m.t_particle();
  if (t > 0.0 && m.n_particles > 0) {
    const auto tp = pps_cpp(static_cast<double>(m.n_particles), t, freq);
    row += "," + fmt(tp.pps) + "," + fmt(tp.cpp);
  } else {
    row += ",0,0";
  }
  return row;
}

void write_csv(std::ostream& out, std::span<const StepMetrics> steps, double freq) {
  out << csv_header() << '\n';
  if (steps.empty()) return;
  for (const auto& m : steps) out << csv_row(m, freq) << '\n';

  StepMetrics mean, mx;
  const double n = static_cast<double>(steps.size());
  double pps_mean = 0, cpp_mean = 0, pps_max = 0, cpp_max = 0;
  for (const auto& m : steps) {
    for (const auto& c : columns()) {
      if (c.real) {
        mean.*c.real += m.*c.real / n;
        mx.*c.real = std::max(mx.*c.real, m.*c.real);
      } else {
        mean.*c.count += m.*c.count;
        mx.*c.count = std::max(mx.*c.count, m.*c.count);
      }
    }
    if (m.t_particle() > 0.0 && m.n_particles > 0) {
      const auto tp = pps_cpp(static_cast<double>(m.n_particles), m.t_particle(), freq);
      pps_mean += tp.pps / n;
      cpp_mean += tp.cpp / n;
      pps_max = std::max(pps_max, tp.pps);
      cpp_max = std::max(cpp_max, tp.cpp);
    }
  }
  auto summary = [&](const char* label, const StepMetrics& m, bool is_mean, double pps, double cpp) {
    std::string row = label;
    for (std::size_t i = 1; i < columns().size(); ++i) {
      const auto& c = columns()[i];
      row += ",";
      if (c.real) {
        row += fmt(m.*c.real);
      } else {
        row += is_mean ? fmt(static_cast<double>(m.*c.count) / n) : std::to_string(m.*c.count);
      }
    }
    out << row << "," << fmt(pps) << "," << fmt(cpp) << '\n';
  };
  summary("mean", mean, true, pps_mean, cpp_mean);
  summary("max", mx, false, pps_max, cpp_max);
}

std::vector<StepMetrics> parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != csv_header()) throw MetricError("CSV header mismatch");
  std::vector<StepMetrics> out;
  while (std::getline(in, line)) {
    if (line.empty() || line.rfind("mean", 0) == 0 || line.rfind("max", 0) == 0) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != columns().size() + 2) throw MetricError("CSV row has " + std::to_string(cells.size()) + " cells");
    StepMetrics m;
    for (std::size_t i = 0; i < columns().size(); ++i) {
      const auto& c = columns()[i];
      if (c.real) {
        m.*c.real = std::stod(cells[i]);
      } else {
        m.*c.count = std::stoll(cells[i]);
      }
    }
    out.push_back(m);
  }
  return out;
}

// ---------------------------------------------------------------------------

Diagnostics particle_diagnostics(std::span<const ParticleRecord> ps, double q, double m) {
  Diagnostics d;
  const double mc = m * constants::c;
  const double mc2 = mc * constants::c;
  for (const auto& p : ps) {
    d.charge += q * p.w;
    d.momentum[0] += p.w * mc * p.ux;
    d.momentum[1] += p.w * mc * p.uy;
    d.momentum[2] += p.w * mc * p.uz;
    const double u2 = p.ux * p.ux + p.uy * p.uy + p.uz * p.uz;
    // gamma - 1 without cancellation for small u.
    d.kinetic += p.w * mc2 * u2 / (std::sqrt(1.0 + u2) + 1.0);
  }
  d.count = static_cast<std::int64_t>(ps.size());
  return d;
}

double field_energy(const FieldSet& f, const GridGeometry& g) {
  const Int3 n = f.interior();
  double e2 = 0.0, b2 = 0.0;
  for (int k = 0; k < n[2]; ++k)
    for (int j = 0; j < n[1]; ++j)
      for (int i = 0; i < n[0]; ++i)
        for (int a = 0; a < 3; ++a) {
          e2 += f.e(a)(i, j, k) * f.e(a)(i, j, k);
          b2 += f.b(a)(i, j, k) * f.b(a)(i, j, k);
        }
  return 0.5 * (constants::eps0 * e2 + b2 / constants::mu0) * g.cell_volume();
}

double ConservationReport::max_energy_error() const {
  double m = 0.0;
  for (double e : energy_error) m = std::max(m, std::abs(e));
  return m;
}

std::string ConservationReport::to_text() const {
  std::ostringstream out;
  out << "# step charge_error energy_error momentum_x_error count_change\n";
  for (std::size_t i = 0; i < history.size(); ++i) {
    out << i << ' ' << fmt(charge_error[i]) << ' ' << fmt(energy_error[i]) << ' ' << fmt(momentum_error[i]) << ' '
        << count_change[i] << '\n';
  }
  return out.str();
}

ConservationReport conservation_report(std::span<const Diagnostics> history) {
  ConservationReport r;
  r.history.assign(history.begin(), history.end());
  if (history.empty()) return r;
  const Diagnostics& d0 = history.front();
  auto rel = [](double v, double ref) { return ref != 0.0 ? (v - ref) / std::abs(ref) : v - ref; };
  // Momentum error is measured against a thermal scale because the total
  // momentum of a drift-free plasma starts near zero.
  double pscale = std::abs(d0.momentum[0]);
  if (d0.kinetic > 0.0 && d0.count > 0) pscale = std::max(pscale, std::sqrt(2.0 * d0.kinetic));
  for (const auto& d : history) {
    r.charge_error.push_back(rel(d.charge, d0.charge));
    r.energy_error.push_back(rel(d.energy(), d0.energy()));
    r.momentum_error.push_back(pscale > 0.0 ? (d.momentum[0] - d0.momentum[0]) / pscale : 0.0);
    r.count_change.push_back(d.count - d0.count);
  }
  return r;
}

PhaseSpaceError phase_space_error(std::span<const ParticleRecord> ref, std::span<const ParticleRecord> test,
                                  int component) {
  if (ref.size() != test.size()) throw ComparisonError("particle counts differ");
  std::map<std::uint64_t, const ParticleRecord*> by_id;
  for (const auto& p : ref) by_id[p.id] = &p;
  if (by_id.size() != ref.size()) throw ComparisonError("duplicate ids in the reference");
  PhaseSpaceError e;
  if (ref.empty()) return e;
  std::map<std::uint64_t, int> seen;
  for (const auto& p : test) {
    if (++seen[p.id] > 1) throw ComparisonError("duplicate id " + std::to_string(p.id) + " in the test states");
  }
  for (const auto& p : test) {
    const auto it = by_id.find(p.id);
    if (it == by_id.end()) throw ComparisonError("id " + std::to_string(p.id) + " missing from the reference");
    const double d = p.momentum()[component] - it->second->momentum()[component];
    e.mse += d * d;
    e.mae += std::abs(d);
  }
  e.mse /= static_cast<double>(ref.size());
  e.mae /= static_cast<double>(ref.size());
  return e;
}

}  // namespace sowpic::metrics
