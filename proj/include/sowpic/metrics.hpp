#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "sowpic/core.hpp"

namespace sowpic::metrics {

inline constexpr double kFlopsInterp = 1636.0;
inline constexpr double kFlopsDeposit = 419.0;
inline constexpr double kFomAlpha = 0.1;
inline constexpr double kFomBeta = 0.9;

/// Phase timings of one step (virtual or wall seconds) and work counters.
/// After merging ranks, times are means over ranks and counts are sums.
struct StepMetrics {
  std::int64_t step = 0;
  double t_interpolation = 0.0;
  double t_deposit = 0.0;
  double t_redistribute = 0.0;
  double t_prep = 0.0;
  double t_sort = 0.0;
  double t_kernel = 0.0;
  double t_reduce = 0.0;
  double t_pack = 0.0;
  double t_issue = 0.0;
  double t_wait = 0.0;
  double t_post_process = 0.0;
  double t_wait_max = 0.0;
  double t_field = 0.0;
  std::int64_t n_particles = 0;
  std::int64_t n_local_migrants = 0;
  std::int64_t n_remote_migrants = 0;
  std::int64_t n_tail = 0;
  std::int64_t layout_work = 0;
  double flops_interp = 0.0;
  double flops_deposit = 0.0;

  double t_particle() const { return t_interpolation + t_deposit + t_redistribute; }
  bool operator==(const StepMetrics&) const = default;
};

/// Means of the timing fields, sums of the counters, max of t_wait.
StepMetrics merge_ranks(std::span<const StepMetrics> per_rank);

/// Throws MetricError when sub-buckets do not add up to their parents.
void check_buckets(const StepMetrics& m, double rel_eps = 1e-9);

struct Throughput {
  double pps = 0.0;
  double cpp = 0.0;
};

Throughput pps_cpp(double n_particles, double t_steps, double frequency_hz = 1.3e9);
double overlap_ratio(double base_issue, double base_wait, double over_issue, double over_wait);
/// Percent of the theoretical peak reached with the standardized flop counts.
double peak_efficiency(double n_particles, double t_steps, double p_theoretical,
                       double flops_interp = kFlopsInterp, double flops_deposit = kFlopsDeposit);
double fom_node(double n_cells, double n_particles, double t_steps, double n_nodes, double alpha = kFomAlpha,
                double beta = kFomBeta);

// CSV ---------------------------------------------------------------------------

std::string csv_header();
std::string csv_row(const StepMetrics& m, double frequency_hz);
/// One row per step, then "mean" and "max" summary rows (omitted when empty).
void write_csv(std::ostream& out, std::span<const StepMetrics> steps, double frequency_hz);
/// Parses the per-step rows of a CSV written by write_csv.
std::vector<StepMetrics> parse_csv(const std::string& text);

// Conservation --------------------------------------------------------------------

struct Diagnostics {
  double charge = 0.0;
  Vec3 momentum{};
  double kinetic = 0.0;
  double field = 0.0;
  std::int64_t count = 0;

  double energy() const { return kinetic + field; }
};

Diagnostics particle_diagnostics(std::span<const ParticleRecord> particles, double q, double m);
/// Electromagnetic energy over interior nodes.
double field_energy(const FieldSet& f, const GridGeometry& g);

struct ConservationReport {
  std::vector<Diagnostics> history;
  std::vector<double> charge_error;
  std::vector<double> energy_error;
  std::vector<double> momentum_error;  // along x, normalized by step-0 total |p| scale
  std::vector<std::int64_t> count_change;

  double max_energy_error() const;
  std::string to_text() const;
};

ConservationReport conservation_report(std::span<const Diagnostics> history);

struct PhaseSpaceError {
  double mse = 0.0;
  double mae = 0.0;
};

/// Pairs particles by id and compares one momentum component (0, 1, 2) in
/// units of m c. Throws ComparisonError when the id sets differ.
PhaseSpaceError phase_space_error(std::span<const ParticleRecord> reference, std::span<const ParticleRecord> test,
                                  int component = 0);

// Workloads -----------------------------------------------------------------------

/// ppc particles in every cell with jittered positions and Gaussian momenta.
/// Each cell draws from its own seeded stream, so the result does not depend
/// on the decomposition. Ids are dense in cell order.
std::vector<ParticleRecord> init_uniform_plasma(const SimulationConfig& config);
/// Same sampling restricted to the central third of the domain along x,
/// with the configured bulk drift added to every momentum.
std::vector<ParticleRecord> init_migration_slab(const SimulationConfig& config);
std::vector<ParticleRecord> init_workload(const SimulationConfig& config);

}  // namespace sowpic::metrics
