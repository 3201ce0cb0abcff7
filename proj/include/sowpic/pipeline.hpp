#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sowpic/core.hpp"
#include "sowpic/fabric.hpp"
#include "sowpic/kernels.hpp"
#include "sowpic/layout.hpp"
#include "sowpic/metrics.hpp"
#include "sowpic/redistribute.hpp"
#include "sowpic/solver.hpp"

namespace sowpic::pipeline {

/// Scratch arrays reused by grouped deposition.
struct DepositScratch {
  layout::ParticleSoA soa;
  std::vector<std::size_t> order;
  std::vector<std::uint32_t> start;
  std::vector<std::uint32_t> keys;
};

struct RankState {
  int rank = 0;
  std::vector<layout::ParticleTile> tiles;  // in Decomposition::tiles_of_rank order
  FieldSet fields;
  kernels::LocalFrame frame;
  redist::RankExchange exchange;
  DepositScratch scratch;
  kernels::InterpBatch batch;
  std::vector<std::size_t> stream;  // slot stream of one cell
  metrics::StepMetrics last;  // this rank's metrics of the latest step
};

struct RunReport {
  std::vector<metrics::StepMetrics> steps;          // measured steps only
  std::vector<metrics::Diagnostics> diagnostics;    // step 0 then after each step, when recorded
  double t_steps = 0.0;                             // mean particle-phase time per measured step
  metrics::Throughput throughput{};
  std::uint64_t checksum = 0;
};

class Simulation {
 public:
  /// Builds the decomposition and loads the configured workload.
  explicit Simulation(const SimulationConfig& config);
  /// Same, with an explicit initial particle set.
  Simulation(const SimulationConfig& config, const std::vector<ParticleRecord>& initial);
  ~Simulation();
  Simulation(const Simulation&) = delete;
  Simulation& operator=(const Simulation&) = delete;

  /// Advances every rank by one step and returns the rank-merged metrics.
  metrics::StepMetrics step();

  /// Warm-up steps (discarded) followed by the measured steps. The callback,
  /// when given, runs after every step including warm-up.
  RunReport run(bool record_diagnostics = false, const std::function<void(const Simulation&)>& after_step = {});

  const SimulationConfig& config() const { return config_; }
  const GridGeometry& geometry() const { return geom_; }
  const layout::Decomposition& decomposition() const { return decomp_; }
  double dt() const { return dt_; }
  std::int64_t steps_taken() const { return step_; }
  int rank_count() const { return decomp_.rank_count(); }
  const RankState& rank(int r) const { return ranks_[static_cast<std::size_t>(r)]; }
  RankState& rank(int r) { return ranks_[static_cast<std::size_t>(r)]; }
  fabric::RankFabric& fabric() { return *fabric_; }

  /// All particles across ranks sorted by id.
  std::vector<ParticleRecord> particles() const;
  /// Interior nodes of every rank assembled into one global field set (no guards).
  FieldSet gather_fields() const;
  /// Replaces all fields (guards included, filled periodically) from global interior values.
  void set_fields(const FieldSet& global);

  /// When on, the push leaves positions unchanged and zeroes momenta.
  void set_freeze_motion(bool on) { freeze_ = on; }

  metrics::Diagnostics diagnostics() const;
  std::uint64_t checksum() const;

 private:
  struct Counters;
  void load(const std::vector<ParticleRecord>& initial);
  metrics::StepMetrics step_rank(int r, std::uint32_t step, std::string& phase);
  void phase1_sow(RankState& rs, layout::ParticleTile& tile, Counters& c, bool fused);
  void phase1_flat(RankState& rs, layout::ParticleTile& tile, Counters& c, bool fused);
  void phase2_tile(RankState& rs, layout::ParticleTile& tile, Counters& c);
  void push_lanes(RankState& rs, layout::LaneRecords& lanes, int n, bool batched,
                  std::array<CellId, kernels::kBatch>& cells, Counters& c) const;
  void grouped_deposit(RankState& rs, const layout::ParticleTile& tile, const layout::TileBuffer& buf,
                       std::size_t begin, std::size_t end, Counters& c) const;
  double field_step(RankState& rs, std::uint32_t step);

  SimulationConfig config_;
  GridGeometry geom_;
  layout::Decomposition decomp_;
  std::unique_ptr<fabric::RankFabric> fabric_;
  std::unique_ptr<solver::FieldExchanger> exchanger_;
  std::vector<RankState> ranks_;
  double dt_ = 0.0;
  std::int64_t step_ = 0;
  bool freeze_ = false;
};

// Layout audit ------------------------------------------------------------------

struct AuditReport {
  std::int64_t violations = 0;
  std::vector<std::string> messages;  // first few violations

  void fail(const std::string& m);
  bool ok() const { return violations == 0; }
};

/// Global cell of every particle, looked up by id.
class CellMap {
 public:
  CellMap() = default;
  /// `by_id` must be sorted by id.
  CellMap(const std::vector<ParticleRecord>& by_id, const GridGeometry& g);
  const Int3* find(std::uint64_t id) const;

 private:
  std::vector<std::uint64_t> ids_;
  std::vector<Int3> cells_;
  bool dense_ = true;  // ids_[i] == i
};

CellMap cell_map(const Simulation& sim);

/// Checks the container invariants on every tile of every rank: cursor
/// order, meta contiguity, cell correctness, ownership, empty inboxes and
/// flags, and the global id multiset against `expected_ids` (sorted). When
/// `before` holds the cells at the start of the step, also checks that the
/// tails hold exactly the particles that changed cell.
AuditReport audit(const Simulation& sim, const std::vector<std::uint64_t>& expected_ids, const CellMap* before);

}  // namespace sowpic::pipeline
