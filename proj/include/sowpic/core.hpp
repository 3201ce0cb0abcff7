#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "sowpic/errors.hpp"

namespace sowpic {

using Vec3 = std::array<double, 3>;
using Int3 = std::array<int, 3>;

namespace constants {
inline constexpr double c = 299792458.0;
inline constexpr double eps0 = 8.8541878128e-12;
inline constexpr double mu0 = 1.25663706212e-6;
inline constexpr double electron_charge = -1.602176634e-19;
inline constexpr double electron_mass = 9.1093837015e-31;
}  // namespace constants

/// Row-major flattening with x fastest.
inline constexpr std::size_t flatten(int i, int j, int k, const Int3& n) {
  return static_cast<std::size_t>(i) +
         static_cast<std::size_t>(n[0]) *
             (static_cast<std::size_t>(j) + static_cast<std::size_t>(n[1]) * static_cast<std::size_t>(k));
}

inline constexpr std::int64_t product(const Int3& n) {
  return static_cast<std::int64_t>(n[0]) * n[1] * n[2];
}

// ---------------------------------------------------------------------------
// Variant selection

enum class InterpSupply {
  UnsortedScalar,          // G0
  IndexSortedScalar,       // G2
  ExplicitReorderScalar,   // G3
  SowScalar,               // G4
  IndexSortedBatched,      // G5
  ExplicitReorderBatched,  // G6
  SowBatched,              // G7
};

enum class DepositMode {
  ScalarAtomic,        // D0
  BatchedIndex,        // D1
  BatchedSowTailBin,   // D2
  BatchedSowTailScalar // D3
};

enum class CommMode { Bsp, TwoSided, OneSided };
enum class SyncPoint { PostDeposit, PostFieldSolve };

struct CommVariant {
  CommMode mode = CommMode::OneSided;
  SyncPoint sync_point = SyncPoint::PostDeposit;

  bool operator==(const CommVariant&) const = default;
};

struct VariantMatrix {
  InterpSupply interp_supply = InterpSupply::SowBatched;
  DepositMode deposit_mode = DepositMode::BatchedSowTailScalar;
  CommVariant comm{};

  bool operator==(const VariantMatrix&) const = default;
};

bool is_sow(InterpSupply s);
bool is_batched(InterpSupply s);
bool is_index_sorted(InterpSupply s);  // G2, G3, G5, G6
bool is_explicit_reorder(InterpSupply s);

/// Throws ConfigError when the deposit mode cannot consume the supply.
void validate_variant(const VariantMatrix& v);

std::string to_string(InterpSupply s);  // "G0" ...
std::string to_string(DepositMode d);   // "D0" ...
std::string comm_label(const CommVariant& c);  // "C0" ...
std::string to_string(const VariantMatrix& v);  // "G7/D3/C2"

InterpSupply parse_interp(const std::string& label);
DepositMode parse_deposit(const std::string& label);
CommVariant parse_comm(const std::string& label);

// ---------------------------------------------------------------------------
// Geometry

struct GridGeometry {
  Int3 n_cell{8, 8, 8};
  Vec3 prob_lo{0.0, 0.0, 0.0};
  Vec3 prob_hi{1.0, 1.0, 1.0};
  Vec3 dx{0.125, 0.125, 0.125};
  std::array<bool, 3> periodic{true, true, true};
  int guard = 3;
  Int3 tile_shape{8, 8, 8};

  double length(int a) const { return prob_hi[a] - prob_lo[a]; }
  double cell_volume() const { return dx[0] * dx[1] * dx[2]; }
  Int3 tiles_per_axis() const {
    return {n_cell[0] / tile_shape[0], n_cell[1] / tile_shape[1], n_cell[2] / tile_shape[2]};
  }
  std::int64_t total_cells() const { return product(n_cell); }
  int cells_per_tile() const { return tile_shape[0] * tile_shape[1] * tile_shape[2]; }
};

struct CellId {
  Int3 idx{};      // global cell indices
  int flat = 0;    // row-major index within the owning tile

  bool operator==(const CellId&) const = default;
};

/// Minimum guard depth so that a particle one cell outside the owned box can
/// still deposit with its full stencil.
int required_guard(int order);

/// Position in cell units along one axis: (x - lo) / dx.
inline double cell_coordinate(double x, int axis, const GridGeometry& g) {
  return (x - g.prob_lo[axis]) / g.dx[axis];
}

/// Wraps a coordinate into [lo, hi) on a periodic axis.
double wrap_coordinate(double x, int axis, const GridGeometry& g);
Vec3 wrap_position(const Vec3& x, const GridGeometry& g);

/// Out-of-line path of cell_of for non-finite or out-of-range coordinates.
CellId cell_of_slow(const Vec3& position, const GridGeometry& geom, std::uint64_t particle_id);

inline CellId cell_of(const Vec3& position, const GridGeometry& geom, std::uint64_t particle_id = 0) {
  CellId out;
  for (int a = 0; a < 3; ++a) {
    const double s = cell_coordinate(position[a], a, geom);
    // NaN fails both comparisons and falls through to the checked path.
    if (!(s >= 0.0 && s < geom.n_cell[a])) return cell_of_slow(position, geom, particle_id);
    out.idx[a] = static_cast<int>(s);
  }
  const Int3& ts = geom.tile_shape;
  out.flat = (out.idx[0] % ts[0]) + ts[0] * ((out.idx[1] % ts[1]) + ts[1] * (out.idx[2] % ts[2]));
  return out;
}

/// Global cell index triple -> index of the tile containing it.
inline Int3 tile_of_cell(const Int3& cell, const GridGeometry& g) {
  return {cell[0] / g.tile_shape[0], cell[1] / g.tile_shape[1], cell[2] / g.tile_shape[2]};
}

// ---------------------------------------------------------------------------
// Fields

/// One scalar component on nodes, including guard layers on every side.
class NodeArray {
 public:
  NodeArray() = default;
  NodeArray(const Int3& interior, int guard);

  const Int3& interior() const { return n_; }
  int guard() const { return g_; }
  const Int3& extent() const { return ext_; }

  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i + g_) +
           static_cast<std::size_t>(ext_[0]) *
               (static_cast<std::size_t>(j + g_) + static_cast<std::size_t>(ext_[1]) * static_cast<std::size_t>(k + g_));
  }
  double& operator()(int i, int j, int k) { return v_[index(i, j, k)]; }
  double operator()(int i, int j, int k) const { return v_[index(i, j, k)]; }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }
  std::size_t size() const { return v_.size(); }
  std::size_t stride(int axis) const {
    return axis == 0 ? 1 : axis == 1 ? static_cast<std::size_t>(ext_[0])
                                     : static_cast<std::size_t>(ext_[0]) * ext_[1];
  }

  bool in_bounds(int i, int j, int k) const {
    return i >= -g_ && j >= -g_ && k >= -g_ && i < n_[0] + g_ && j < n_[1] + g_ && k < n_[2] + g_;
  }

  void fill(double value);
  void zero_guards();

 private:
  Int3 n_{};
  int g_ = 0;
  Int3 ext_{};
  std::vector<double> v_;
};

enum class Component : int { Ex = 0, Ey, Ez, Bx, By, Bz, Jx, Jy, Jz };

struct FieldSet {
  NodeArray ex, ey, ez, bx, by, bz, jx, jy, jz;

  NodeArray& operator[](Component c);
  const NodeArray& operator[](Component c) const;
  NodeArray& e(int a) { return (*this)[static_cast<Component>(a)]; }
  NodeArray& b(int a) { return (*this)[static_cast<Component>(3 + a)]; }
  NodeArray& j(int a) { return (*this)[static_cast<Component>(6 + a)]; }
  const NodeArray& e(int a) const { return (*this)[static_cast<Component>(a)]; }
  const NodeArray& b(int a) const { return (*this)[static_cast<Component>(3 + a)]; }
  const NodeArray& j(int a) const { return (*this)[static_cast<Component>(6 + a)]; }

  const Int3& interior() const { return ex.interior(); }
  int guard() const { return ex.guard(); }
};

FieldSet allocate_fields(const Int3& interior, int guard);
FieldSet allocate_fields(const GridGeometry& geom);

// ---------------------------------------------------------------------------
// Particles

/// Fixed 64-byte macroparticle record; momenta are u = gamma v / c.
struct ParticleRecord {
  std::uint64_t id = 0;
  double x = 0, y = 0, z = 0;
  double ux = 0, uy = 0, uz = 0;
  double w = 0;

  Vec3 position() const { return {x, y, z}; }
  Vec3 momentum() const { return {ux, uy, uz}; }
  bool operator==(const ParticleRecord&) const = default;
};
static_assert(sizeof(ParticleRecord) == 64);

// ---------------------------------------------------------------------------
// Configuration

enum class Workload { UniformPlasma, MigrationSlab };

/// Virtual-time cost model. Latencies in seconds, bandwidth in bytes/second,
/// compute costs in seconds per unit of work.
struct CostModel {
  double latency_base = 2.0e-6;
  double bandwidth = 1.0e10;
  double progression_penalty = 0.2;
  double contention = 1.5;

  double vt_prep = 2.0e-9;            // per particle, shape-factor preparation
  double vt_kernel_scalar = 2.0e-8;   // per particle per scalar kernel call
  double vt_kernel_batched = 5.0e-9;  // per particle per batched kernel call
  double vt_sort = 3.0e-9;            // per entry touched by layout maintenance
  double vt_reduce = 1.0e-9;          // per particle write-back / scatter
  double vt_interp_fixed = 0.0;       // per rank per step
  double vt_deposit_fixed = 0.0;      // per rank per step
  double vt_scan = 2.0e-9;            // per particle, standalone scan
  double vt_pack = 5.0e-9;            // per record packed
  double vt_unpack = 5.0e-9;          // per record unpacked
  double vt_issue = 0.0;              // per one-sided batch
  double vt_issue_message = 1.0e-6;   // per two-sided message
  double vt_field = 1.0e-8;           // per cell per field update

  double latency(std::size_t bytes) const {
    return latency_base + (bandwidth > 0.0 ? static_cast<double>(bytes) / bandwidth : 0.0);
  }
};

struct SimulationConfig {
  Int3 n_cell{32, 32, 32};
  Vec3 prob_lo{-2.5e-6, -5.0e-6, -5.0e-6};
  Vec3 prob_hi{2.5e-6, 5.0e-6, 5.0e-6};
  std::array<bool, 3> periodic{true, true, true};
  int guard = 3;
  Int3 tile_shape{8, 8, 8};
  int order = 3;

  int ppc = 8;
  double u_th = 0.01;
  Vec3 drift{0.0, 0.0, 0.0};
  double q = constants::electron_charge;
  double m = constants::electron_mass;
  double density = 1.0e25;

  double dt_safety = 0.7;
  int steps = 100;
  int warmup = 5;
  std::uint64_t seed = 1;
  Int3 ranks{1, 1, 1};
  VariantMatrix variant{};
  bool deterministic = true;
  bool virtual_time = false;

  Workload workload = Workload::UniformPlasma;
  double disorder_fraction = 0.25;
  CostModel cost{};
  double frequency_hz = 1.3e9;
  double p_theoretical = 1.0e11;
};

/// Validates the configuration and derives the geometry.
GridGeometry build_geometry(const SimulationConfig& config);

/// Parses `key = value` lines; '#' starts a comment. Unknown keys are errors.
SimulationConfig parse_config(const std::string& text);
SimulationConfig load_config(const std::string& path);
/// Applies a single key/value pair to a config (shared by the file parser and CLI).
void apply_config_value(SimulationConfig& config, const std::string& key, const std::string& value);
std::string format_config(const SimulationConfig& config);

}  // namespace sowpic
