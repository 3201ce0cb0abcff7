#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "sowpic/core.hpp"

namespace sowpic::oracle {

/// Rank-free reference state: a flat particle list kept in id order and one
/// field set covering the whole periodic grid.
struct OracleState {
  SimulationConfig config;
  GridGeometry geom;
  std::vector<ParticleRecord> particles;
  FieldSet fields;
  double dt = 0.0;
  std::int64_t step = 0;
};

OracleState make_state(const SimulationConfig& config, std::vector<ParticleRecord> particles);
/// Installs global interior field values and fills the periodic guards.
void set_fields(OracleState& s, const FieldSet& global);

struct FieldSample {
  Vec3 e{};
  Vec3 b{};
};

/// Direct stencil sum of the six field components at a global position.
FieldSample reference_gather(const Vec3& position, const FieldSet& fields, const GridGeometry& geom, int order);
/// Adds one particle's current to every stencil node it touches.
void reference_deposit(const ParticleRecord& p, double q, FieldSet& fields, const GridGeometry& geom, int order);

/// One full step: gather, push and deposit per particle in id order, guard
/// folding, then the field advance with periodic guard fills.
void reference_step(OracleState& s);

struct CompareReport {
  double particle_max_error = 0.0;   // max normalized particle difference
  std::uint64_t worst_particle = 0;  // id at which it occurs
  std::array<double, 9> field_error{};  // per component, relative to its max magnitude
  double field_max_error = 0.0;
  double tolerance = 0.0;
  bool pass = false;

  std::string to_text() const;
};

/// Pairs particles by id; positions are normalized by the domain length,
/// momenta by the largest |u| in the reference, weights by the reference
/// weight. Fields compare interior nodes only. Throws ComparisonError when
/// the id sets or grid shapes differ.
CompareReport compare_states(const std::vector<ParticleRecord>& test, const FieldSet& test_fields,
                             const std::vector<ParticleRecord>& reference, const FieldSet& reference_fields,
                             const GridGeometry& geom, double tolerance);

}  // namespace sowpic::oracle
