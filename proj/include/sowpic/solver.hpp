#pragma once

#include <cstdint>
#include <vector>

#include "sowpic/core.hpp"
#include "sowpic/fabric.hpp"
#include "sowpic/layout.hpp"

namespace sowpic::solver {

/// Largest stable step for the collocated scheme scaled by `dt_safety`.
double compute_dt(const GridGeometry& geom, double dt_safety);

/// B -= (dt/2) curl E on interior nodes; E guards must be current.
void advance_B_half(FieldSet& f, const Vec3& dx, double dt);
/// E += dt (c^2 curl B - J/eps0) on interior nodes; B guards must be current.
void advance_E_full(FieldSet& f, const Vec3& dx, double dt);

/// Single-domain periodic guard fill (copy from the wrapped interior).
void fill_periodic_guards(NodeArray& a);
/// Single-domain periodic guard reduction: guard values are added into the
/// wrapped interior node, then guards are zeroed.
void fold_periodic_guards(NodeArray& a);

/// Index lists for one (receiver, sender) pair: guard node dst[i] of the
/// receiver mirrors interior node src[i] of the sender.
struct PairPlan {
  std::vector<std::uint32_t> src;
  std::vector<std::uint32_t> dst;
};

/// Halo plans for every rank pair of a decomposition and the fabric regions
/// used to move field data in the Fields namespace.
class FieldExchanger {
 public:
  FieldExchanger(const layout::Decomposition& decomp, fabric::RankFabric* fabric);

  const PairPlan& plan(int receiver, int sender) const;

  /// Copies interior values into the guards of every listed component.
  /// Returns the virtual time spent waiting.
  double halo_exchange(int rank, FieldSet& f, std::initializer_list<Component> comps, std::uint32_t epoch);
  /// Adds guard contributions into their owners' interiors, then zeroes guards.
  double reduce_guards(int rank, FieldSet& f, std::initializer_list<Component> comps, std::uint32_t epoch);

 private:
  const layout::Decomposition* decomp_;
  fabric::RankFabric* fabric_;
  std::vector<PairPlan> plans_;  // receiver * ranks + sender
  int ranks_ = 1;
};

}  // namespace sowpic::solver
