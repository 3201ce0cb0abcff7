#include "sowpic/core.hpp"

#include <algorithm>
#include <cmath>

namespace sowpic {

bool is_sow(InterpSupply s) {
  return s == InterpSupply::SowScalar || s == InterpSupply::SowBatched;
}

bool is_batched(InterpSupply s) {
  return s == InterpSupply::IndexSortedBatched || s == InterpSupply::ExplicitReorderBatched ||
         s == InterpSupply::SowBatched;
}

bool is_index_sorted(InterpSupply s) {
  return s == InterpSupply::IndexSortedScalar || s == InterpSupply::ExplicitReorderScalar ||
         s == InterpSupply::IndexSortedBatched || s == InterpSupply::ExplicitReorderBatched;
}

bool is_explicit_reorder(InterpSupply s) {
  return s == InterpSupply::ExplicitReorderScalar || s == InterpSupply::ExplicitReorderBatched;
}

void validate_variant(const VariantMatrix& v) {
  switch (v.deposit_mode) {
    case DepositMode::ScalarAtomic:
      return;
    case DepositMode::BatchedIndex:
      if (!is_index_sorted(v.interp_supply)) {
        throw ConfigError("deposit D1 requires an index-sorted supply (G2/G3/G5/G6), got " +
                          to_string(v.interp_supply));
      }
      return;
    case DepositMode::BatchedSowTailBin:
    case DepositMode::BatchedSowTailScalar:
      if (!is_sow(v.interp_supply)) {
        throw ConfigError("deposit " + to_string(v.deposit_mode) +
                          " requires a Sort-on-Write supply (G4/G7), got " + to_string(v.interp_supply));
      }
      return;
  }
}

std::string to_string(InterpSupply s) {
  switch (s) {
    case InterpSupply::UnsortedScalar: return "G0";
    case InterpSupply::IndexSortedScalar: return "G2";
    case InterpSupply::ExplicitReorderScalar: return "G3";
    case InterpSupply::SowScalar: return "G4";
    case InterpSupply::IndexSortedBatched: return "G5";
    case InterpSupply::ExplicitReorderBatched: return "G6";
    case InterpSupply::SowBatched: return "G7";
  }
  return "G?";
}

std::string to_string(DepositMode d) {
  switch (d) {
    case DepositMode::ScalarAtomic: return "D0";
    case DepositMode::BatchedIndex: return "D1";
    case DepositMode::BatchedSowTailBin: return "D2";
    case DepositMode::BatchedSowTailScalar: return "D3";
  }
  return "D?";
}

std::string comm_label(const CommVariant& c) {
  switch (c.mode) {
    case CommMode::Bsp: return "C0";
    case CommMode::TwoSided: return c.sync_point == SyncPoint::PostDeposit ? "C1" : "C3";
    case CommMode::OneSided: return c.sync_point == SyncPoint::PostDeposit ? "C2" : "C4";
  }
  return "C?";
}

std::string to_string(const VariantMatrix& v) {
  return to_string(v.interp_supply) + "/" + to_string(v.deposit_mode) + "/" + comm_label(v.comm);
}

InterpSupply parse_interp(const std::string& label) {
  static const std::array<std::pair<const char*, InterpSupply>, 7> table{{
      {"G0", InterpSupply::UnsortedScalar},
      {"G2", InterpSupply::IndexSortedScalar},
      {"G3", InterpSupply::ExplicitReorderScalar},
      {"G4", InterpSupply::SowScalar},
      {"G5", InterpSupply::IndexSortedBatched},
      {"G6", InterpSupply::ExplicitReorderBatched},
      {"G7", InterpSupply::SowBatched},
  }};
  for (const auto& [name, value] : table) {
    if (label == name) return value;
  }
  throw ConfigError("unknown interpolation supply '" + label + "' (expected G0, G2-G7)");
}

DepositMode parse_deposit(const std::string& label) {
  if (label == "D0") return DepositMode::ScalarAtomic;
  if (label == "D1") return DepositMode::BatchedIndex;
  if (label == "D2") return DepositMode::BatchedSowTailBin;
  if (label == "D3") return DepositMode::BatchedSowTailScalar;
  throw ConfigError("unknown deposit mode '" + label + "' (expected D0-D3)");
}

CommVariant parse_comm(const std::string& label) {
  if (label == "C0") return {CommMode::Bsp, SyncPoint::PostFieldSolve};
  if (label == "C1") return {CommMode::TwoSided, SyncPoint::PostDeposit};
  if (label == "C2") return {CommMode::OneSided, SyncPoint::PostDeposit};
  if (label == "C3") return {CommMode::TwoSided, SyncPoint::PostFieldSolve};
  if (label == "C4") return {CommMode::OneSided, SyncPoint::PostFieldSolve};
  throw ConfigError("unknown comm variant '" + label + "' (expected C0-C4)");
}

// ---------------------------------------------------------------------------

int required_guard(int order) {
  if (order < 1 || order > 3) throw ConfigError("unsupported shape order " + std::to_string(order));
  return order == 1 ? 2 : 3;
}

double wrap_coordinate(double x, int axis, const GridGeometry& g) {
  if (!g.periodic[axis]) return x;
  const double lo = g.prob_lo[axis];
  const double hi = g.prob_hi[axis];
  const double len = hi - lo;
  if (x >= hi) {
    x -= len;
  } else if (x < lo) {
    x += len;
  }
  // Rounding can land exactly on hi, or leave the cell coordinate at n.
  if (x >= hi || x < lo || cell_coordinate(x, axis, g) >= g.n_cell[axis]) x = lo;
  return x;
}

Vec3 wrap_position(const Vec3& x, const GridGeometry& g) {
  return {wrap_coordinate(x[0], 0, g), wrap_coordinate(x[1], 1, g), wrap_coordinate(x[2], 2, g)};
}

CellId cell_of_slow(const Vec3& position, const GridGeometry& geom, std::uint64_t particle_id) {
  CellId out;
  for (int a = 0; a < 3; ++a) {
    const double s = cell_coordinate(position[a], a, geom);
    if (!std::isfinite(s)) throw NumericError("non-finite coordinate in cell_of", particle_id);
    auto c = static_cast<std::int64_t>(std::floor(s));
    const int n = geom.n_cell[a];
    if (geom.periodic[a]) {
      c %= n;
      if (c < 0) c += n;
    } else if (c < 0 || c >= n) {
      throw OwnershipError("position outside non-periodic domain on axis " + std::to_string(a));
    }
    out.idx[a] = static_cast<int>(c);
  }
  const Int3& ts = geom.tile_shape;
  out.flat = static_cast<int>(flatten(out.idx[0] % ts[0], out.idx[1] % ts[1], out.idx[2] % ts[2], ts));
  return out;
}

// ---------------------------------------------------------------------------

NodeArray::NodeArray(const Int3& interior, int guard)
    : n_(interior), g_(guard), ext_{interior[0] + 2 * guard, interior[1] + 2 * guard, interior[2] + 2 * guard} {
  v_.assign(static_cast<std::size_t>(product(ext_)), 0.0);
}

void NodeArray::fill(double value) { std::fill(v_.begin(), v_.end(), value); }

void NodeArray::zero_guards() {
  for (int k = -g_; k < n_[2] + g_; ++k) {
    for (int j = -g_; j < n_[1] + g_; ++j) {
      const bool inner_jk = k >= 0 && k < n_[2] && j >= 0 && j < n_[1];
      for (int i = -g_; i < n_[0] + g_; ++i) {
        if (inner_jk && i >= 0 && i < n_[0]) {
          i = n_[0] - 1;
          continue;
        }
        (*this)(i, j, k) = 0.0;
      }
    }
  }
}

NodeArray& FieldSet::operator[](Component c) {
  return const_cast<NodeArray&>(static_cast<const FieldSet&>(*this)[c]);
}

const NodeArray& FieldSet::operator[](Component c) const {
  switch (c) {
    case Component::Ex: return ex;
    case Component::Ey: return ey;
    case Component::Ez: return ez;
    case Component::Bx: return bx;
    case Component::By: return by;
    case Component::Bz: return bz;
    case Component::Jx: return jx;
    case Component::Jy: return jy;
    case Component::Jz: return jz;
  }
  return ex;
}

FieldSet allocate_fields(const Int3& interior, int guard) {
  NodeArray proto(interior, guard);
  return FieldSet{proto, proto, proto, proto, proto, proto, proto, proto, proto};
}

FieldSet allocate_fields(const GridGeometry& geom) { return allocate_fields(geom.n_cell, geom.guard); }

}  // namespace sowpic
