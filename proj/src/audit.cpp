#include <algorithm>
#include <string>

#include "sowpic/pipeline.hpp"

namespace sowpic::pipeline {

namespace {

constexpr std::size_t kMaxMessages = 16;

std::string where(int rank, const layout::ParticleTile& t) {
  return "rank " + std::to_string(rank) + " tile (" + std::to_string(t.home_tile[0]) + "," +
         std::to_string(t.home_tile[1]) + "," + std::to_string(t.home_tile[2]) + ")";
}

}  // namespace

void AuditReport::fail(const std::string& m) {
  ++violations;
  if (messages.size() < kMaxMessages) messages.push_back(m);
}

CellMap::CellMap(const std::vector<ParticleRecord>& by_id, const GridGeometry& g) {
  ids_.reserve(by_id.size());
  cells_.reserve(by_id.size());
  for (const auto& p : by_id) {
    dense_ = dense_ && p.id == ids_.size();
    ids_.push_back(p.id);
    cells_.push_back(cell_of(p.position(), g, p.id).idx);
  }
}

const Int3* CellMap::find(std::uint64_t id) const {
  if (dense_) return id < cells_.size() ? &cells_[id] : nullptr;
  const auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
  if (it == ids_.end() || *it != id) return nullptr;
  return &cells_[static_cast<std::size_t>(it - ids_.begin())];
}

CellMap cell_map(const Simulation& sim) { return CellMap(sim.particles(), sim.geometry()); }

AuditReport audit(const Simulation& sim, const std::vector<std::uint64_t>& expected_ids, const CellMap* before) {
  AuditReport rep;
  const GridGeometry& g = sim.geometry();
  const auto& decomp = sim.decomposition();
  std::vector<std::uint64_t> ids;

  for (int r = 0; r < sim.rank_count(); ++r) {
    for (const auto& tile : sim.rank(r).tiles) {
      const std::string at = where(r, tile);
      const layout::TileBuffer& b = tile.current();
      if (!(b.ptr_ord <= b.ptr_dis && b.ptr_dis <= b.capacity())) {
        rep.fail(at + ": cursors out of order (" + std::to_string(b.ptr_ord) + ", " + std::to_string(b.ptr_dis) + ", " +
                 std::to_string(b.capacity()) + ")");
        continue;
      }
      if (!tile.inbox.empty()) rep.fail(at + ": " + std::to_string(tile.inbox.size()) + " unmerged arrivals");
      if (std::any_of(b.leaving.begin(), b.leaving.end(), [](std::uint8_t f) { return f != 0; })) {
        rep.fail(at + ": leaving flags left set");
      }

      auto check_slot = [&](std::size_t s, bool in_tail) {
        const ParticleRecord p = b.soa.get(s);
        ids.push_back(p.id);
        const CellId c = cell_of(p.position(), g, p.id);
        if (decomp.owner_of_cell(c.idx) != r) rep.fail(at + ": particle " + std::to_string(p.id) + " not owned by this rank");
        if (tile.local_cell(c.idx) < 0) rep.fail(at + ": particle " + std::to_string(p.id) + " lies outside the tile");
        if (before && b.ordered) {
          const Int3* prev = before->find(p.id);
          if (prev == nullptr) {
            rep.fail(at + ": particle " + std::to_string(p.id) + " has no previous cell");
          } else if ((*prev != c.idx) != in_tail) {
            rep.fail(at + ": particle " + std::to_string(p.id) + (in_tail ? " sits in the tail without changing cell"
                                                                            : " changed cell but sits in the ordered region"));
          }
        }
        return c;
      };

      if (b.ordered) {
        // Segments must tile [0, ptr_ord) in cell order, each holding its own cell only.
        if (b.meta.size() != static_cast<std::size_t>(tile.n_cells)) {
          rep.fail(at + ": meta has " + std::to_string(b.meta.size()) + " entries");
          continue;
        }
        std::size_t expect = 0;
        for (int cell = 0; cell < tile.n_cells; ++cell) {
          const layout::Segment seg = b.meta[static_cast<std::size_t>(cell)];
          if (seg.start != expect) rep.fail(at + ": segment of cell " + std::to_string(cell) + " is not contiguous");
          expect = seg.start + seg.length;
          for (std::size_t s = seg.start; s < seg.start + seg.length && s < b.ptr_ord; ++s) {
            const CellId c = check_slot(s, false);
            if (tile.local_cell(c.idx) != cell) {
              rep.fail(at + ": slot " + std::to_string(s) + " of cell " + std::to_string(cell) + " holds particle " +
                       std::to_string(b.soa.id[s]) + " of another cell");
            }
          }
        }
        if (expect != b.ptr_ord) rep.fail(at + ": segments end at " + std::to_string(expect) + ", ordered cursor at " + std::to_string(b.ptr_ord));
      } else {
        for (std::size_t s = 0; s < b.ptr_ord; ++s) check_slot(s, false);
      }
      for (std::size_t s = b.ptr_dis; s < b.capacity(); ++s) check_slot(s, true);
    }
  }

  std::sort(ids.begin(), ids.end());
  if (ids != expected_ids) {
    rep.fail("particle id multiset changed: " + std::to_string(ids.size()) + " stored, " +
             std::to_string(expected_ids.size()) + " expected");
  }
  return rep;
}

}  // namespace sowpic::pipeline
