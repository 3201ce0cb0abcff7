#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "sowpic/core.hpp"
#include "sowpic/kernels.hpp"

namespace sowpic::layout {

// ---------------------------------------------------------------------------
// Domain decomposition

/// Block decomposition of the tile grid over a rank grid. Rank r owns a
/// contiguous box of tiles; ranks are numbered x fastest.
class Decomposition {
 public:
  Decomposition() = default;
  Decomposition(const GridGeometry& geom, const Int3& ranks);

  const GridGeometry& geometry() const { return geom_; }
  const Int3& rank_grid() const { return ranks_; }
  int rank_count() const { return ranks_[0] * ranks_[1] * ranks_[2]; }

  Int3 rank_coords(int rank) const;
  int rank_index(const Int3& coords) const;  // coordinates wrapped periodically

  const Int3& rank_extent() const { return extent_; }  // cells per rank
  Int3 rank_origin(int rank) const;                    // first global cell
  const Int3& tiles_per_rank() const { return tiles_per_rank_; }

  int owner_of_tile(const Int3& tile) const;
  int owner_of_cell(const Int3& cell) const;

  /// Distinct ranks (other than `rank`) reachable through the 26 one-cell
  /// offsets of the rank box, ascending.
  const std::vector<int>& neighbor_ranks(int rank) const { return neighbors_[static_cast<std::size_t>(rank)]; }

  /// Global tile coordinates owned by `rank`, x fastest.
  std::vector<Int3> tiles_of_rank(int rank) const;
  /// Index of a global tile within tiles_of_rank(owner).
  int local_tile_index(const Int3& tile) const;

  kernels::LocalFrame frame(int rank) const;

 private:
  GridGeometry geom_{};
  Int3 ranks_{1, 1, 1};
  Int3 extent_{};
  Int3 tiles_per_rank_{};
  std::vector<std::vector<int>> neighbors_;
};

// ---------------------------------------------------------------------------
// Storage

struct Segment {
  std::size_t start = 0;
  std::size_t length = 0;

  bool operator==(const Segment&) const = default;
};

/// Structure-of-arrays particle storage of fixed capacity.
struct ParticleSoA {
  std::vector<std::uint64_t> id;
  std::vector<double> x, y, z, ux, uy, uz, w;

  void allocate(std::size_t capacity);
  std::size_t capacity() const { return id.size(); }

  ParticleRecord get(std::size_t slot) const;
  void set(std::size_t slot, const ParticleRecord& r);
  void copy_from(std::size_t dst, const ParticleSoA& src, std::size_t src_slot);
  kernels::ParticleSpan span(std::size_t begin, std::size_t count) const;
};

/// One of the two buffers of a tile together with its layout bookkeeping.
/// Ordered region is [0, ptr_ord), disordered tail is [ptr_dis, capacity).
struct TileBuffer {
  ParticleSoA soa;
  std::vector<Segment> meta;         // per local cell; valid when `ordered`
  std::size_t ptr_ord = 0;
  std::size_t ptr_dis = 0;
  std::vector<std::uint8_t> leaving; // per slot
  bool ordered = true;

  std::size_t capacity() const { return soa.capacity(); }
  std::size_t tail_length() const { return capacity() - ptr_dis; }
  std::size_t size() const { return ptr_ord + tail_length(); }
};

/// Per-cell slot lists over a disordered tail, stored compressed: the slots
/// of local cell c are slots[start[c] .. start[c + 1]).
struct BinIndex {
  std::vector<std::uint32_t> start;
  std::vector<std::size_t> slots;

  std::span<const std::size_t> cell(int c) const {
    return {slots.data() + start[static_cast<std::size_t>(c)],
            slots.data() + start[static_cast<std::size_t>(c) + 1]};
  }
};

struct ParticleTile {
  Int3 home_tile{};
  Int3 origin{};  // first global cell of the tile
  Int3 shape{};
  int n_cells = 0;
  double disorder_fraction = 0.25;

  std::array<TileBuffer, 2> buffers;
  int cur = 0;
  BinIndex bins;                       // over the current buffer's tail
  std::vector<ParticleRecord> inbox;   // arrivals pending merge

  TileBuffer& current() { return buffers[static_cast<std::size_t>(cur)]; }
  const TileBuffer& current() const { return buffers[static_cast<std::size_t>(cur)]; }
  TileBuffer& next() { return buffers[static_cast<std::size_t>(1 - cur)]; }
  const TileBuffer& next() const { return buffers[static_cast<std::size_t>(1 - cur)]; }

  std::size_t capacity() const { return buffers[0].capacity(); }
  std::size_t size() const { return current().size(); }

  /// Local flat cell index (x fastest) of a global cell inside this tile,
  /// or -1 when the cell lies elsewhere.
  int local_cell(const Int3& global_cell) const;
  Int3 global_cell(int local) const;
};

std::size_t tile_capacity(std::int64_t n_particles, double disorder_fraction);

/// Empty tile sized for n_cells * ppc particles plus the disorder margin.
ParticleTile init_tile(int n_cells, int ppc, double disorder_fraction = 0.25);
/// Same, with the tile placed in the global grid.
ParticleTile init_tile(const GridGeometry& geom, const Int3& home_tile, int ppc, double disorder_fraction = 0.25);

/// Reallocates both buffers to hold at least `count` particles, keeping the
/// ordered region in place and the tail aligned to the new capacity.
void grow(ParticleTile& tile, std::size_t count);

/// Loads particles into the current buffer sorted by cell then id, with an
/// empty tail. All particles must belong to the tile.
void load_ordered(ParticleTile& tile, std::span<const ParticleRecord> particles, const GridGeometry& geom);
/// Loads particles into [0, n) of the current buffer in the given order.
void load_flat(ParticleTile& tile, std::span<const ParticleRecord> particles);

/// Every particle currently stored (ordered region, then tail ascending).
std::vector<ParticleRecord> collect(const ParticleTile& tile);

// ---------------------------------------------------------------------------
// Sort-on-Write primitives

/// Bins the current buffer's tail by cell in slot order.
void tail_bin(ParticleTile& tile, const GridGeometry& geom);

enum class MoveClass : std::uint8_t { Stay, SameTile, OtherTile, Remote };

struct ClassMasks {
  std::array<bool, kernels::kBatch> stay{};
  std::array<bool, kernels::kBatch> move{};
  std::array<bool, kernels::kBatch> remote{};
  std::array<bool, kernels::kBatch> leaving{};  // move to another tile (any rank)
  int n_stay = 0;
  int n_move = 0;
  int n_remote = 0;
  int n_leaving = 0;
};

/// Class of one particle whose cell was `home_cell` before the push.
MoveClass classify_one(const CellId& new_cell, const Int3& home_cell, const Decomposition& decomp, int rank);

ClassMasks classify(std::span<const CellId> new_cells, const Int3& home_cell, const Decomposition& decomp, int rank);

/// Lane records of one batch after the push.
using LaneRecords = std::array<ParticleRecord, kernels::kBatch>;
using LaneMask = std::array<bool, kernels::kBatch>;

std::size_t compact_store(TileBuffer& next, const LaneRecords& lanes, int n_lanes, const LaneMask& mask);
std::size_t append_disordered(TileBuffer& next, const LaneRecords& lanes, int n_lanes, const LaneMask& mask,
                              const LaneMask& leaving);
void finalize_meta(TileBuffer& next, int cell, std::size_t start);

/// Drops leaving-flagged tail slots, compacting retained entries toward the
/// end of the buffer in their original order; clears all flags.
void truncate_and_compact_tail(TileBuffer& buffer);

/// Removes leaving-flagged slots from a flat buffer (stable).
void remove_flagged_flat(TileBuffer& buffer);

/// Appends the inbox in ascending id order (to the tail for ordered buffers,
/// after [0, ptr_ord) for flat ones), growing the tile when needed.
void merge_inbox(ParticleTile& tile, TileBuffer& buffer);

/// Resets the next buffer for a new write-back pass.
void begin_write(TileBuffer& next, int n_cells);

void swap_buffers(ParticleTile& tile);

// ---------------------------------------------------------------------------
// Index supplies for the non-SoW variants

/// Stable counting sort of the flat region by local cell: returns the slot
/// permutation and fills per-cell segments into it.
std::vector<std::size_t> index_sort(const TileBuffer& buffer, const ParticleTile& tile, const GridGeometry& geom,
                                    std::vector<Segment>& segments);

/// Physically reorders the current flat buffer into the next one by the
/// stable cell permutation and swaps; the result is ordered with valid meta.
void explicit_reorder(ParticleTile& tile, const GridGeometry& geom);

}  // namespace sowpic::layout
