#include "sowpic/layout.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <set>
#include <string>

namespace sowpic::layout {

namespace {

int wrap_index(int v, int n) {
  const int m = v % n;
  return m < 0 ? m + n : m;
}

std::string triple(const Int3& v) {
  return "(" + std::to_string(v[0]) + "," + std::to_string(v[1]) + "," + std::to_string(v[2]) + ")";
}

}  // namespace

// ---------------------------------------------------------------------------
// Decomposition

Decomposition::Decomposition(const GridGeometry& geom, const Int3& ranks) : geom_(geom), ranks_(ranks) {
  const Int3 tiles = geom.tiles_per_axis();
  for (int a = 0; a < 3; ++a) {
    if (ranks[a] <= 0 || tiles[a] % ranks[a] != 0) {
      throw ConfigError("rank grid " + triple(ranks) + " does not divide the tile grid " + triple(tiles));
    }
    tiles_per_rank_[a] = tiles[a] / ranks[a];
    extent_[a] = tiles_per_rank_[a] * geom.tile_shape[a];
  }
  neighbors_.resize(static_cast<std::size_t>(rank_count()));
  for (int r = 0; r < rank_count(); ++r) {
    const Int3 rc = rank_coords(r);
    std::set<int> found;
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0 && dz == 0) continue;
          const int other = rank_index({rc[0] + dx, rc[1] + dy, rc[2] + dz});
          if (other != r) found.insert(other);
        }
    neighbors_[static_cast<std::size_t>(r)].assign(found.begin(), found.end());
  }
}

Int3 Decomposition::rank_coords(int rank) const {
  return {rank % ranks_[0], (rank / ranks_[0]) % ranks_[1], rank / (ranks_[0] * ranks_[1])};
}

int Decomposition::rank_index(const Int3& c) const {
  const int x = wrap_index(c[0], ranks_[0]);
  const int y = wrap_index(c[1], ranks_[1]);
  const int z = wrap_index(c[2], ranks_[2]);
  return x + ranks_[0] * (y + ranks_[1] * z);
}

Int3 Decomposition::rank_origin(int rank) const {
  const Int3 rc = rank_coords(rank);
  return {rc[0] * extent_[0], rc[1] * extent_[1], rc[2] * extent_[2]};
}

int Decomposition::owner_of_tile(const Int3& tile) const {
  return rank_index({tile[0] / tiles_per_rank_[0], tile[1] / tiles_per_rank_[1], tile[2] / tiles_per_rank_[2]});
}

int Decomposition::owner_of_cell(const Int3& cell) const {
  Int3 c{};
  for (int a = 0; a < 3; ++a) c[a] = wrap_index(cell[a], geom_.n_cell[a]) / extent_[a];
  return rank_index(c);
}

std::vector<Int3> Decomposition::tiles_of_rank(int rank) const {
  const Int3 rc = rank_coords(rank);
  std::vector<Int3> out;
  for (int k = 0; k < tiles_per_rank_[2]; ++k)
    for (int j = 0; j < tiles_per_rank_[1]; ++j)
      for (int i = 0; i < tiles_per_rank_[0]; ++i) {
        out.push_back({rc[0] * tiles_per_rank_[0] + i, rc[1] * tiles_per_rank_[1] + j,
                       rc[2] * tiles_per_rank_[2] + k});
      }
  return out;
}

int Decomposition::local_tile_index(const Int3& tile) const {
  const int i = tile[0] % tiles_per_rank_[0];
  const int j = tile[1] % tiles_per_rank_[1];
  const int k = tile[2] % tiles_per_rank_[2];
  return i + tiles_per_rank_[0] * (j + tiles_per_rank_[1] * k);
}

kernels::LocalFrame Decomposition::frame(int rank) const { return {&geom_, rank_origin(rank), extent_}; }

// ---------------------------------------------------------------------------
// Storage

void ParticleSoA::allocate(std::size_t capacity) {
  id.assign(capacity, 0);
  for (auto* v : {&x, &y, &z, &ux, &uy, &uz, &w}) v->assign(capacity, 0.0);
}

ParticleRecord ParticleSoA::get(std::size_t s) const { return {id[s], x[s], y[s], z[s], ux[s], uy[s], uz[s], w[s]}; }

void ParticleSoA::set(std::size_t s, const ParticleRecord& r) {
  id[s] = r.id;
  x[s] = r.x;
  y[s] = r.y;
  z[s] = r.z;
  ux[s] = r.ux;
  uy[s] = r.uy;
  uz[s] = r.uz;
  w[s] = r.w;
}

void ParticleSoA::copy_from(std::size_t dst, const ParticleSoA& src, std::size_t s) {
  id[dst] = src.id[s];
  x[dst] = src.x[s];
  y[dst] = src.y[s];
  z[dst] = src.z[s];
  ux[dst] = src.ux[s];
  uy[dst] = src.uy[s];
  uz[dst] = src.uz[s];
  w[dst] = src.w[s];
}

kernels::ParticleSpan ParticleSoA::span(std::size_t b, std::size_t n) const {
  return {id.data() + b, x.data() + b,  y.data() + b,  z.data() + b,
          ux.data() + b, uy.data() + b, uz.data() + b, w.data() + b, n};
}

int ParticleTile::local_cell(const Int3& g) const {
  Int3 l{};
  for (int a = 0; a < 3; ++a) {
    l[a] = g[a] - origin[a];
    if (l[a] < 0 || l[a] >= shape[a]) return -1;
  }
  return static_cast<int>(flatten(l[0], l[1], l[2], shape));
}

Int3 ParticleTile::global_cell(int local) const {
  return {origin[0] + local % shape[0], origin[1] + (local / shape[0]) % shape[1],
          origin[2] + local / (shape[0] * shape[1])};
}

std::size_t tile_capacity(std::int64_t n, double fraction) {
  if (n < 0 || fraction < 0.0) throw ConfigError("tile capacity needs non-negative sizes");
  return static_cast<std::size_t>(std::ceil(static_cast<double>(n) * (1.0 + fraction)));
}

ParticleTile init_tile(int n_cells, int ppc, double fraction) {
  if (n_cells <= 0 || ppc < 0) throw ConfigError("init_tile needs a positive cell count and ppc >= 0");
  ParticleTile t;
  t.n_cells = n_cells;
  t.shape = {n_cells, 1, 1};
  t.disorder_fraction = fraction;
  const std::size_t cap = tile_capacity(static_cast<std::int64_t>(n_cells) * ppc, fraction);
  for (auto& b : t.buffers) {
    b.soa.allocate(cap);
    b.meta.assign(static_cast<std::size_t>(n_cells), Segment{});
    b.leaving.assign(cap, 0);
    b.ptr_ord = 0;
    b.ptr_dis = cap;
  }
  return t;
}

ParticleTile init_tile(const GridGeometry& geom, const Int3& home_tile, int ppc, double fraction) {
  ParticleTile t = init_tile(geom.cells_per_tile(), ppc, fraction);
  t.home_tile = home_tile;
  t.shape = geom.tile_shape;
  t.origin = {home_tile[0] * geom.tile_shape[0], home_tile[1] * geom.tile_shape[1],
              home_tile[2] * geom.tile_shape[2]};
  return t;
}

void grow(ParticleTile& tile, std::size_t count) {
  if (count <= tile.capacity()) return;
  const std::size_t cap = std::max(tile_capacity(static_cast<std::int64_t>(count), tile.disorder_fraction), count);
  for (auto& b : tile.buffers) {
    ParticleSoA fresh;
    fresh.allocate(cap);
    std::vector<std::uint8_t> flags(cap, 0);
    const std::size_t old_cap = b.capacity();
    for (std::size_t s = 0; s < b.ptr_ord; ++s) {
      fresh.copy_from(s, b.soa, s);
      flags[s] = b.leaving[s];
    }
    const std::size_t shift = cap - old_cap;
    for (std::size_t s = b.ptr_dis; s < old_cap; ++s) {
      fresh.copy_from(s + shift, b.soa, s);
      flags[s + shift] = b.leaving[s];
    }
    b.ptr_dis += shift;
    b.soa = std::move(fresh);
    b.leaving = std::move(flags);
  }
}

void load_ordered(ParticleTile& tile, std::span<const ParticleRecord> particles, const GridGeometry& geom) {
  std::vector<std::pair<int, ParticleRecord>> keyed;
  keyed.reserve(particles.size());
  for (const auto& p : particles) {
    const int c = tile.local_cell(cell_of(p.position(), geom, p.id).idx);
    if (c < 0) throw OwnershipError("particle " + std::to_string(p.id) + " does not belong to tile " + triple(tile.home_tile));
    keyed.emplace_back(c, p);
  }
  std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first < b.first : a.second.id < b.second.id;
  });
  grow(tile, keyed.size());
  TileBuffer& cur = tile.current();
  cur.ordered = true;
  cur.meta.assign(static_cast<std::size_t>(tile.n_cells), Segment{});
  std::fill(cur.leaving.begin(), cur.leaving.end(), 0);
  std::size_t s = 0;
  for (int c = 0; c < tile.n_cells; ++c) {
    const std::size_t start = s;
    while (s < keyed.size() && keyed[s].first == c) {
      cur.soa.set(s, keyed[s].second);
      ++s;
    }
    cur.meta[static_cast<std::size_t>(c)] = {start, s - start};
  }
  cur.ptr_ord = s;
  cur.ptr_dis = cur.capacity();
  tile.bins = {};
}

void load_flat(ParticleTile& tile, std::span<const ParticleRecord> particles) {
  grow(tile, particles.size());
  TileBuffer& cur = tile.current();
  cur.ordered = false;
  std::fill(cur.leaving.begin(), cur.leaving.end(), 0);
  for (std::size_t s = 0; s < particles.size(); ++s) cur.soa.set(s, particles[s]);
  cur.ptr_ord = particles.size();
  cur.ptr_dis = cur.capacity();
}

std::vector<ParticleRecord> collect(const ParticleTile& tile) {
  const TileBuffer& b = tile.current();
  std::vector<ParticleRecord> out;
  out.reserve(b.size());
  for (std::size_t s = 0; s < b.ptr_ord; ++s) out.push_back(b.soa.get(s));
  for (std::size_t s = b.ptr_dis; s < b.capacity(); ++s) out.push_back(b.soa.get(s));
  return out;
}

// ---------------------------------------------------------------------------
// Sort-on-Write primitives

void tail_bin(ParticleTile& tile, const GridGeometry& geom) {
  const TileBuffer& b = tile.current();
  BinIndex& bins = tile.bins;
  bins.start.assign(static_cast<std::size_t>(tile.n_cells) + 1, 0);
  const std::size_t n = b.tail_length();
  std::vector<int> cell(n);
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t s = b.ptr_dis + t;
    const int c = tile.local_cell(cell_of({b.soa.x[s], b.soa.y[s], b.soa.z[s]}, geom, b.soa.id[s]).idx);
    if (c < 0) throw LayoutError("tail slot holds particle " + std::to_string(b.soa.id[s]) + " outside its tile");
    cell[t] = c;
    ++bins.start[static_cast<std::size_t>(c) + 1];
  }
  for (std::size_t c = 0; c < static_cast<std::size_t>(tile.n_cells); ++c) bins.start[c + 1] += bins.start[c];
  bins.slots.resize(n);
  std::vector<std::uint32_t> fill(bins.start.begin(), bins.start.end() - 1);
  for (std::size_t t = 0; t < n; ++t) bins.slots[fill[static_cast<std::size_t>(cell[t])]++] = b.ptr_dis + t;
}

MoveClass classify_one(const CellId& new_cell, const Int3& home, const Decomposition& decomp, int rank) {
  const GridGeometry& g = decomp.geometry();
  bool same = true;
  for (int a = 0; a < 3; ++a) {
    int d = new_cell.idx[a] - home[a];
    if (g.periodic[a]) {
      const int n = g.n_cell[a];
      if (d > n / 2) d -= n;
      if (d < -(n / 2)) d += n;
    }
    if (d < -1 || d > 1) {
      throw MigrationError("particle moved from cell " + triple(home) + " to " + triple(new_cell.idx) +
                           ", beyond the one-cell migration envelope");
    }
    same = same && d == 0;
  }
  if (same) return MoveClass::Stay;
  const Int3 ht = tile_of_cell(home, g);
  const Int3 nt = tile_of_cell(new_cell.idx, g);
  if (ht == nt) return MoveClass::SameTile;
  return decomp.owner_of_tile(nt) == rank ? MoveClass::OtherTile : MoveClass::Remote;
}

ClassMasks classify(std::span<const CellId> new_cells, const Int3& home, const Decomposition& decomp, int rank) {
  if (new_cells.size() > static_cast<std::size_t>(kernels::kBatch)) throw LayoutError("classify batch wider than 8");
  ClassMasks m;
  for (std::size_t i = 0; i < new_cells.size(); ++i) {
    const MoveClass k = classify_one(new_cells[i], home, decomp, rank);
    m.stay[i] = k == MoveClass::Stay;
    m.move[i] = !m.stay[i];
    m.remote[i] = k == MoveClass::Remote;
    m.leaving[i] = k == MoveClass::OtherTile || k == MoveClass::Remote;
    m.n_stay += m.stay[i];
    m.n_move += m.move[i];
    m.n_remote += m.remote[i];
    m.n_leaving += m.leaving[i];
  }
  return m;
}

std::size_t compact_store(TileBuffer& next, const LaneRecords& lanes, int n_lanes, const LaneMask& mask) {
  const auto count = static_cast<std::size_t>(std::count(mask.begin(), mask.begin() + n_lanes, true));
  if (next.ptr_ord + count > next.ptr_dis) {
    throw OverflowError("ordered cursor would pass the disordered cursor (" + std::to_string(next.ptr_ord + count) +
                        " > " + std::to_string(next.ptr_dis) + ")");
  }
  for (int i = 0; i < n_lanes; ++i) {
    if (mask[static_cast<std::size_t>(i)]) next.soa.set(next.ptr_ord++, lanes[static_cast<std::size_t>(i)]);
  }
  return next.ptr_ord;
}

std::size_t append_disordered(TileBuffer& next, const LaneRecords& lanes, int n_lanes, const LaneMask& mask,
                              const LaneMask& leaving) {
  const auto count = static_cast<std::size_t>(std::count(mask.begin(), mask.begin() + n_lanes, true));
  if (next.ptr_dis < next.ptr_ord + count) {
    throw OverflowError("disordered cursor would pass the ordered cursor");
  }
  for (int i = 0; i < n_lanes; ++i) {
    const auto li = static_cast<std::size_t>(i);
    if (!mask[li]) continue;
    --next.ptr_dis;
    next.soa.set(next.ptr_dis, lanes[li]);
    next.leaving[next.ptr_dis] = leaving[li] ? 1 : 0;
  }
  return next.ptr_dis;
}

void finalize_meta(TileBuffer& next, int cell, std::size_t start) {
  next.meta[static_cast<std::size_t>(cell)] = {start, next.ptr_ord - start};
}

void truncate_and_compact_tail(TileBuffer& b) {
  const std::size_t cap = b.capacity();
  std::size_t write = cap;
  for (std::size_t s = cap; s-- > b.ptr_dis;) {
    if (b.leaving[s]) {
      b.leaving[s] = 0;
      continue;
    }
    --write;
    if (write != s) b.soa.copy_from(write, b.soa, s);
  }
  b.ptr_dis = write;
}

void remove_flagged_flat(TileBuffer& b) {
  std::size_t write = 0;
  for (std::size_t s = 0; s < b.ptr_ord; ++s) {
    if (b.leaving[s]) {
      b.leaving[s] = 0;
      continue;
    }
    if (write != s) b.soa.copy_from(write, b.soa, s);
    ++write;
  }
  b.ptr_ord = write;
}

void merge_inbox(ParticleTile& tile, TileBuffer& buffer) {
  if (tile.inbox.empty()) return;
  std::sort(tile.inbox.begin(), tile.inbox.end(),
            [](const ParticleRecord& a, const ParticleRecord& b) { return a.id < b.id; });
  const std::size_t needed = buffer.size() + tile.inbox.size();
  if (needed > buffer.capacity()) grow(tile, needed);
  if (buffer.ordered) {
    // Arrivals extend the tail downward; the lowest id ends nearest the
    // ordered region's cursor.
    for (const auto& r : tile.inbox) buffer.soa.set(--buffer.ptr_dis, r);
  } else {
    for (const auto& r : tile.inbox) buffer.soa.set(buffer.ptr_ord++, r);
  }
  tile.inbox.clear();
}

void begin_write(TileBuffer& next, int n_cells) {
  next.ptr_ord = 0;
  next.ptr_dis = next.capacity();
  next.ordered = true;
  next.meta.assign(static_cast<std::size_t>(n_cells), Segment{});
  std::fill(next.leaving.begin(), next.leaving.end(), 0);
}

void swap_buffers(ParticleTile& tile) {
  if (!tile.inbox.empty()) {
    throw LayoutError("swap_buffers with " + std::to_string(tile.inbox.size()) + " unmerged arrivals in tile " +
                      triple(tile.home_tile));
  }
  tile.cur = 1 - tile.cur;
}

// ---------------------------------------------------------------------------
// Index supplies

std::vector<std::size_t> index_sort(const TileBuffer& b, const ParticleTile& tile, const GridGeometry& geom,
                                    std::vector<Segment>& segments) {
  const std::size_t n = b.ptr_ord;
  std::vector<int> cell(n);
  std::vector<std::size_t> count(static_cast<std::size_t>(tile.n_cells) + 1, 0);
  for (std::size_t s = 0; s < n; ++s) {
    const int c = tile.local_cell(cell_of({b.soa.x[s], b.soa.y[s], b.soa.z[s]}, geom, b.soa.id[s]).idx);
    if (c < 0) throw LayoutError("particle " + std::to_string(b.soa.id[s]) + " stored outside its tile");
    cell[s] = c;
    ++count[static_cast<std::size_t>(c) + 1];
  }
  std::partial_sum(count.begin(), count.end(), count.begin());
  segments.resize(static_cast<std::size_t>(tile.n_cells));
  for (int c = 0; c < tile.n_cells; ++c) {
    const auto uc = static_cast<std::size_t>(c);
    segments[uc] = {count[uc], count[uc + 1] - count[uc]};
  }
  std::vector<std::size_t> perm(n);
  for (std::size_t s = 0; s < n; ++s) perm[count[static_cast<std::size_t>(cell[s])]++] = s;
  return perm;
}

void explicit_reorder(ParticleTile& tile, const GridGeometry& geom) {
  TileBuffer& cur = tile.current();
  TileBuffer& nxt = tile.next();
  std::vector<Segment> segments;
  const auto perm = index_sort(cur, tile, geom, segments);
  for (std::size_t s = 0; s < perm.size(); ++s) nxt.soa.copy_from(s, cur.soa, perm[s]);
  nxt.ptr_ord = perm.size();
  nxt.ptr_dis = nxt.capacity();
  nxt.meta = std::move(segments);
  nxt.ordered = true;
  std::fill(nxt.leaving.begin(), nxt.leaving.end(), 0);
  // Arrivals already routed to this tile stay in the inbox for the merge.
  tile.cur = 1 - tile.cur;
}

}  // namespace sowpic::layout
