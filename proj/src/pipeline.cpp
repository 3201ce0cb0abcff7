#include "sowpic/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <exception>
#include <mutex>
#include <thread>

namespace sowpic::pipeline {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string triple(const Int3& v) {
  return "(" + std::to_string(v[0]) + "," + std::to_string(v[1]) + "," + std::to_string(v[2]) + ")";
}

std::int64_t batches_of(std::size_t n) { return static_cast<std::int64_t>((n + kernels::kBatch - 1) / kernels::kBatch); }

// Rethrows the active exception with a context prefix, keeping its type.
[[noreturn]] void rethrow_with(const std::string& ctx) {
  try {
    throw;
  } catch (const NumericError& e) {
    std::string what = e.what();
    const std::string suffix = " (particle " + std::to_string(e.particle_id()) + ")";
    if (what.size() >= suffix.size() && what.compare(what.size() - suffix.size(), suffix.size(), suffix) == 0) {
      what.resize(what.size() - suffix.size());
    }
    throw NumericError(ctx + what, e.particle_id());
  } catch (const OverflowError& e) {
    throw OverflowError(ctx + e.what());
  } catch (const LayoutError& e) {
    throw LayoutError(ctx + e.what());
  } catch (const OwnershipError& e) {
    throw OwnershipError(ctx + e.what());
  } catch (const MigrationError& e) {
    throw MigrationError(ctx + e.what());
  } catch (const ProtocolError& e) {
    throw ProtocolError(ctx + e.what());
  } catch (const MetricError& e) {
    throw MetricError(ctx + e.what());
  } catch (const ComparisonError& e) {
    throw ComparisonError(ctx + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(ctx + e.what());
  } catch (const Error& e) {
    throw Error(ctx + e.what());
  } catch (const std::exception& e) {
    throw Error(ctx + e.what());
  }
}

constexpr std::array<Component, 3> kJ{Component::Jx, Component::Jy, Component::Jz};

}  // namespace

struct Simulation::Counters {
  // Phase 1
  std::int64_t n1 = 0;
  std::int64_t scalar1 = 0;
  std::int64_t batches1 = 0;
  std::int64_t layout1 = 0;
  std::int64_t fused_routed = 0;
  // Phase 2
  std::int64_t n2 = 0;
  std::int64_t scalar2 = 0;
  std::int64_t batches2 = 0;
  std::int64_t layout2 = 0;
  // wall-clock time spent in layout maintenance
  double wall_sort1 = 0.0;
  double wall_sort2 = 0.0;
};

// ---------------------------------------------------------------------------
// Construction

Simulation::Simulation(const SimulationConfig& config) : Simulation(config, metrics::init_workload(config)) {}

Simulation::Simulation(const SimulationConfig& config, const std::vector<ParticleRecord>& initial)
    : config_(config), geom_(build_geometry(config)), decomp_(geom_, config.ranks) {
  validate_variant(config_.variant);
  dt_ = solver::compute_dt(geom_, config_.dt_safety);
  const int R = decomp_.rank_count();
  fabric_ = std::make_unique<fabric::RankFabric>(R, config_.cost);
  exchanger_ = std::make_unique<solver::FieldExchanger>(decomp_, fabric_.get());

  const std::int64_t per_rank = product(decomp_.rank_extent()) * std::max(config_.ppc, 1);
  const auto frame_cap = static_cast<std::size_t>(
      std::max<std::int64_t>(1, static_cast<std::int64_t>(layout::tile_capacity(per_rank, config_.disorder_fraction)) - per_rank));
  std::vector<redist::RankExchange> exchanges;
  exchanges.reserve(static_cast<std::size_t>(R));
  for (int r = 0; r < R; ++r) exchanges.emplace_back(decomp_, r, frame_cap);
  if (R > 1) redist::register_particle_regions(*fabric_, decomp_, exchanges);

  ranks_.resize(static_cast<std::size_t>(R));
  for (int r = 0; r < R; ++r) {
    RankState& rs = ranks_[static_cast<std::size_t>(r)];
    rs.rank = r;
    rs.fields = allocate_fields(decomp_.rank_extent(), geom_.guard);
    rs.frame = decomp_.frame(r);
    rs.exchange = std::move(exchanges[static_cast<std::size_t>(r)]);
    for (const Int3& t : decomp_.tiles_of_rank(r)) {
      rs.tiles.push_back(layout::init_tile(geom_, t, config_.ppc, config_.disorder_fraction));
    }
  }
  load(initial);
}

Simulation::~Simulation() = default;

void Simulation::load(const std::vector<ParticleRecord>& initial) {
  std::vector<std::vector<std::vector<ParticleRecord>>> per(ranks_.size());
  for (std::size_t r = 0; r < ranks_.size(); ++r) per[r].resize(ranks_[r].tiles.size());
  for (const auto& p : initial) {
    const CellId c = cell_of(p.position(), geom_, p.id);
    const int owner = decomp_.owner_of_cell(c.idx);
    const int t = decomp_.local_tile_index(tile_of_cell(c.idx, geom_));
    per[static_cast<std::size_t>(owner)][static_cast<std::size_t>(t)].push_back(p);
  }
  const bool sow = is_sow(config_.variant.interp_supply);
  for (std::size_t r = 0; r < ranks_.size(); ++r) {
    for (std::size_t t = 0; t < ranks_[r].tiles.size(); ++t) {
      auto& list = per[r][t];
      std::sort(list.begin(), list.end(), [](const ParticleRecord& a, const ParticleRecord& b) { return a.id < b.id; });
      if (sow) {
        layout::load_ordered(ranks_[r].tiles[t], list, geom_);
      } else {
        layout::load_flat(ranks_[r].tiles[t], list);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Phase 1: gather, push and write-back

void Simulation::push_lanes(RankState& rs, layout::LaneRecords& lanes, int n, bool batched,
                            std::array<CellId, kernels::kBatch>& cells, Counters& c) const {
  std::array<kernels::GatheredField, kernels::kBatch> fld{};
  if (batched) {
    std::array<Vec3, kernels::kBatch> loc{};
    for (int i = 0; i < n; ++i) loc[static_cast<std::size_t>(i)] = rs.frame.to_local(lanes[static_cast<std::size_t>(i)].position());
    kernels::build_weight_matrix(rs.batch, std::span<const Vec3>(loc.data(), static_cast<std::size_t>(n)), config_.order);
    kernels::build_grid_field_matrix(rs.batch, rs.fields);
    kernels::interpolate_batch(rs.batch);
    for (int i = 0; i < n; ++i) {
      auto& f = fld[static_cast<std::size_t>(i)];
      f.e = {rs.batch.F(i, 0), rs.batch.F(i, 1), rs.batch.F(i, 2)};
      f.b = {rs.batch.F(i, 3), rs.batch.F(i, 4), rs.batch.F(i, 5)};
    }
    ++c.batches1;
  } else {
    for (int i = 0; i < n; ++i) {
      fld[static_cast<std::size_t>(i)] = kernels::gather_scalar(lanes[static_cast<std::size_t>(i)], rs.fields, rs.frame, config_.order);
    }
    c.scalar1 += n;
  }
  for (int i = 0; i < n; ++i) {
    auto& p = lanes[static_cast<std::size_t>(i)];
    if (freeze_) {
      p.ux = p.uy = p.uz = 0.0;
    } else {
      const auto& f = fld[static_cast<std::size_t>(i)];
      const auto r = kernels::boris_push(p.position(), p.momentum(), f.e, f.b, config_.q, config_.m, dt_, &geom_, p.id);
      p.x = r.x_new[0];
      p.y = r.x_new[1];
      p.z = r.x_new[2];
      p.ux = r.u_new[0];
      p.uy = r.u_new[1];
      p.uz = r.u_new[2];
    }
    cells[static_cast<std::size_t>(i)] = cell_of(p.position(), geom_, p.id);
  }
  c.n1 += n;
}

void Simulation::phase1_sow(RankState& rs, layout::ParticleTile& tile, Counters& c, bool fused) {
  layout::TileBuffer& cur = tile.current();
  if (!cur.ordered) throw LayoutError("tile " + triple(tile.home_tile) + " entered the write-back without an ordered buffer");
  const bool batched = is_batched(config_.variant.interp_supply);
  const bool wall = !config_.virtual_time;

  auto t0 = Clock::now();
  layout::tail_bin(tile, geom_);
  c.layout1 += static_cast<std::int64_t>(cur.tail_length());
  layout::TileBuffer& next = tile.next();
  layout::begin_write(next, tile.n_cells);
  if (wall) c.wall_sort1 += seconds_since(t0);

  layout::LaneRecords lanes{};
  std::array<CellId, kernels::kBatch> cells{};
  for (int cell = 0; cell < tile.n_cells; ++cell) {
    // Ordered residents first, then the tail entries binned to this cell.
    auto& stream = rs.stream;
    stream.clear();
    const layout::Segment seg = cur.meta[static_cast<std::size_t>(cell)];
    for (std::size_t s = seg.start; s < seg.start + seg.length; ++s) stream.push_back(s);
    for (std::size_t s : tile.bins.cell(cell)) stream.push_back(s);

    const Int3 home = tile.global_cell(cell);
    const std::size_t start = next.ptr_ord;
    for (std::size_t b = 0; b < stream.size(); b += kernels::kBatch) {
      const int n = static_cast<int>(std::min<std::size_t>(kernels::kBatch, stream.size() - b));
      for (int i = 0; i < n; ++i) lanes[static_cast<std::size_t>(i)] = cur.soa.get(stream[b + static_cast<std::size_t>(i)]);
      push_lanes(rs, lanes, n, batched, cells, c);
      const layout::ClassMasks m =
          layout::classify(std::span<const CellId>(cells.data(), static_cast<std::size_t>(n)), home, decomp_, rs.rank);
      layout::compact_store(next, lanes, n, m.stay);
      layout::append_disordered(next, lanes, n, m.move, m.leaving);
      if (fused && m.n_leaving > 0) {
        for (int i = 0; i < n; ++i) {
          if (!m.leaving[static_cast<std::size_t>(i)]) continue;
          rs.exchange.route_migrant(lanes[static_cast<std::size_t>(i)], cells[static_cast<std::size_t>(i)].idx, rs.tiles);
          ++c.fused_routed;
        }
      }
    }
    layout::finalize_meta(next, cell, start);
  }
}

void Simulation::phase1_flat(RankState& rs, layout::ParticleTile& tile, Counters& c, bool fused) {
  const InterpSupply supply = config_.variant.interp_supply;
  const bool batched = is_batched(supply);
  const bool wall = !config_.virtual_time;

  std::vector<layout::Segment> segments;
  std::vector<std::size_t> perm;
  bool by_cell = false;
  auto t0 = Clock::now();
  if (is_explicit_reorder(supply)) {
    const auto n = static_cast<std::int64_t>(tile.current().ptr_ord);
    layout::explicit_reorder(tile, geom_);
    segments = tile.current().meta;
    c.layout1 += 2 * n;
    by_cell = true;
  } else if (is_index_sorted(supply)) {
    perm = layout::index_sort(tile.current(), tile, geom_, segments);
    c.layout1 += static_cast<std::int64_t>(perm.size());
    by_cell = true;
  }
  if (wall) c.wall_sort1 += seconds_since(t0);

  layout::TileBuffer& cur = tile.current();
  layout::LaneRecords lanes{};
  std::array<CellId, kernels::kBatch> cells{};
  std::array<std::size_t, kernels::kBatch> slots{};

  auto finish = [&](int n, const Int3* home) {
    for (int i = 0; i < n; ++i) {
      const auto li = static_cast<std::size_t>(i);
      const Int3 h = home ? *home : cell_of(cur.soa.get(slots[li]).position(), geom_, lanes[li].id).idx;
      const layout::MoveClass k = layout::classify_one(cells[li], h, decomp_, rs.rank);
      const bool leaving = k == layout::MoveClass::OtherTile || k == layout::MoveClass::Remote;
      cur.soa.set(slots[li], lanes[li]);
      cur.leaving[slots[li]] = leaving ? 1 : 0;
      if (fused && leaving) {
        rs.exchange.route_migrant(lanes[li], cells[li].idx, rs.tiles);
        ++c.fused_routed;
      }
    }
  };

  if (!by_cell) {
    for (std::size_t s = 0; s < cur.ptr_ord; ++s) {
      slots[0] = s;
      lanes[0] = cur.soa.get(s);
      push_lanes(rs, lanes, 1, false, cells, c);
      finish(1, nullptr);
    }
  } else {
    for (int cell = 0; cell < tile.n_cells; ++cell) {
      const layout::Segment seg = segments[static_cast<std::size_t>(cell)];
      const Int3 home = tile.global_cell(cell);
      for (std::size_t b = 0; b < seg.length; b += kernels::kBatch) {
        const int n = static_cast<int>(std::min<std::size_t>(kernels::kBatch, seg.length - b));
        for (int i = 0; i < n; ++i) {
          const std::size_t at = seg.start + b + static_cast<std::size_t>(i);
          slots[static_cast<std::size_t>(i)] = perm.empty() ? at : perm[at];
          lanes[static_cast<std::size_t>(i)] = cur.soa.get(slots[static_cast<std::size_t>(i)]);
        }
        push_lanes(rs, lanes, n, batched, cells, c);
        finish(n, &home);
      }
    }
  }
  cur.ordered = false;
}

// ---------------------------------------------------------------------------
// Phase 2: deposition

void Simulation::grouped_deposit(RankState& rs, const layout::ParticleTile& tile, const layout::TileBuffer& buf,
                                 std::size_t begin, std::size_t end, Counters& c) const {
  if (end <= begin) return;
  // Bin by post-push cell over the tile box widened by one cell per side,
  // which covers every cell a tile particle can reach in one step.
  const Int3 ext{tile.shape[0] + 2, tile.shape[1] + 2, tile.shape[2] + 2};
  const auto n_keys = static_cast<std::size_t>(product(ext));
  auto& sc = rs.scratch;
  const std::size_t n = end - begin;
  const auto t0 = Clock::now();
  sc.keys.resize(n);
  sc.start.assign(n_keys + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t s = begin + i;
    const CellId cell = cell_of({buf.soa.x[s], buf.soa.y[s], buf.soa.z[s]}, geom_, buf.soa.id[s]);
    Int3 d{};
    for (int a = 0; a < 3; ++a) {
      const int na = geom_.n_cell[a];
      d[a] = ((cell.idx[a] - tile.origin[a] + 1) % na + na) % na;
      if (d[a] >= ext[a]) {
        throw LayoutError("particle " + std::to_string(buf.soa.id[s]) + " in cell " + triple(cell.idx) +
                          " is outside the deposit box of tile " + triple(tile.home_tile));
      }
    }
    const auto key = static_cast<std::uint32_t>(flatten(d[0], d[1], d[2], ext));
    sc.keys[i] = key;
    ++sc.start[key + 1];
  }
  for (std::size_t k = 0; k < n_keys; ++k) sc.start[k + 1] += sc.start[k];
  if (sc.soa.capacity() < n) sc.soa.allocate(std::max(n, 2 * sc.soa.capacity()));
  std::vector<std::uint32_t> fill(sc.start.begin(), sc.start.end() - 1);
  for (std::size_t i = 0; i < n; ++i) sc.soa.copy_from(fill[sc.keys[i]]++, buf.soa, begin + i);
  c.layout2 += static_cast<std::int64_t>(n);
  if (!config_.virtual_time) c.wall_sort2 += seconds_since(t0);
  for (std::size_t k = 0; k < n_keys; ++k) {
    const std::size_t len = sc.start[k + 1] - sc.start[k];
    if (len == 0) continue;
    kernels::deposit_batch(sc.soa.span(sc.start[k], len), config_.q, rs.fields, rs.frame, config_.order);
    c.batches2 += batches_of(len);
  }
  c.n2 += static_cast<std::int64_t>(n);
}

void Simulation::phase2_tile(RankState& rs, layout::ParticleTile& tile, Counters& c) {
  const bool sow = is_sow(config_.variant.interp_supply);
  const layout::TileBuffer& buf = sow ? tile.next() : tile.current();
  const DepositMode mode = config_.variant.deposit_mode;
  const double q = config_.q;

  auto scalar_range = [&](std::size_t b, std::size_t e) {
    for (std::size_t s = b; s < e; ++s) {
      kernels::deposit_scalar({buf.soa.x[s], buf.soa.y[s], buf.soa.z[s]}, {buf.soa.ux[s], buf.soa.uy[s], buf.soa.uz[s]},
                              q, buf.soa.w[s], rs.fields, rs.frame, config_.order, mode == DepositMode::ScalarAtomic);
    }
    c.scalar2 += static_cast<std::int64_t>(e - b);
    c.n2 += static_cast<std::int64_t>(e - b);
  };
  auto segments = [&]() {
    for (const layout::Segment& seg : buf.meta) {
      if (seg.length == 0) continue;
      kernels::deposit_batch(buf.soa.span(seg.start, seg.length), q, rs.fields, rs.frame, config_.order);
      c.batches2 += batches_of(seg.length);
      c.n2 += static_cast<std::int64_t>(seg.length);
    }
  };

  switch (mode) {
    case DepositMode::ScalarAtomic:
      scalar_range(0, buf.ptr_ord);
      scalar_range(buf.ptr_dis, buf.capacity());
      break;
    case DepositMode::BatchedIndex:
      grouped_deposit(rs, tile, buf, 0, buf.ptr_ord, c);
      break;
    case DepositMode::BatchedSowTailBin:
      segments();
      grouped_deposit(rs, tile, buf, buf.ptr_dis, buf.capacity(), c);
      break;
    case DepositMode::BatchedSowTailScalar:
      segments();
      scalar_range(buf.ptr_dis, buf.capacity());
      break;
  }
}

// ---------------------------------------------------------------------------
// Field solve

double Simulation::field_step(RankState& rs, std::uint32_t step) {
  const std::uint32_t base = step * 4u;
  const int r = rs.rank;
  const double cost = config_.cost.vt_field * static_cast<double>(product(decomp_.rank_extent()));
  double waited = exchanger_->reduce_guards(r, rs.fields, {Component::Jx, Component::Jy, Component::Jz}, base);
  solver::advance_B_half(rs.fields, geom_.dx, dt_);
  fabric_->advance(r, cost);
  waited += exchanger_->halo_exchange(r, rs.fields, {Component::Bx, Component::By, Component::Bz}, base + 1);
  solver::advance_E_full(rs.fields, geom_.dx, dt_);
  fabric_->advance(r, cost);
  waited += exchanger_->halo_exchange(r, rs.fields, {Component::Ex, Component::Ey, Component::Ez}, base + 2);
  solver::advance_B_half(rs.fields, geom_.dx, dt_);
  fabric_->advance(r, cost);
  waited += exchanger_->halo_exchange(r, rs.fields, {Component::Bx, Component::By, Component::Bz}, base + 3);
  return 3.0 * cost + waited;
}

// ---------------------------------------------------------------------------
// One rank, one step

metrics::StepMetrics Simulation::step_rank(int r, std::uint32_t step, std::string& phase) {
  RankState& rs = ranks_[static_cast<std::size_t>(r)];
  const CostModel& cost = config_.cost;
  const CommMode mode = config_.variant.comm.mode;
  const bool bsp = mode == CommMode::Bsp;
  const bool sow = is_sow(config_.variant.interp_supply);
  const bool wall = !config_.virtual_time;
  fabric::RankFabric& fab = *fabric_;

  metrics::StepMetrics m;
  m.step = static_cast<std::int64_t>(step);
  Counters c;
  rs.exchange.clear();
  for (Component j : kJ) rs.fields[j].fill(0.0);

  // Phase 1
  auto t0 = Clock::now();
  for (auto& tile : rs.tiles) {
    phase = "interpolation, tile " + triple(tile.home_tile);
    if (sow) {
      phase1_sow(rs, tile, c, !bsp);
    } else {
      phase1_flat(rs, tile, c, !bsp);
    }
  }
  double t_interp = 0.0;
  if (wall) {
    t_interp = seconds_since(t0);
    m.t_sort += c.wall_sort1;
    m.t_kernel += t_interp - c.wall_sort1;
  } else {
    const double prep = cost.vt_prep * static_cast<double>(c.n1);
    const double sort = cost.vt_sort * static_cast<double>(c.layout1) + cost.vt_pack * static_cast<double>(c.fused_routed);
    const double kernel = cost.vt_kernel_scalar * static_cast<double>(c.scalar1) +
                          cost.vt_kernel_batched * kernels::kBatch * static_cast<double>(c.batches1) + cost.vt_interp_fixed;
    const double reduce = cost.vt_reduce * static_cast<double>(c.n1);
    m.t_prep += prep;
    m.t_sort += sort;
    m.t_kernel += kernel;
    m.t_reduce += reduce;
    t_interp = prep + sort + kernel + reduce;
  }
  fab.advance(r, t_interp);
  m.t_interpolation = t_interp;

  double t_issue = 0.0;
  double t_wait = 0.0;
  double t_pack = 0.0;
  if (!bsp) {
    phase = "emit";
    t0 = Clock::now();
    t_issue = rs.exchange.emit(fab, mode, step);
    if (wall) t_issue = seconds_since(t0);
  }

  // Phase 2
  t0 = Clock::now();
  for (auto& tile : rs.tiles) {
    phase = "deposition, tile " + triple(tile.home_tile);
    phase2_tile(rs, tile, c);
  }
  double t_dep = 0.0;
  if (wall) {
    t_dep = seconds_since(t0);
    m.t_sort += c.wall_sort2;
    m.t_kernel += t_dep - c.wall_sort2;
  } else {
    const double prep = cost.vt_prep * static_cast<double>(c.n2);
    const double sort = cost.vt_sort * static_cast<double>(c.layout2);
    const double kernel = cost.vt_kernel_scalar * static_cast<double>(c.scalar2) +
                          cost.vt_kernel_batched * kernels::kBatch * static_cast<double>(c.batches2) + cost.vt_deposit_fixed;
    const double reduce = cost.vt_reduce * static_cast<double>(c.n2);
    m.t_prep += prep;
    m.t_sort += sort;
    m.t_kernel += kernel;
    m.t_reduce += reduce;
    t_dep = prep + sort + kernel + reduce;
  }
  fab.advance(r, t_dep);
  m.t_deposit = t_dep;

  std::vector<ParticleRecord> inbound;
  auto converge = [&](bool overlapped) {
    phase = "converge";
    double w = 0.0;
    const auto tw = Clock::now();
    inbound = rs.exchange.converge(fab, mode, overlapped, step, &w);
    t_wait += wall ? seconds_since(tw) : w;
  };
  const bool overlapped = mode == CommMode::TwoSided;
  if (!bsp && config_.variant.comm.sync_point == SyncPoint::PostDeposit) converge(overlapped);

  phase = "field solve";
  t0 = Clock::now();
  m.t_field = field_step(rs, step);
  if (wall) m.t_field = seconds_since(t0);

  if (!bsp && config_.variant.comm.sync_point == SyncPoint::PostFieldSolve) converge(overlapped);

  if (bsp) {
    // Standalone scan over every stored particle, packing the flagged leavers.
    phase = "scan and pack";
    t0 = Clock::now();
    std::int64_t scanned = 0;
    for (auto& tile : rs.tiles) {
      const layout::TileBuffer& buf = sow ? tile.next() : tile.current();
      auto visit = [&](std::size_t s) {
        if (!buf.leaving[s]) return;
        const ParticleRecord p = buf.soa.get(s);
        rs.exchange.route_migrant(p, cell_of(p.position(), geom_, p.id).idx, rs.tiles);
      };
      for (std::size_t s = 0; s < buf.ptr_ord; ++s) visit(s);
      for (std::size_t s = buf.ptr_dis; s < buf.capacity(); ++s) visit(s);
      scanned += static_cast<std::int64_t>(buf.size());
    }
    const auto routed = static_cast<double>(rs.exchange.local_routed() + rs.exchange.remote_routed());
    t_pack = wall ? seconds_since(t0) : cost.vt_scan * static_cast<double>(scanned) + cost.vt_pack * routed;
    fab.advance(r, wall ? 0.0 : t_pack);
    phase = "emit";
    t0 = Clock::now();
    t_issue = rs.exchange.emit(fab, mode, step);
    if (wall) t_issue = seconds_since(t0);
    converge(false);
  }

  // Post-process: deliver arrivals, drop leavers, absorb inboxes.
  phase = "merge";
  t0 = Clock::now();
  rs.exchange.deliver(inbound, rs.tiles);
  std::int64_t tail = 0;
  for (auto& tile : rs.tiles) {
    phase = "merge, tile " + triple(tile.home_tile);
    if (sow) {
      layout::TileBuffer& next = tile.next();
      layout::truncate_and_compact_tail(next);
      layout::merge_inbox(tile, next);
      layout::swap_buffers(tile);
    } else {
      layout::TileBuffer& cur = tile.current();
      layout::remove_flagged_flat(cur);
      layout::merge_inbox(tile, cur);
    }
    tail += static_cast<std::int64_t>(tile.current().tail_length());
  }
  const auto local = static_cast<double>(rs.exchange.local_routed());
  const double t_post =
      wall ? seconds_since(t0) : cost.vt_unpack * (static_cast<double>(inbound.size()) + local);
  if (!wall) fab.advance(r, t_post);

  m.t_pack = t_pack;
  m.t_issue = t_issue;
  m.t_wait = t_wait;
  m.t_wait_max = t_wait;
  m.t_post_process = t_post;
  m.t_redistribute = t_pack + t_issue + t_wait + t_post;
  m.n_particles = c.n1;
  m.n_local_migrants = static_cast<std::int64_t>(rs.exchange.local_routed());
  m.n_remote_migrants = static_cast<std::int64_t>(rs.exchange.remote_routed());
  m.n_tail = tail;
  m.layout_work = c.layout1 + c.layout2;
  m.flops_interp = metrics::kFlopsInterp * static_cast<double>(c.n1);
  m.flops_deposit = metrics::kFlopsDeposit * static_cast<double>(c.n2);
  return m;
}

// ---------------------------------------------------------------------------

metrics::StepMetrics Simulation::step() {
  const int R = rank_count();
  const auto epoch = static_cast<std::uint32_t>(step_);
  std::vector<metrics::StepMetrics> per(static_cast<std::size_t>(R));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(R));
  std::mutex first_mu;
  int first_failed = -1;

  auto worker = [&](int r) {
    std::string phase = "start";
    try {
      try {
        per[static_cast<std::size_t>(r)] = step_rank(r, epoch, phase);
      } catch (...) {
        rethrow_with("rank " + std::to_string(r) + ", step " + std::to_string(step_) + ", " + phase + ": ");
      }
    } catch (...) {
      errors[static_cast<std::size_t>(r)] = std::current_exception();
      {
        std::lock_guard<std::mutex> lock(first_mu);
        if (first_failed < 0) first_failed = r;
      }
      fabric_->abort("rank " + std::to_string(r) + " failed");
    }
    fabric_->worker_done();
  };

  fabric_->start_workers(R);
  if (R == 1) {
    worker(0);
  } else {
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(R));
    for (int r = 0; r < R; ++r) threads.emplace_back(worker, r);
    for (auto& t : threads) t.join();
  }
  if (first_failed >= 0) std::rethrow_exception(errors[static_cast<std::size_t>(first_failed)]);

  for (int r = 0; r < R; ++r) ranks_[static_cast<std::size_t>(r)].last = per[static_cast<std::size_t>(r)];
  metrics::StepMetrics merged = metrics::merge_ranks(per);
  merged.step = step_;
  ++step_;
  return merged;
}

RunReport Simulation::run(bool record_diagnostics, const std::function<void(const Simulation&)>& after_step) {
  RunReport report;
  if (record_diagnostics) report.diagnostics.push_back(diagnostics());
  const int total = std::max(config_.warmup, 0) + std::max(config_.steps, 0);
  for (int s = 0; s < total; ++s) {
    metrics::StepMetrics m = step();
    if (s >= config_.warmup) report.steps.push_back(m);
    if (record_diagnostics) report.diagnostics.push_back(diagnostics());
    if (after_step) after_step(*this);
  }
  if (!report.steps.empty()) {
    double t = 0.0;
    double n = 0.0;
    for (const auto& m : report.steps) {
      t += m.t_particle();
      n += static_cast<double>(m.n_particles);
    }
    report.t_steps = t / static_cast<double>(report.steps.size());
    n /= static_cast<double>(report.steps.size());
    if (report.t_steps > 0.0 && n > 0.0) report.throughput = metrics::pps_cpp(n, report.t_steps, config_.frequency_hz);
  }
  report.checksum = checksum();
  return report;
}

// ---------------------------------------------------------------------------
// State access

std::vector<ParticleRecord> Simulation::particles() const {
  std::vector<ParticleRecord> out;
  for (const auto& rs : ranks_) {
    for (const auto& tile : rs.tiles) {
      auto part = layout::collect(tile);
      out.insert(out.end(), part.begin(), part.end());
    }
  }
  std::sort(out.begin(), out.end(), [](const ParticleRecord& a, const ParticleRecord& b) { return a.id < b.id; });
  return out;
}

FieldSet Simulation::gather_fields() const {
  FieldSet out = allocate_fields(geom_.n_cell, 0);
  const Int3 ext = decomp_.rank_extent();
  for (const auto& rs : ranks_) {
    const Int3 o = decomp_.rank_origin(rs.rank);
    for (int comp = 0; comp < 9; ++comp) {
      const auto c = static_cast<Component>(comp);
      const NodeArray& src = rs.fields[c];
      NodeArray& dst = out[c];
      for (int k = 0; k < ext[2]; ++k)
        for (int j = 0; j < ext[1]; ++j)
          for (int i = 0; i < ext[0]; ++i) dst(o[0] + i, o[1] + j, o[2] + k) = src(i, j, k);
    }
  }
  return out;
}

void Simulation::set_fields(const FieldSet& global) {
  if (global.interior() != geom_.n_cell) throw ConfigError("set_fields expects the global grid");
  const Int3 n = geom_.n_cell;
  auto wrap = [](int v, int m) { return ((v % m) + m) % m; };
  for (auto& rs : ranks_) {
    const Int3 o = decomp_.rank_origin(rs.rank);
    for (int comp = 0; comp < 9; ++comp) {
      const auto c = static_cast<Component>(comp);
      NodeArray& dst = rs.fields[c];
      const int g = dst.guard();
      const Int3 ext = dst.interior();
      for (int k = -g; k < ext[2] + g; ++k)
        for (int j = -g; j < ext[1] + g; ++j)
          for (int i = -g; i < ext[0] + g; ++i) {
            dst(i, j, k) = global[c](wrap(o[0] + i, n[0]), wrap(o[1] + j, n[1]), wrap(o[2] + k, n[2]));
          }
    }
  }
}

metrics::Diagnostics Simulation::diagnostics() const {
  const auto ps = particles();
  metrics::Diagnostics d = metrics::particle_diagnostics(ps, config_.q, config_.m);
  d.field = metrics::field_energy(gather_fields(), geom_);
  return d;
}

std::uint64_t Simulation::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& p : particles()) mix(&p, sizeof(p));
  const FieldSet f = gather_fields();
  for (int comp = 0; comp < 9; ++comp) {
    const NodeArray& a = f[static_cast<Component>(comp)];
    mix(a.data(), a.size() * sizeof(double));
  }
  return h;
}

}  // namespace sowpic::pipeline
