#include "sowpic/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>

namespace sowpic::kernels {

namespace {

void check_stencil(const NodeArray& a, const Int3& lo, int width, const char* what) {
  const int g = a.guard();
  const Int3& n = a.interior();
  for (int d = 0; d < 3; ++d) {
    if (lo[d] < -g || lo[d] + width - 1 > n[d] - 1 + g) {
      throw OwnershipError(std::string(what) + ": stencil at node " + std::to_string(lo[d]) + " on axis " +
                           std::to_string(d) + " exceeds the guard region");
    }
  }
}

Int3 floor_cell(const Vec3& s) {
  return {static_cast<int>(std::floor(s[0])), static_cast<int>(std::floor(s[1])),
          static_cast<int>(std::floor(s[2]))};
}

}  // namespace

GatheredField gather_scalar(const Vec3& local, const FieldSet& fields, int order) {
  const shape::AxisWeights wx = shape::axis_weights(local[0], order);
  const shape::AxisWeights wy = shape::axis_weights(local[1], order);
  const shape::AxisWeights wz = shape::axis_weights(local[2], order);
  const int width = order + 1;
  check_stencil(fields.ex, {wx.i0, wy.i0, wz.i0}, width, "gather");

  const std::size_t sy = fields.ex.stride(1);
  const std::size_t sz = fields.ex.stride(2);
  const double* comp[6] = {fields.ex.data(), fields.ey.data(), fields.ez.data(),
                           fields.bx.data(), fields.by.data(), fields.bz.data()};
  double acc[6] = {0, 0, 0, 0, 0, 0};
  const std::size_t base = fields.ex.index(wx.i0, wy.i0, wz.i0);
  for (int k = 0; k < width; ++k) {
    for (int j = 0; j < width; ++j) {
      const std::size_t row = base + static_cast<std::size_t>(k) * sz + static_cast<std::size_t>(j) * sy;
      for (int i = 0; i < width; ++i) {
        const double s = wx.w[i] * wy.w[j] * wz.w[k];
        const std::size_t n = row + static_cast<std::size_t>(i);
        for (int d = 0; d < 6; ++d) acc[d] += s * comp[d][n];
      }
    }
  }
  return {{acc[0], acc[1], acc[2]}, {acc[3], acc[4], acc[5]}};
}

GatheredField gather_scalar(const ParticleRecord& p, const FieldSet& fields, const LocalFrame& frame, int order) {
  const Vec3 local = frame.to_local(p.position());
  for (double v : local) {
    if (!std::isfinite(v)) throw NumericError("non-finite position in gather", p.id);
  }
  return gather_scalar(local, fields, order);
}

void build_weight_matrix(InterpBatch& batch, std::span<const Vec3> local_positions, int order) {
  if (local_positions.empty() || local_positions.size() > static_cast<std::size_t>(kBatch)) {
    throw LayoutError("weight matrix batch must hold 1..8 particles");
  }
  const int width = shape::cell_stencil_width(order);
  batch.width = width;
  batch.K = width * width * width;
  batch.n_valid = static_cast<int>(local_positions.size());
  batch.cell = floor_cell(local_positions[0]);
  const int off = shape::cell_anchor_offset(order);
  batch.anchor = {batch.cell[0] - off, batch.cell[1] - off, batch.cell[2] - off};

  std::array<double, shape::kMaxStencil> sw;
  for (int i = 0; i < batch.n_valid; ++i) {
    const Vec3& s = local_positions[static_cast<std::size_t>(i)];
    if (floor_cell(s) != batch.cell) throw LayoutError("mixed-cell interpolation batch");
    shape::fill_stencil(shape::cell_anchored_weights(s[0], batch.cell[0], order),
                        shape::cell_anchored_weights(s[1], batch.cell[1], order),
                        shape::cell_anchored_weights(s[2], batch.cell[2], order), sw.data());
    for (int q = 0; q < batch.K; ++q) {
      batch.w_cols[static_cast<std::size_t>(q)][static_cast<std::size_t>(i)] = sw[static_cast<std::size_t>(q)];
    }
  }
  // Unused lanes contribute nothing.
  for (int i = batch.n_valid; i < kBatch; ++i) {
    for (int q = 0; q < batch.K; ++q) batch.w_cols[static_cast<std::size_t>(q)][static_cast<std::size_t>(i)] = 0.0;
  }
}

void build_grid_field_matrix(InterpBatch& batch, const FieldSet& fields) {
  const int width = batch.width;
  check_stencil(fields.ex, batch.anchor, width, "grid field matrix");
  const std::size_t sy = fields.ex.stride(1);
  const std::size_t sz = fields.ex.stride(2);
  const std::size_t base = fields.ex.index(batch.anchor[0], batch.anchor[1], batch.anchor[2]);
  int q = 0;
  for (int k = 0; k < width; ++k) {
    for (int j = 0; j < width; ++j) {
      for (int i = 0; i < width; ++i, ++q) {
        const std::size_t n = base + static_cast<std::size_t>(k) * sz + static_cast<std::size_t>(j) * sy +
                              static_cast<std::size_t>(i);
        batch.g_rows[static_cast<std::size_t>(q)] = {fields.ex.data()[n], fields.ey.data()[n], fields.ez.data()[n],
                                                     fields.bx.data()[n], fields.by.data()[n], fields.bz.data()[n],
                                                     0.0, 0.0};
      }
    }
  }
}

void interpolate_batch(InterpBatch& batch) {
  batch.F.clear();
  for (int q = 0; q < batch.K; ++q) {
    mopa_accumulate(batch.F, batch.w_cols[static_cast<std::size_t>(q)], batch.g_rows[static_cast<std::size_t>(q)]);
  }
}

PushResult boris_push(const Vec3& x, const Vec3& u, const Vec3& e, const Vec3& b, double q, double m, double dt,
                      const GridGeometry* wrap_geom, std::uint64_t particle_id) {
  const double kick = q * dt / (2.0 * m * constants::c);
  Vec3 um{u[0] + kick * e[0], u[1] + kick * e[1], u[2] + kick * e[2]};
  const double gm = gamma_of(um);
  const double tf = q * dt / (2.0 * m * gm);
  const Vec3 t{tf * b[0], tf * b[1], tf * b[2]};
  const double t2 = t[0] * t[0] + t[1] * t[1] + t[2] * t[2];
  const Vec3 s{2.0 * t[0] / (1.0 + t2), 2.0 * t[1] / (1.0 + t2), 2.0 * t[2] / (1.0 + t2)};
  const Vec3 up{um[0] + (um[1] * t[2] - um[2] * t[1]), um[1] + (um[2] * t[0] - um[0] * t[2]),
                um[2] + (um[0] * t[1] - um[1] * t[0])};
  const Vec3 uplus{um[0] + (up[1] * s[2] - up[2] * s[1]), um[1] + (up[2] * s[0] - up[0] * s[2]),
                   um[2] + (up[0] * s[1] - up[1] * s[0])};
  PushResult out;
  out.u_new = {uplus[0] + kick * e[0], uplus[1] + kick * e[1], uplus[2] + kick * e[2]};
  const double inv_gamma = 1.0 / gamma_of(out.u_new);
  const double step = constants::c * dt * inv_gamma;
  for (int a = 0; a < 3; ++a) out.x_new[a] = x[a] + out.u_new[a] * step;
  for (int a = 0; a < 3; ++a) {
    if (!std::isfinite(out.x_new[a]) || !std::isfinite(out.u_new[a])) {
      throw NumericError("non-finite state after push", particle_id);
    }
  }
  if (wrap_geom != nullptr) out.x_new = wrap_position(out.x_new, *wrap_geom);
  return out;
}

void deposit_scalar(const Vec3& x_new, const Vec3& u_new, double q, double w, FieldSet& J, const LocalFrame& frame,
                    int order, bool atomic) {
  if (w == 0.0) return;
  const double inv_gamma = 1.0 / gamma_of(u_new);
  const double f = q * w * constants::c * inv_gamma / frame.geom->cell_volume();
  const double jv[3] = {f * u_new[0], f * u_new[1], f * u_new[2]};
  if (jv[0] == 0.0 && jv[1] == 0.0 && jv[2] == 0.0) return;

  const Vec3 local = frame.to_local(x_new);
  const shape::AxisWeights wx = shape::axis_weights(local[0], order);
  const shape::AxisWeights wy = shape::axis_weights(local[1], order);
  const shape::AxisWeights wz = shape::axis_weights(local[2], order);
  const int width = order + 1;
  check_stencil(J.jx, {wx.i0, wy.i0, wz.i0}, width, "deposit");

  const std::size_t sy = J.jx.stride(1);
  const std::size_t sz = J.jx.stride(2);
  double* comp[3] = {J.jx.data(), J.jy.data(), J.jz.data()};
  const std::size_t base = J.jx.index(wx.i0, wy.i0, wz.i0);
  for (int k = 0; k < width; ++k) {
    for (int j = 0; j < width; ++j) {
      const std::size_t row = base + static_cast<std::size_t>(k) * sz + static_cast<std::size_t>(j) * sy;
      for (int i = 0; i < width; ++i) {
        const double s = wx.w[i] * wy.w[j] * wz.w[k];
        const std::size_t n = row + static_cast<std::size_t>(i);
        for (int d = 0; d < 3; ++d) {
          if (atomic) {
            std::atomic_ref<double>(comp[d][n]).fetch_add(jv[d] * s, std::memory_order_relaxed);
          } else {
            comp[d][n] += jv[d] * s;
          }
        }
      }
    }
  }
}

void deposit_batch(const ParticleSpan& segment, double q, FieldSet& J, const LocalFrame& frame, int order) {
  if (segment.n == 0) return;
  const int width = shape::cell_stencil_width(order);
  const int K = width * width * width;
  const int chunks = (K + kTile - 1) / kTile;
  const int off = shape::cell_anchor_offset(order);

  const Vec3 first = frame.to_local(segment.position(0));
  const Int3 cell = floor_cell(first);
  const Int3 anchor{cell[0] - off, cell[1] - off, cell[2] - off};
  check_stencil(J.jx, anchor, width, "batched deposit");

  std::array<MopaTile, shape::kMaxStencil / kTile> acc;
  for (int r = 0; r < chunks; ++r) acc[static_cast<std::size_t>(r)].clear();
  std::array<double, shape::kMaxStencil> sw;
  const double inv_volume = 1.0 / frame.geom->cell_volume();
  for (std::size_t p = 0; p < segment.n; ++p) {
    const Vec3 s = p == 0 ? first : frame.to_local(segment.position(p));
    if (floor_cell(s) != cell) throw LayoutError("batched deposit segment spans more than one cell");
    const Vec3 u = segment.momentum(p);
    const double f = q * segment.w[p] * constants::c / gamma_of(u) * inv_volume;
    const TileVector jp{f * u[0], f * u[1], f * u[2], 0.0, 0.0, 0.0, 0.0, 0.0};
    shape::fill_stencil(shape::cell_anchored_weights(s[0], cell[0], order),
                        shape::cell_anchored_weights(s[1], cell[1], order),
                        shape::cell_anchored_weights(s[2], cell[2], order), sw.data());
    // K is a multiple of kTile for every supported order.
    for (int r = 0; r < chunks; ++r) {
      TileVector a;
      std::copy_n(sw.data() + r * kTile, kTile, a.data());
      mopa_accumulate(acc[static_cast<std::size_t>(r)], a, jp);
    }
  }

  const std::size_t sy = J.jx.stride(1);
  const std::size_t sz = J.jx.stride(2);
  double* comp[3] = {J.jx.data(), J.jy.data(), J.jz.data()};
  const std::size_t base = J.jx.index(anchor[0], anchor[1], anchor[2]);
  int q_node = 0;
  for (int k = 0; k < width; ++k) {
    for (int j = 0; j < width; ++j) {
      for (int i = 0; i < width; ++i, ++q_node) {
        const std::size_t n = base + static_cast<std::size_t>(k) * sz + static_cast<std::size_t>(j) * sy +
                              static_cast<std::size_t>(i);
        const MopaTile& t = acc[static_cast<std::size_t>(q_node / kTile)];
        const int row = q_node % kTile;
        for (int d = 0; d < 3; ++d) comp[d][n] += t(row, d);
      }
    }
  }
}

}  // namespace sowpic::kernels
