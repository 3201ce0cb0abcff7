#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>

#include "sowpic/core.hpp"
#include "sowpic/shape.hpp"

namespace sowpic::kernels {

inline constexpr int kBatch = 8;  // N = 8 particles per FP64 tile
inline constexpr int kTile = 8;   // tile is kTile x kTile
inline constexpr int kFieldCols = 6;

/// Maps global positions onto the node index space of one FieldSet whose
/// interior starts at global cell `origin`. Periodic images are unwrapped
/// toward the owned box so that guard nodes are addressed directly.
struct LocalFrame {
  const GridGeometry* geom = nullptr;
  Int3 origin{0, 0, 0};
  Int3 n_local{0, 0, 0};

  static LocalFrame whole(const GridGeometry& g) { return {&g, {0, 0, 0}, g.n_cell}; }

  /// Position in local cell units.
  Vec3 to_local(const Vec3& x) const;
};

inline Vec3 LocalFrame::to_local(const Vec3& x) const {
  Vec3 s{};
  const int g = geom->guard;
  for (int a = 0; a < 3; ++a) {
    double v = cell_coordinate(x[a], a, *geom) - origin[a];
    if (geom->periodic[a]) {
      if (v < -g) {
        v += geom->n_cell[a];
      } else if (v >= n_local[a] + g) {
        v -= geom->n_cell[a];
      }
    }
    s[a] = v;
  }
  return s;
}


// ---------------------------------------------------------------------------
// Matrix outer-product accumulate

/// 8x8 FP64 accumulator; c[i][j] stored row-major.
struct MopaTile {
  std::array<double, kTile * kTile> c{};

  double& operator()(int i, int j) { return c[static_cast<std::size_t>(i * kTile + j)]; }
  double operator()(int i, int j) const { return c[static_cast<std::size_t>(i * kTile + j)]; }
  void clear() { c.fill(0.0); }
};

using TileVector = std::array<double, kTile>;

/// c[i][j] = fma(a[i], b[j], c[i][j]) for every entry.
inline void mopa_accumulate(MopaTile& tile, const TileVector& a, const TileVector& b) {
  for (int i = 0; i < kTile; ++i) {
    const double ai = a[static_cast<std::size_t>(i)];
    double* row = &tile.c[static_cast<std::size_t>(i * kTile)];
    for (int j = 0; j < kTile; ++j) row[j] = std::fma(ai, b[static_cast<std::size_t>(j)], row[j]);
  }
}

// ---------------------------------------------------------------------------
// Interpolation

struct GatheredField {
  Vec3 e{};
  Vec3 b{};
};

/// Direct triple-sum gather of all six components at one position
/// (local cell units), loops ordered k, j, i.
GatheredField gather_scalar(const Vec3& local, const FieldSet& fields, int order);
GatheredField gather_scalar(const ParticleRecord& p, const FieldSet& fields, const LocalFrame& frame, int order);

/// One cell batch: W (8 x K), G (K x 8) and result tile F = W G.
struct InterpBatch {
  int n_valid = 0;
  Int3 cell{};    // local cell shared by all particles
  Int3 anchor{};  // local node of stencil entry q = 0
  int width = 4;
  int K = 64;
  std::array<TileVector, shape::kMaxStencil> w_cols{};  // w_cols[q][i] = W(i, q)
  std::array<TileVector, shape::kMaxStencil> g_rows{};  // g_rows[q][d] = G(q, d)
  MopaTile F{};

  double W(int i, int q) const { return w_cols[static_cast<std::size_t>(q)][static_cast<std::size_t>(i)]; }
  double G(int q, int d) const { return g_rows[static_cast<std::size_t>(q)][static_cast<std::size_t>(d)]; }
};

/// Fills W and the shared anchor from up to eight local positions of one cell.
/// Throws LayoutError for mixed-cell or oversized batches.
void build_weight_matrix(InterpBatch& batch, std::span<const Vec3> local_positions, int order);

/// Fills G from the stencil nodes at batch.anchor; columns 6 and 7 are zero.
void build_grid_field_matrix(InterpBatch& batch, const FieldSet& fields);

/// F = sum_q W[:, q] (x) G[q, :] as K tile accumulations on a cleared tile.
void interpolate_batch(InterpBatch& batch);

// ---------------------------------------------------------------------------
// Push

struct PushResult {
  Vec3 x_new{};
  Vec3 u_new{};
};

/// Relativistic Boris step on normalized momentum u = gamma v / c. When
/// `wrap_geom` is given the new position is wrapped on periodic axes.
PushResult boris_push(const Vec3& x, const Vec3& u, const Vec3& e, const Vec3& b, double q, double m, double dt,
                      const GridGeometry* wrap_geom = nullptr, std::uint64_t particle_id = 0);

inline double gamma_of(const Vec3& u) { return std::sqrt(1.0 + u[0] * u[0] + u[1] * u[1] + u[2] * u[2]); }

// ---------------------------------------------------------------------------
// Deposition

/// Structure-of-arrays view over a run of particles.
struct ParticleSpan {
  const std::uint64_t* id = nullptr;
  const double* x = nullptr;
  const double* y = nullptr;
  const double* z = nullptr;
  const double* ux = nullptr;
  const double* uy = nullptr;
  const double* uz = nullptr;
  const double* w = nullptr;
  std::size_t n = 0;

  Vec3 position(std::size_t i) const { return {x[i], y[i], z[i]}; }
  Vec3 momentum(std::size_t i) const { return {ux[i], uy[i], uz[i]}; }
};

/// J += q w v S(x) / V_cell on every stencil node; v from u_new.
void deposit_scalar(const Vec3& x_new, const Vec3& u_new, double q, double w, FieldSet& J, const LocalFrame& frame,
                    int order, bool atomic = false);

/// Batched deposition of one contiguous single-cell segment through
/// cell-local K x 8 tile accumulators, then one scatter pass into J.
void deposit_batch(const ParticleSpan& segment, double q, FieldSet& J, const LocalFrame& frame, int order);

}  // namespace sowpic::kernels
