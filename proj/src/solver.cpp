#include "sowpic/solver.hpp"

#include <cmath>
#include <cstring>
#include <string>

namespace sowpic::solver {

namespace {

int wrap(int v, int n) {
  const int m = v % n;
  return m < 0 ? m + n : m;
}

template <typename F>
void for_each_node(const NodeArray& a, bool guards_only, F&& fn) {
  const int g = a.guard();
  const Int3& n = a.interior();
  for (int k = -g; k < n[2] + g; ++k)
    for (int j = -g; j < n[1] + g; ++j)
      for (int i = -g; i < n[0] + g; ++i) {
        const bool inside = i >= 0 && j >= 0 && k >= 0 && i < n[0] && j < n[1] && k < n[2];
        if (guards_only && inside) continue;
        fn(i, j, k);
      }
}

std::vector<std::byte> to_bytes(const std::vector<double>& v) {
  std::vector<std::byte> out(v.size() * sizeof(double));
  std::memcpy(out.data(), v.data(), out.size());
  return out;
}

std::vector<double> from_bytes(std::span<const std::byte> b) {
  std::vector<double> out(b.size() / sizeof(double));
  std::memcpy(out.data(), b.data(), out.size() * sizeof(double));
  return out;
}

}  // namespace

double compute_dt(const GridGeometry& g, double dt_safety) {
  double s = 0.0;
  for (int a = 0; a < 3; ++a) s += 1.0 / (g.dx[a] * g.dx[a]);
  return dt_safety / (constants::c * std::sqrt(s));
}

void advance_B_half(FieldSet& f, const Vec3& dx, double dt) {
  const Int3 n = f.interior();
  const double h = 0.5 * dt;
  const double cx = 1.0 / (2.0 * dx[0]), cy = 1.0 / (2.0 * dx[1]), cz = 1.0 / (2.0 * dx[2]);
  for (int k = 0; k < n[2]; ++k)
    for (int j = 0; j < n[1]; ++j)
      for (int i = 0; i < n[0]; ++i) {
        const double dEz_dy = (f.ez(i, j + 1, k) - f.ez(i, j - 1, k)) * cy;
        const double dEy_dz = (f.ey(i, j, k + 1) - f.ey(i, j, k - 1)) * cz;
        const double dEx_dz = (f.ex(i, j, k + 1) - f.ex(i, j, k - 1)) * cz;
        const double dEz_dx = (f.ez(i + 1, j, k) - f.ez(i - 1, j, k)) * cx;
        const double dEy_dx = (f.ey(i + 1, j, k) - f.ey(i - 1, j, k)) * cx;
        const double dEx_dy = (f.ex(i, j + 1, k) - f.ex(i, j - 1, k)) * cy;
        f.bx(i, j, k) -= h * (dEz_dy - dEy_dz);
        f.by(i, j, k) -= h * (dEx_dz - dEz_dx);
        f.bz(i, j, k) -= h * (dEy_dx - dEx_dy);
      }
}

void advance_E_full(FieldSet& f, const Vec3& dx, double dt) {
  const Int3 n = f.interior();
  const double c2 = constants::c * constants::c;
  const double inv_eps0 = 1.0 / constants::eps0;
  const double cx = 1.0 / (2.0 * dx[0]), cy = 1.0 / (2.0 * dx[1]), cz = 1.0 / (2.0 * dx[2]);
  for (int k = 0; k < n[2]; ++k)
    for (int j = 0; j < n[1]; ++j)
      for (int i = 0; i < n[0]; ++i) {
        const double dBz_dy = (f.bz(i, j + 1, k) - f.bz(i, j - 1, k)) * cy;
        const double dBy_dz = (f.by(i, j, k + 1) - f.by(i, j, k - 1)) * cz;
        const double dBx_dz = (f.bx(i, j, k + 1) - f.bx(i, j, k - 1)) * cz;
        const double dBz_dx = (f.bz(i + 1, j, k) - f.bz(i - 1, j, k)) * cx;
        const double dBy_dx = (f.by(i + 1, j, k) - f.by(i - 1, j, k)) * cx;
        const double dBx_dy = (f.bx(i, j + 1, k) - f.bx(i, j - 1, k)) * cy;
        f.ex(i, j, k) += dt * (c2 * (dBz_dy - dBy_dz) - f.jx(i, j, k) * inv_eps0);
        f.ey(i, j, k) += dt * (c2 * (dBx_dz - dBz_dx) - f.jy(i, j, k) * inv_eps0);
        f.ez(i, j, k) += dt * (c2 * (dBy_dx - dBx_dy) - f.jz(i, j, k) * inv_eps0);
      }
}

void fill_periodic_guards(NodeArray& a) {
  const Int3 n = a.interior();
  for_each_node(a, true, [&](int i, int j, int k) { a(i, j, k) = a(wrap(i, n[0]), wrap(j, n[1]), wrap(k, n[2])); });
}

void fold_periodic_guards(NodeArray& a) {
  const Int3 n = a.interior();
  for_each_node(a, true, [&](int i, int j, int k) {
    a(wrap(i, n[0]), wrap(j, n[1]), wrap(k, n[2])) += a(i, j, k);
  });
  a.zero_guards();
}

// ---------------------------------------------------------------------------

FieldExchanger::FieldExchanger(const layout::Decomposition& decomp, fabric::RankFabric* fabric)
    : decomp_(&decomp), fabric_(fabric), ranks_(decomp.rank_count()) {
  const GridGeometry& g = decomp.geometry();
  const Int3 ext = decomp.rank_extent();
  for (int a = 0; a < 3; ++a) {
    if (ext[a] < g.guard) {
      throw ConfigError("rank box of " + std::to_string(ext[a]) + " cells on axis " + std::to_string(a) +
                        " is thinner than the guard depth " + std::to_string(g.guard));
    }
  }
  plans_.resize(static_cast<std::size_t>(ranks_) * ranks_);
  NodeArray shape(ext, g.guard);
  for (int r = 0; r < ranks_; ++r) {
    const Int3 o = decomp.rank_origin(r);
    for_each_node(shape, true, [&](int i, int j, int k) {
      const Int3 global{wrap(o[0] + i, g.n_cell[0]), wrap(o[1] + j, g.n_cell[1]), wrap(o[2] + k, g.n_cell[2])};
      const int s = decomp.owner_of_cell(global);
      const Int3 so = decomp.rank_origin(s);
      auto& p = plans_[static_cast<std::size_t>(r) * ranks_ + s];
      p.src.push_back(static_cast<std::uint32_t>(shape.index(global[0] - so[0], global[1] - so[1], global[2] - so[2])));
      p.dst.push_back(static_cast<std::uint32_t>(shape.index(i, j, k)));
    });
  }
  if (fabric_ && ranks_ > 1) {
    for (int r = 0; r < ranks_; ++r) {
      for (int s : decomp.neighbor_ranks(r)) {
        const std::size_t n = std::max(plan(r, s).src.size(), plan(s, r).src.size());
        fabric_->register_region(r, s, n * 3 * sizeof(double), fabric::Namespace::Fields);
      }
    }
  }
}

const PairPlan& FieldExchanger::plan(int receiver, int sender) const {
  return plans_[static_cast<std::size_t>(receiver) * ranks_ + sender];
}

double FieldExchanger::halo_exchange(int rank, FieldSet& f, std::initializer_list<Component> comps,
                                     std::uint32_t epoch) {
  const auto& nbrs = decomp_->neighbor_ranks(rank);
  if (!nbrs.empty()) {
    std::vector<std::vector<std::byte>> payloads;
    std::vector<fabric::PutEntry> entries;
    payloads.reserve(nbrs.size());
    for (int r : nbrs) {
      const PairPlan& p = plan(r, rank);
      std::vector<double> v;
      v.reserve(p.src.size() * comps.size());
      for (Component c : comps)
        for (auto idx : p.src) v.push_back(f[c].data()[idx]);
      payloads.push_back(to_bytes(v));
      entries.push_back({{r, rank, fabric::Namespace::Fields}, payloads.back()});
    }
    fabric_->batch_put(rank, entries, epoch, fabric::Namespace::Fields);
  }
  const PairPlan& self = plan(rank, rank);
  for (Component c : comps) {
    double* d = f[c].data();
    for (std::size_t i = 0; i < self.src.size(); ++i) d[self.dst[i]] = d[self.src[i]];
  }
  if (nbrs.empty()) return 0.0;
  const double waited = fabric_->wait_counter(rank, nbrs, epoch, fabric::Namespace::Fields).waited;
  for (int s : nbrs) {
    const PairPlan& p = plan(rank, s);
    const auto v = from_bytes(fabric_->read_region({rank, s, fabric::Namespace::Fields}, epoch));
    std::size_t at = 0;
    for (Component c : comps) {
      double* d = f[c].data();
      for (auto idx : p.dst) d[idx] = v[at++];
    }
  }
  return waited;
}

double FieldExchanger::reduce_guards(int rank, FieldSet& f, std::initializer_list<Component> comps,
                                     std::uint32_t epoch) {
  const auto& nbrs = decomp_->neighbor_ranks(rank);
  if (!nbrs.empty()) {
    std::vector<std::vector<std::byte>> payloads;
    std::vector<fabric::PutEntry> entries;
    payloads.reserve(nbrs.size());
    for (int owner : nbrs) {
      const PairPlan& p = plan(rank, owner);
      std::vector<double> v;
      v.reserve(p.dst.size() * comps.size());
      for (Component c : comps)
        for (auto idx : p.dst) v.push_back(f[c].data()[idx]);
      payloads.push_back(to_bytes(v));
      entries.push_back({{owner, rank, fabric::Namespace::Fields}, payloads.back()});
    }
    fabric_->batch_put(rank, entries, epoch, fabric::Namespace::Fields);
  }
  double waited = 0.0;
  std::vector<std::vector<double>> inbound(static_cast<std::size_t>(ranks_));
  if (!nbrs.empty()) {
    waited = fabric_->wait_counter(rank, nbrs, epoch, fabric::Namespace::Fields).waited;
    for (int s : nbrs) {
      inbound[static_cast<std::size_t>(s)] = from_bytes(fabric_->read_region({rank, s, fabric::Namespace::Fields}, epoch));
    }
  }
  // Contributions are added in ascending sender order so the sum does not
  // depend on arrival order.
  for (int s = 0; s < ranks_; ++s) {
    if (s == rank) {
      const PairPlan& p = plan(rank, rank);
      for (Component c : comps) {
        double* d = f[c].data();
        for (std::size_t i = 0; i < p.src.size(); ++i) d[p.src[i]] += d[p.dst[i]];
      }
    } else if (!inbound[static_cast<std::size_t>(s)].empty()) {
      const PairPlan& p = plan(s, rank);
      const auto& v = inbound[static_cast<std::size_t>(s)];
      std::size_t at = 0;
      for (Component c : comps) {
        double* d = f[c].data();
        for (auto idx : p.src) d[idx] += v[at++];
      }
    }
  }
  for (Component c : comps) f[c].zero_guards();
  return waited;
}

}  // namespace sowpic::solver
