#pragma once

#include <array>
#include <cmath>
#include <string>
#include <utility>

#include "sowpic/core.hpp"

namespace sowpic::shape {

inline constexpr int kMaxWidth = 4;
inline constexpr int kMaxStencil = kMaxWidth * kMaxWidth * kMaxWidth;

/// Per-axis B-spline weights relative to a base node i0.
struct AxisWeights {
  int i0 = 0;
  double xi = 0.0;
  int order = 1;
  int width = 2;  // number of populated entries in w
  std::array<double, kMaxWidth> w{};
};

/// Tensor-product weights over a width^3 node stencil, x fastest.
struct StencilWeights {
  Int3 anchor{};
  int width = 2;
  int K = 8;
  std::array<double, kMaxStencil> w{};
};

/// Anchor node and fractional offset for a coordinate given in cell units.
/// Odd orders centre the stencil on the containing cell; order 2 anchors on
/// the nearest node.
inline std::pair<int, double> anchor_and_fraction(double s, int order) {
  switch (order) {
    case 1: {
      const double f = std::floor(s);
      return {static_cast<int>(f), s - f};
    }
    case 2: {
      const double f = std::floor(s + 0.5);
      return {static_cast<int>(f) - 1, (s + 0.5) - f};
    }
    case 3: {
      const double f = std::floor(s);
      return {static_cast<int>(f) - 1, s - f};
    }
    default:
      throw ConfigError("unsupported shape order " + std::to_string(order));
  }
}

std::pair<int, double> anchor_and_fraction(double coord, int axis, const GridGeometry& geom, int order);

/// B-spline basis values of the given order (order + 1 entries, rest zero).
inline std::array<double, kMaxWidth> shape_weights(double xi, int order) {
  switch (order) {
    case 1:
      return {1.0 - xi, xi, 0.0, 0.0};
    case 2: {
      const double h = xi - 0.5;
      return {0.5 * (1.0 - xi) * (1.0 - xi), 0.75 - h * h, 0.5 * xi * xi, 0.0};
    }
    case 3: {
      const double om = 1.0 - xi;
      const double xi2 = xi * xi;
      const double xi3 = xi2 * xi;
      constexpr double sixth = 1.0 / 6.0;
      return {sixth * om * om * om, sixth * (3.0 * xi3 - 6.0 * xi2 + 4.0),
              sixth * (-3.0 * xi3 + 3.0 * xi2 + 3.0 * xi + 1.0), sixth * xi3};
    }
    default:
      throw ConfigError("unsupported shape order " + std::to_string(order));
  }
}

inline AxisWeights axis_weights(double s, int order) {
  AxisWeights out;
  const auto [i0, xi] = anchor_and_fraction(s, order);
  out.i0 = i0;
  out.xi = xi;
  out.order = order;
  out.width = order + 1;
  out.w = shape_weights(xi, order);
  return out;
}

/// Stencil width used when all particles of one cell share an anchor.
inline constexpr int cell_stencil_width(int order) { return order == 1 ? 2 : 4; }
/// Offset of the shared anchor below the cell index.
inline constexpr int cell_anchor_offset(int order) { return order == 1 ? 0 : 1; }

/// Weights embedded into the cell-anchored stencil of `cell_stencil_width`.
/// For odd orders this is identical to axis_weights(s, order).
inline AxisWeights cell_anchored_weights(double s, int cell, int order) {
  AxisWeights aw = axis_weights(s, order);
  if (order != 2) return aw;
  AxisWeights out;
  out.order = order;
  out.xi = aw.xi;
  out.width = cell_stencil_width(order);
  out.i0 = cell - cell_anchor_offset(order);
  const int shift = aw.i0 - out.i0;  // 0 or 1 when s lies in `cell`
  for (int i = 0; i < aw.width; ++i) {
    const int slot = i + shift;
    if (slot >= 0 && slot < out.width) out.w[slot] = aw.w[i];
  }
  return out;
}

/// Writes the width^3 tensor-product weights (x fastest) into `out`.
inline void fill_stencil(const AxisWeights& wx, const AxisWeights& wy, const AxisWeights& wz, double* out) {
  const int width = wx.width;
  int q = 0;
  for (int k = 0; k < width; ++k) {
    for (int j = 0; j < width; ++j) {
      const double wjk = wy.w[j] * wz.w[k];
      for (int i = 0; i < width; ++i) out[q++] = wx.w[i] * wjk;
    }
  }
}

StencilWeights stencil_weights_3d(const AxisWeights& wx, const AxisWeights& wy, const AxisWeights& wz);

}  // namespace sowpic::shape
