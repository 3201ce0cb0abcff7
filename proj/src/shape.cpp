#include "sowpic/shape.hpp"

namespace sowpic::shape {

std::pair<int, double> anchor_and_fraction(double coord, int axis, const GridGeometry& geom, int order) {
  return anchor_and_fraction(cell_coordinate(coord, axis, geom), order);
}

StencilWeights stencil_weights_3d(const AxisWeights& wx, const AxisWeights& wy, const AxisWeights& wz) {
  StencilWeights out;
  out.anchor = {wx.i0, wy.i0, wz.i0};
  out.width = wx.width;
  out.K = wx.width * wx.width * wx.width;
  fill_stencil(wx, wy, wz, out.w.data());
  return out;
}

}  // namespace sowpic::shape
