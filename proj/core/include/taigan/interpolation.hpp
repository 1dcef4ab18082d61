#pragma once

#include <array>
#include <cmath>

#include "taigan/volume.hpp"

namespace taigan {

/// Trilinear sample at continuous voxel coordinates; zero outside the grid.
template <typename T>
double sample_trilinear(const Grid<T>& g, double x, double y, double z) {
  const Index3& d = g.dims();
  if (x <= -1.0 || y <= -1.0 || z <= -1.0 || x >= d.x || y >= d.y || z >= d.z) return 0.0;
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int z0 = static_cast<int>(std::floor(z));
  const double fx = x - x0;
  const double fy = y - y0;
  const double fz = z - z0;
  double acc = 0;
  for (int k = 0; k < 2; ++k) {
    const double wz = k ? fz : 1 - fz;
    for (int j = 0; j < 2; ++j) {
      const double wy = j ? fy : 1 - fy;
      for (int i = 0; i < 2; ++i) {
        const double wx = i ? fx : 1 - fx;
        acc += wx * wy * wz * static_cast<double>(g.value_or_zero(x0 + i, y0 + j, z0 + k));
      }
    }
  }
  return acc;
}

/// Trilinear sample and its derivative with respect to (x, y, z) in voxel units.
template <typename T>
double sample_trilinear_grad(const Grid<T>& g, double x, double y, double z, std::array<double, 3>& grad) {
  grad = {0, 0, 0};
  const Index3& d = g.dims();
  if (x <= -1.0 || y <= -1.0 || z <= -1.0 || x >= d.x || y >= d.y || z >= d.z) return 0.0;
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int z0 = static_cast<int>(std::floor(z));
  const double fx = x - x0;
  const double fy = y - y0;
  const double fz = z - z0;
  double c[2][2][2];
  for (int k = 0; k < 2; ++k)
    for (int j = 0; j < 2; ++j)
      for (int i = 0; i < 2; ++i) c[k][j][i] = static_cast<double>(g.value_or_zero(x0 + i, y0 + j, z0 + k));
  double acc = 0;
  for (int k = 0; k < 2; ++k) {
    const double wz = k ? fz : 1 - fz;
    const double dz = k ? 1 : -1;
    for (int j = 0; j < 2; ++j) {
      const double wy = j ? fy : 1 - fy;
      const double dy = j ? 1 : -1;
      for (int i = 0; i < 2; ++i) {
        const double wx = i ? fx : 1 - fx;
        const double dx = i ? 1 : -1;
        const double v = c[k][j][i];
        acc += wx * wy * wz * v;
        grad[0] += dx * wy * wz * v;
        grad[1] += wx * dy * wz * v;
        grad[2] += wx * wy * dz * v;
      }
    }
  }
  return acc;
}

/// Nearest-neighbour sample; zero outside.
template <typename T>
T sample_nearest(const Grid<T>& g, double x, double y, double z) {
  return g.value_or_zero(static_cast<int>(std::lround(x)), static_cast<int>(std::lround(y)),
                         static_cast<int>(std::lround(z)));
}

}  // namespace taigan
