#pragma once

#include <span>
#include <vector>

#include "regfree/core.hpp"

namespace regfreenet {

struct Point3d {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

/// Coordinates of every set voxel, in (z, y, x) scan order.
inline std::vector<Index3> implant_coordinates(const BinaryMask& label) {
  std::vector<Index3> out;
  const Shape3& s = label.shape();
  for (int z = 0; z < s.d; ++z)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x)
        if (label(z, y, x)) out.push_back({z, y, x});
  if (out.empty()) throw GeometryError("implant label is empty");
  return out;
}

/// Least-squares slopes of x and y against the axial coordinate z:
///   k1 = (N Sxz - Sx Sz) / (N Szz - Sz^2),  k2 likewise with y.
/// Sums are accumulated in double.
inline SlopePair compute_slopes(std::span<const Point3d> pts) {
  if (pts.size() < 2) throw GeometryError("slope fit needs at least two coordinates");
  const double n = static_cast<double>(pts.size());
  double sx = 0, sy = 0, sz = 0, szz = 0, sxz = 0, syz = 0;
  for (const auto& p : pts) {
    sx += p.x;
    sy += p.y;
    sz += p.z;
    szz += p.z * p.z;
    sxz += p.x * p.z;
    syz += p.y * p.z;
  }
  const double denom = n * szz - sz * sz;
  // Exact zero for integer inputs; the relative floor catches float residue when all z agree.
  if (!(denom > 1e-12 * n * szz)) {
    throw GeometryError("implant has no axial extent (all z equal)");
  }
  return SlopePair::checked((n * sxz - sx * sz) / denom, (n * syz - sy * sz) / denom);
}

inline SlopePair compute_slopes(std::span<const Index3> coords, const Spacing& spacing = {}) {
  std::vector<Point3d> pts;
  pts.reserve(coords.size());
  for (const auto& c : coords) pts.push_back({c.x * spacing.x, c.y * spacing.y, c.z * spacing.z});
  return compute_slopes(std::span<const Point3d>(pts));
}

/// Ground-truth slopes in voxel units.
inline SlopePair slopes_from_label(const BinaryMask& label) {
  const auto coords = implant_coordinates(label);
  return compute_slopes(std::span<const Index3>(coords));
}

/// Same fit with coordinates scaled to millimetres.
inline SlopePair slopes_from_label(const BinaryMask& label, const Spacing& spacing) {
  const auto coords = implant_coordinates(label);
  return compute_slopes(std::span<const Index3>(coords), spacing);
}

}  // namespace regfreenet
