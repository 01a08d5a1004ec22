#pragma once

#include <cstdint>
#include <random>
#include <span>

#include "regfree/core.hpp"

namespace regfreenet {

struct MaskingConfig {
  double radius = 14.0;     // voxels
  float fill_value = 0.0f;  // intensity written into the masked region
  int max_offset = 5;       // training-time jitter, voxels per axis
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (!(radius >= 1.0)) throw ConfigError("masking radius must be >= 1 voxel");
    if (max_offset < 0) throw ConfigError("max_offset must be >= 0");
  }
};

/// Sweeps a disk of `radius` voxels along the vertex-to-base axis, one disk per axial
/// slice. The disk centre on slice z is linearly interpolated between vertex and base;
/// a voxel is set when its in-plane distance to that centre is <= radius.
inline BinaryMask rasterize_implant(const LandmarkTriple& lm, const Shape3& shape, double radius) {
  validate_landmarks(lm, shape);
  if (!(radius > 0.0)) throw GeometryError("implant radius must be positive");

  BinaryMask out(shape);
  const Index3 v = lm.vertex;
  const Index3 b = lm.base;
  const int z0 = std::min(v.z, b.z);
  const int z1 = std::max(v.z, b.z);
  const double r2 = radius * radius;
  const double span_z = static_cast<double>(b.z - v.z);

  for (int z = z0; z <= z1; ++z) {
    const double t = static_cast<double>(z - v.z) / span_z;
    const double cy = v.y + t * (b.y - v.y);
    const double cx = v.x + t * (b.x - v.x);
    const int y_lo = std::max(0, static_cast<int>(std::floor(cy - radius)));
    const int y_hi = std::min(shape.h - 1, static_cast<int>(std::ceil(cy + radius)));
    const int x_lo = std::max(0, static_cast<int>(std::floor(cx - radius)));
    const int x_hi = std::min(shape.w - 1, static_cast<int>(std::ceil(cx + radius)));
    for (int y = y_lo; y <= y_hi; ++y) {
      const double dy = y - cy;
      for (int x = x_lo; x <= x_hi; ++x) {
        const double dx = x - cx;
        if (dy * dy + dx * dx <= r2) out.set(z, y, x);
      }
    }
  }
  return out;
}

/// Union of the cylinders of every implant record.
inline BinaryMask rasterize_implants(std::span<const LandmarkTriple> records, const Shape3& shape, double radius) {
  if (records.empty()) throw GeometryError("no implant records");
  BinaryMask out = rasterize_implant(records.front(), shape, radius);
  for (std::size_t i = 1; i < records.size(); ++i) out = mask_union(out, rasterize_implant(records[i], shape, radius));
  return out;
}

/// Writes `config.fill_value` wherever the mask is set; every other voxel is copied.
template <class T>
VoxelVolume<T> mask_implant(const VoxelVolume<T>& volume, const BinaryMask& implant_mask, const MaskingConfig& config) {
  if (volume.shape() != implant_mask.shape()) {
    throw ShapeError("mask shape " + to_string(implant_mask.shape()) + " differs from volume " +
                     to_string(volume.shape()));
  }
  VoxelVolume<T> out = volume;
  auto dst = out.data();
  auto bits = implant_mask.data();
  const T fill = static_cast<T>(config.fill_value);
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (bits[i]) dst[i] = fill;
  }
  return out;
}

/// Shifts the mask by `offset`; voxels leaving the grid are dropped.
inline BinaryMask translate_mask(const BinaryMask& m, const Index3& offset) {
  const Shape3& s = m.shape();
  BinaryMask out(s);
  for (int z = 0; z < s.d; ++z)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        if (!m(z, y, x)) continue;
        const Index3 p{z + offset.z, y + offset.y, x + offset.x};
        if (inside(p, s)) out.set(p);
      }
  return out;
}

/// Independent uniform integer offset in [-max_offset, max_offset] per axis.
inline Index3 draw_offset(const MaskingConfig& config, std::mt19937_64& rng) {
  config.validate();
  if (config.max_offset == 0) return {};
  std::uniform_int_distribution<int> dist(-config.max_offset, config.max_offset);
  const int dz = dist(rng);
  const int dy = dist(rng);
  const int dx = dist(rng);
  return {dz, dy, dx};
}

inline BinaryMask jitter_mask(const BinaryMask& implant_mask, const MaskingConfig& config, std::mt19937_64& rng) {
  return translate_mask(implant_mask, draw_offset(config, rng));
}

}  // namespace regfreenet
