#pragma once

#include <cmath>
#include <tuple>
#include <type_traits>
#include <vector>

#include "regfree/core.hpp"

namespace regfreenet {

enum class BlendMode { uniform, gaussian };

/// Window origins along one axis: stride ceil(window * (1 - overlap)); the last origin
/// is clamped so that window touches the far boundary.
inline std::vector<int> axis_origins(int length, int window, double overlap) {
  if (window < 1) throw ConfigError("window must be positive");
  if (window > length) {
    throw ShapeError("window " + std::to_string(window) + " larger than axis length " + std::to_string(length));
  }
  if (!(overlap >= 0.0 && overlap < 1.0)) throw ConfigError("overlap must lie in [0, 1)");
  const int stride = std::max(1, static_cast<int>(std::ceil(window * (1.0 - overlap) - 1e-12)));
  std::vector<int> out{0};
  while (out.back() + window < length) out.push_back(std::min(out.back() + stride, length - window));
  return out;
}

inline std::vector<Index3> tile_plan(const Shape3& volume, const Shape3& window, double overlap) {
  const auto oz = axis_origins(volume.d, window.d, overlap);
  const auto oy = axis_origins(volume.h, window.h, overlap);
  const auto ox = axis_origins(volume.w, window.w, overlap);
  std::vector<Index3> plan;
  plan.reserve(oz.size() * oy.size() * ox.size());
  for (int z : oz)
    for (int y : oy)
      for (int x : ox) plan.push_back({z, y, x});
  return plan;
}

namespace detail {

inline std::vector<double> blend_weights(const Shape3& w, BlendMode mode) {
  std::vector<double> out(w.voxels(), 1.0);
  if (mode == BlendMode::uniform) return out;
  auto axis = [](int n) {
    std::vector<double> g(static_cast<std::size_t>(n));
    const double c = (n - 1) / 2.0, sigma = n / 8.0;
    for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] = std::exp(-0.5 * (i - c) * (i - c) / (sigma * sigma));
    return g;
  };
  const auto gz = axis(w.d), gy = axis(w.h), gx = axis(w.w);
  double peak = 0.0;
  std::size_t i = 0;
  for (int z = 0; z < w.d; ++z)
    for (int y = 0; y < w.h; ++y)
      for (int x = 0; x < w.w; ++x, ++i) {
        out[i] = gz[static_cast<std::size_t>(z)] * gy[static_cast<std::size_t>(y)] * gx[static_cast<std::size_t>(x)];
        peak = std::max(peak, out[i]);
      }
  // Floor keeps border voxels covered by a single window well defined.
  for (auto& v : out) v = std::max(v / peak, 1e-3);
  return out;
}

}  // namespace detail

/// Tiles `volume` into overlapping windows, runs `model` on each, and averages the
/// per-voxel predictions of every covering window. `model` maps a window-shaped volume
/// (and optionally its origin) to a window-shaped prediction. Volumes smaller than the
/// window are zero-padded and cropped back afterwards.
template <class T, class Model>
VoxelVolume<T> sliding_window_infer(const VoxelVolume<T>& volume, Model&& model, const Shape3& window, double overlap,
                                    BlendMode mode = BlendMode::uniform) {
  const Shape3 orig = volume.shape();
  const bool needs_pad = orig.d < window.d || orig.h < window.h || orig.w < window.w;
  VoxelVolume<T> padded;
  Index3 pad_offset{};
  if (needs_pad) std::tie(padded, pad_offset) = pad_to(volume, window);
  const VoxelVolume<T>& src = needs_pad ? padded : volume;
  const Shape3 s = src.shape();

  const auto plan = tile_plan(s, window, overlap);
  const auto weights = detail::blend_weights(window, mode);
  std::vector<double> acc(s.voxels(), 0.0), wsum(s.voxels(), 0.0);

  for (const Index3& o : plan) {
    const VoxelVolume<T> tile = crop(src, o, window);
    VoxelVolume<T> pred;
    if constexpr (std::is_invocable_v<Model, const VoxelVolume<T>&, const Index3&>) {
      pred = model(tile, o);
    } else {
      pred = model(tile);
    }
    if (pred.shape() != window) throw ShapeError("model output shape differs from window " + to_string(window));
    std::size_t i = 0;
    for (int z = 0; z < window.d; ++z)
      for (int y = 0; y < window.h; ++y)
        for (int x = 0; x < window.w; ++x, ++i) {
          const std::size_t g = linear_index(s, o.z + z, o.y + y, o.x + x);
          acc[g] += weights[i] * static_cast<double>(pred.data()[i]);
          wsum[g] += weights[i];
        }
  }

  VoxelVolume<T> out(s, volume.spacing());
  for (std::size_t i = 0; i < acc.size(); ++i) out.data()[i] = static_cast<T>(acc[i] / wsum[i]);
  if (needs_pad) return crop(out, pad_offset, orig);
  return out;
}

}  // namespace regfreenet
