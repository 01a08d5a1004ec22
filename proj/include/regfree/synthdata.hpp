#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "regfree/core.hpp"
#include "regfree/labelgen.hpp"

// Desk-scale jaw phantoms: a row of bright cylindrical teeth on a parabolic arch over a
// bone plateau, with one tooth replaced by a (possibly tilted) implant.
//
// Axis layout: z = 0 is the occlusal side. Crowns start near the top, the bone plateau
// fills the lower part of the volume, the implant runs from the bone crest (vertex)
// downward to its base.

namespace regfreenet::synth {

inline constexpr float kAir = 0.0f;
inline constexpr float kBone = 0.3f;
inline constexpr float kTooth = 0.8f;
inline constexpr float kImplant = 1.0f;

struct PhantomSpec {
  std::uint64_t seed = 0;
  Shape3 shape{64, 64, 64};
  int n_teeth = 5;
  int gap_index = 2;
  SlopePair tilt{};
  double label_radius = 0.0;    // 0 selects max(2, round(min_dim / 16))
  double implant_radius = 0.0;  // 0 selects max(1, label_radius - 1)
  double noise_sigma = 0.02;
  Spacing spacing{0.2, 0.2, 0.2};

  double resolved_label_radius() const {
    if (label_radius > 0.0) return label_radius;
    const int m = std::min({shape.d, shape.h, shape.w});
    return std::max(2.0, std::round(m / 16.0));
  }
  double resolved_implant_radius() const {
    if (implant_radius > 0.0) return implant_radius;
    return std::max(1.0, resolved_label_radius() - 1.0);
  }
};

struct Phantom {
  VoxelVolume<float> volume;
  LandmarkTriple landmarks;
  BinaryMask label;         // cylinder of label_radius, rasterised from the landmarks
  BinaryMask implant_body;  // voxels carrying implant intensity
};

/// Slope magnitudes uniform in [min_abs, max_abs] with a random sign per component.
struct TiltRange {
  double min_abs = 0.0;
  double max_abs = 0.4;

  SlopePair sample(std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> mag(min_abs, max_abs);
    std::bernoulli_distribution neg(0.5);
    const double a = mag(rng), b = mag(rng);
    return {neg(rng) ? -a : a, neg(rng) ? -b : b};
  }
};

namespace detail {

struct Arch {
  double y0, x_center, half_width, depth;

  // Point on the arch for parameter t in [-1, 1].
  std::pair<double, double> at(double t) const {
    return {y0 + depth * (1.0 - t * t), x_center + half_width * t};
  }
};

inline double distance_to_arch(const Arch& arch, double y, double x) {
  double best = 1e300;
  for (int i = 0; i <= 200; ++i) {
    const auto [ay, ax] = arch.at(-1.0 + i / 100.0);
    best = std::min(best, (y - ay) * (y - ay) + (x - ax) * (x - ax));
  }
  return std::sqrt(best);
}

}  // namespace detail

inline Phantom generate_phantom(const PhantomSpec& spec) {
  const Shape3 s = spec.shape;
  if (s.d < 32 || s.h < 32 || s.w < 32) throw GeometryError("phantom shape must be at least 32 on every axis");
  if (spec.n_teeth < 1 || spec.gap_index < 0 || spec.gap_index >= spec.n_teeth) {
    throw GeometryError("gap index must lie in [0, n_teeth)");
  }
  SlopePair::checked(spec.tilt.k1, spec.tilt.k2);

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const double label_r = spec.resolved_label_radius();
  const double implant_r = spec.resolved_implant_radius();
  if (implant_r > label_r) throw GeometryError("implant radius exceeds label radius");

  const int crown_top = static_cast<int>(std::lround(0.15 * s.d));
  const int bone_top = static_cast<int>(std::lround(0.40 * s.d));
  const int bone_bottom = s.d - static_cast<int>(std::lround(0.08 * s.d));
  const int implant_len = static_cast<int>(std::lround(0.35 * s.d));

  const detail::Arch arch{(0.22 + 0.06 * unit(rng)) * s.h, (0.5 + 0.04 * (unit(rng) - 0.5)) * s.w,
                          (0.28 + 0.04 * unit(rng)) * s.w, (0.30 + 0.08 * unit(rng)) * s.h};
  const double band_half = 0.13 * std::min(s.h, s.w) + label_r;

  // Tooth centres evenly spaced in the arch parameter.
  std::vector<std::pair<double, double>> centres;
  for (int i = 0; i < spec.n_teeth; ++i) {
    const double t = spec.n_teeth == 1 ? 0.0 : -1.0 + 2.0 * i / (spec.n_teeth - 1);
    centres.push_back(arch.at(t));
  }

  const auto [gy, gx] = centres[static_cast<std::size_t>(spec.gap_index)];
  LandmarkTriple lm;
  lm.vertex = {bone_top, static_cast<int>(std::lround(gy)), static_cast<int>(std::lround(gx))};
  lm.base = {bone_top + implant_len, static_cast<int>(std::lround(gy + spec.tilt.k2 * implant_len)),
             static_cast<int>(std::lround(gx + spec.tilt.k1 * implant_len))};
  lm.midpoint = {(lm.vertex.z + lm.base.z) / 2, (lm.vertex.y + lm.base.y) / 2, (lm.vertex.x + lm.base.x) / 2};

  const double margin = label_r + 1.0;
  for (const Index3& p : {lm.vertex, lm.base}) {
    if (p.y < margin || p.x < margin || p.y > s.h - 1 - margin || p.x > s.w - 1 - margin || p.z >= bone_bottom) {
      throw GeometryError("implant geometry exceeds the phantom bounds");
    }
  }

  Phantom out;
  out.landmarks = lm;
  out.label = rasterize_implant(lm, s, label_r);
  out.implant_body = rasterize_implant(lm, s, implant_r);
  const BinaryMask bone_collar = rasterize_implant(lm, s, label_r + 2.0);

  VoxelVolume<float> vol(s, spec.spacing, kAir);

  // Bone plateau under the arch, widened around the implant so the implant sits in bone.
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x) {
      const bool in_band = detail::distance_to_arch(arch, y, x) <= band_half;
      for (int z = bone_top; z < bone_bottom; ++z) {
        if (in_band || bone_collar(z, y, x)) vol(z, y, x) = kBone;
      }
    }

  // Teeth: slightly jittered radius, root depth and tilt.
  const double tooth_r = 0.85 * label_r;
  for (int i = 0; i < spec.n_teeth; ++i) {
    const double r = tooth_r * (0.9 + 0.2 * unit(rng));
    const int root_end = bone_top + static_cast<int>(std::lround((0.15 + 0.15 * unit(rng)) * s.d));
    const double ty = 0.1 * (unit(rng) - 0.5), tx = 0.1 * (unit(rng) - 0.5);
    if (i == spec.gap_index) continue;
    const auto [cy, cx] = centres[static_cast<std::size_t>(i)];
    for (int z = crown_top; z <= std::min(root_end, bone_bottom - 1); ++z) {
      const double dz = z - crown_top;
      const double ccy = cy + ty * dz, ccx = cx + tx * dz;
      for (int y = std::max(0, static_cast<int>(ccy - r - 1)); y <= std::min(s.h - 1, static_cast<int>(ccy + r + 1)); ++y)
        for (int x = std::max(0, static_cast<int>(ccx - r - 1)); x <= std::min(s.w - 1, static_cast<int>(ccx + r + 1)); ++x)
          if ((y - ccy) * (y - ccy) + (x - ccx) * (x - ccx) <= r * r) vol(z, y, x) = kTooth;
    }
  }

  if (spec.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    for (auto& v : vol.data()) v = static_cast<float>(v + noise(rng));
  }

  // Implant last so its intensity is exact.
  const auto body = out.implant_body.data();
  for (std::size_t i = 0; i < body.size(); ++i)
    if (body[i]) vol.data()[i] = kImplant;

  out.volume = std::move(vol);
  return out;
}

inline Phantom generate_phantom(std::uint64_t seed, Shape3 shape, int n_teeth, int gap_index, SlopePair tilt) {
  PhantomSpec spec;
  spec.seed = seed;
  spec.shape = shape;
  spec.n_teeth = n_teeth;
  spec.gap_index = gap_index;
  spec.tilt = tilt;
  return generate_phantom(spec);
}

}  // namespace regfreenet::synth
