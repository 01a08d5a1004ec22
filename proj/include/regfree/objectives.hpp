#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "regfree/core.hpp"

namespace regfreenet {

struct LossConfig {
  double dice_smooth = 1e-5;   // added to numerator and denominator of the Dice ratio
  double ce_epsilon = 1e-7;    // probability clamp for the log terms
  bool ce_normalize = true;    // mean over voxels; false gives the plain voxel sum
  double slope_weight = 1.0;
};

namespace detail {

template <class T>
void check_pair(std::span<const T> pred, std::span<const std::uint8_t> target) {
  if (pred.size() != target.size()) throw ShapeError("prediction and target sizes differ");
  if (pred.empty()) throw ShapeError("empty prediction");
}

}  // namespace detail

/// Soft Dice: 1 - (2 sum(y p) + s) / (sum(y^2) + sum(p^2) + s).
/// When `grad` is non-empty it receives dL/dp.
template <class T>
double dice_loss(std::span<const T> pred, std::span<const std::uint8_t> target, const LossConfig& cfg = {},
                 std::span<T> grad = {}) {
  detail::check_pair(pred, target);
  double inter = 0.0, denom = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = pred[i], y = target[i];
    inter += y * p;
    denom += y * y + p * p;
  }
  const double s = cfg.dice_smooth;
  const double num = 2.0 * inter + s;
  const double den = denom + s;
  if (!grad.empty()) {
    const double inv = 1.0 / (den * den);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      grad[i] = static_cast<T>(-(2.0 * target[i] * den - num * 2.0 * pred[i]) * inv);
    }
  }
  return 1.0 - num / den;
}

/// Binary cross-entropy with probabilities clamped to [eps, 1 - eps].
template <class T>
double ce_loss(std::span<const T> pred, std::span<const std::uint8_t> target, const LossConfig& cfg = {},
               std::span<T> grad = {}) {
  detail::check_pair(pred, target);
  const double eps = cfg.ce_epsilon;
  const double scale = cfg.ce_normalize ? 1.0 / static_cast<double>(pred.size()) : 1.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double raw = pred[i];
    const double p = std::clamp(raw, eps, 1.0 - eps);
    const bool pos = target[i] != 0;
    sum += pos ? -std::log(p) : -std::log(1.0 - p);
    if (!grad.empty()) {
      const bool clamped = raw < eps || raw > 1.0 - eps;
      grad[i] = clamped ? T{0} : static_cast<T>(scale * (pos ? -1.0 / p : 1.0 / (1.0 - p)));
    }
  }
  return sum * scale;
}

/// L1 distance between slope pairs. `grad` receives d/d(pred).
inline double slope_loss(const SlopePair& pred, const SlopePair& target, std::array<double, 2>* grad = nullptr) {
  if (!std::isfinite(pred.k1) || !std::isfinite(pred.k2) || !std::isfinite(target.k1) || !std::isfinite(target.k2)) {
    throw GeometryError("slope loss needs finite inputs");
  }
  const double d1 = pred.k1 - target.k1;
  const double d2 = pred.k2 - target.k2;
  if (grad) {
    auto sign = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
    *grad = {sign(d1), sign(d2)};
  }
  return std::abs(d1) + std::abs(d2);
}

struct LossBreakdown {
  double dice = 0.0;
  double ce = 0.0;
  double slope = 0.0;
  double total = 0.0;
};

/// Segmentation loss plus (optionally) the weighted slope term. Gradients are written
/// into `grad_pred` / `grad_slope` when supplied.
template <class T>
LossBreakdown total_loss(std::span<const T> seg_pred, std::span<const std::uint8_t> seg_target,
                         const SlopePair* slope_pred, const SlopePair* slope_target, bool use_spb,
                         const LossConfig& cfg = {}, std::span<T> grad_pred = {},
                         std::array<double, 2>* grad_slope = nullptr) {
  LossBreakdown out;
  if (!grad_pred.empty()) {
    if (grad_pred.size() != seg_pred.size()) throw ShapeError("gradient buffer size mismatch");
    std::vector<T> g_ce(seg_pred.size());
    out.dice = dice_loss<T>(seg_pred, seg_target, cfg, grad_pred);
    out.ce = ce_loss<T>(seg_pred, seg_target, cfg, std::span<T>(g_ce));
    for (std::size_t i = 0; i < g_ce.size(); ++i) grad_pred[i] += g_ce[i];
  } else {
    out.dice = dice_loss<T>(seg_pred, seg_target, cfg);
    out.ce = ce_loss<T>(seg_pred, seg_target, cfg);
  }
  out.total = out.dice + out.ce;
  if (use_spb) {
    if (!slope_pred || !slope_target) throw ConfigError("slope term enabled without slope prediction and target");
    std::array<double, 2> g{};
    out.slope = slope_loss(*slope_pred, *slope_target, grad_slope ? &g : nullptr);
    out.total += cfg.slope_weight * out.slope;
    if (grad_slope) *grad_slope = {cfg.slope_weight * g[0], cfg.slope_weight * g[1]};
  } else if (grad_slope) {
    *grad_slope = {0.0, 0.0};
  }
  return out;
}

}  // namespace regfreenet
