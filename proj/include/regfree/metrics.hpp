#pragma once

#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "regfree/core.hpp"

namespace regfreenet {

struct OverlapCounts {
  std::size_t pred = 0;
  std::size_t target = 0;
  std::size_t intersection = 0;

  std::size_t union_size() const { return pred + target - intersection; }
};

inline OverlapCounts overlap(const BinaryMask& pred, const BinaryMask& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("metric inputs differ in shape: " + to_string(pred.shape()) + " vs " + to_string(target.shape()));
  }
  OverlapCounts c;
  const auto p = pred.data();
  const auto t = target.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    c.pred += p[i];
    c.target += t[i];
    c.intersection += p[i] & t[i];
  }
  return c;
}

/// 2|P n T| / (|P| + |T|); 1 when both are empty.
inline double dice_score(const OverlapCounts& c) {
  const std::size_t denom = c.pred + c.target;
  return denom == 0 ? 1.0 : 2.0 * static_cast<double>(c.intersection) / static_cast<double>(denom);
}

/// |P n T| / |P u T|; 1 when both are empty.
inline double iou_score(const OverlapCounts& c) {
  const std::size_t u = c.union_size();
  return u == 0 ? 1.0 : static_cast<double>(c.intersection) / static_cast<double>(u);
}

inline double dice_score(const BinaryMask& pred, const BinaryMask& target) { return dice_score(overlap(pred, target)); }
inline double iou_score(const BinaryMask& pred, const BinaryMask& target) { return iou_score(overlap(pred, target)); }

/// 1 where probability > threshold (strict).
template <class T>
BinaryMask binarize(const VoxelVolume<T>& prob, double threshold = 0.5) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("binarization threshold must lie in (0, 1)");
  std::vector<std::uint8_t> bits(prob.size());
  const auto p = prob.data();
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = static_cast<double>(p[i]) > threshold ? 1 : 0;
  return BinaryMask(prob.shape(), std::move(bits));
}

/// Unweighted mean across scans.
inline double macro_mean(std::span<const double> values) {
  if (values.empty()) return 0.0;
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

}  // namespace regfreenet
