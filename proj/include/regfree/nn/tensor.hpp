#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "regfree/core.hpp"

namespace regfreenet::nn {

/// Channel-major feature volume (C, D, H, W) for a single sample.
template <class T>
struct FeatureMap {
  int channels = 0;
  Shape3 shape{};
  std::vector<T> data;

  FeatureMap() = default;
  FeatureMap(int c, Shape3 s, T fill = T{0}) : channels(c), shape(s), data(static_cast<std::size_t>(c) * s.voxels(), fill) {}

  std::size_t spatial() const { return shape.voxels(); }
  std::size_t size() const { return data.size(); }

  T* channel(int c) { return data.data() + static_cast<std::size_t>(c) * spatial(); }
  const T* channel(int c) const { return data.data() + static_cast<std::size_t>(c) * spatial(); }

  T& at(int c, int z, int y, int x) { return channel(c)[linear_index(shape, z, y, x)]; }
  const T& at(int c, int z, int y, int x) const { return channel(c)[linear_index(shape, z, y, x)]; }

  bool same_layout(const FeatureMap& o) const { return channels == o.channels && shape == o.shape; }
};

template <class T>
FeatureMap<T> from_volume(const VoxelVolume<T>& v) {
  FeatureMap<T> f(1, v.shape());
  std::copy(v.data().begin(), v.data().end(), f.data.begin());
  return f;
}

template <class T>
VoxelVolume<T> to_volume(const FeatureMap<T>& f, int channel = 0, Spacing spacing = {}) {
  std::vector<T> data(f.channel(channel), f.channel(channel) + f.spatial());
  return VoxelVolume<T>(f.shape, spacing, std::move(data));
}

template <class T>
void add_into(FeatureMap<T>& acc, const FeatureMap<T>& g) {
  if (!acc.same_layout(g)) throw ShapeError("feature map layout mismatch in accumulation");
  for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += g.data[i];
}

/// Channel concatenation [a; b].
template <class T>
FeatureMap<T> concat(const FeatureMap<T>& a, const FeatureMap<T>& b) {
  if (a.shape != b.shape) throw ShapeError("concat of different spatial shapes");
  FeatureMap<T> out(a.channels + b.channels, a.shape);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()));
  return out;
}

template <class T>
FeatureMap<T> slice_channels(const FeatureMap<T>& f, int first, int count) {
  FeatureMap<T> out(count, f.shape);
  std::copy(f.channel(first), f.channel(first) + out.size(), out.data.begin());
  return out;
}

/// Trainable tensor with its gradient accumulator.
template <class T>
struct Parameter {
  std::string name;
  std::vector<int> dims;
  std::vector<T> value;
  std::vector<T> grad;

  Parameter() = default;
  Parameter(std::string n, std::vector<int> d) : name(std::move(n)), dims(std::move(d)) {
    std::size_t count = 1;
    for (int x : dims) count *= static_cast<std::size_t>(x);
    value.assign(count, T{0});
    grad.assign(count, T{0});
  }

  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T{0}); }

  void init_uniform(std::mt19937_64& rng, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : value) v = static_cast<T>(dist(rng));
  }
  void fill(T v) { std::fill(value.begin(), value.end(), v); }
};

template <class T>
using ParamList = std::vector<Parameter<T>*>;

template <class T>
std::size_t parameter_count(const ParamList<T>& params) {
  std::size_t n = 0;
  for (const auto* p : params) n += p->size();
  return n;
}

template <class T>
void zero_grad(const ParamList<T>& params) {
  for (auto* p : params) p->zero_grad();
}

}  // namespace regfreenet::nn
