#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace regfreenet {

// Error hierarchy. The CLI maps each family onto its own exit code.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct BoundsError : Error {
  using Error::Error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct GeometryError : Error {
  using Error::Error;
};
struct FormatError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct LeakageError : Error {
  using Error::Error;
};

/// Voxel counts in (z, y, x) order; z is the axial slice axis.
struct Shape3 {
  int d = 0;
  int h = 0;
  int w = 0;

  constexpr std::size_t voxels() const {
    return static_cast<std::size_t>(d) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  constexpr int operator[](int axis) const { return axis == 0 ? d : (axis == 1 ? h : w); }
  constexpr bool positive() const { return d >= 1 && h >= 1 && w >= 1; }
  friend constexpr bool operator==(const Shape3&, const Shape3&) = default;

  static constexpr Shape3 cube(int n) { return {n, n, n}; }
};

inline std::string to_string(const Shape3& s) {
  return std::to_string(s.d) + "x" + std::to_string(s.h) + "x" + std::to_string(s.w);
}

/// Integer voxel coordinate in (z, y, x) order.
struct Index3 {
  int z = 0;
  int y = 0;
  int x = 0;

  constexpr int operator[](int axis) const { return axis == 0 ? z : (axis == 1 ? y : x); }
  friend constexpr bool operator==(const Index3&, const Index3&) = default;
  friend constexpr Index3 operator+(Index3 a, Index3 b) { return {a.z + b.z, a.y + b.y, a.x + b.x}; }
};

constexpr bool inside(const Index3& p, const Shape3& s) {
  return p.z >= 0 && p.y >= 0 && p.x >= 0 && p.z < s.d && p.y < s.h && p.x < s.w;
}

constexpr std::size_t linear_index(const Shape3& s, int z, int y, int x) {
  return (static_cast<std::size_t>(z) * static_cast<std::size_t>(s.h) + static_cast<std::size_t>(y)) *
             static_cast<std::size_t>(s.w) +
         static_cast<std::size_t>(x);
}

/// Millimetres per voxel, (z, y, x).
struct Spacing {
  double z = 1.0;
  double y = 1.0;
  double x = 1.0;

  bool positive() const { return z > 0.0 && y > 0.0 && x > 0.0; }
  friend bool operator==(const Spacing&, const Spacing&) = default;
};

/// Dense scalar grid with voxel spacing. Float for data, double for gradient checks.
template <class T>
class VoxelVolume {
 public:
  using value_type = T;

  VoxelVolume() = default;

  explicit VoxelVolume(Shape3 shape, Spacing spacing = {}, T fill = T{0})
      : shape_(shape), spacing_(spacing) {
    validate_header();
    data_.assign(shape_.voxels(), fill);
  }

  VoxelVolume(Shape3 shape, Spacing spacing, std::vector<T> data)
      : shape_(shape), spacing_(spacing), data_(std::move(data)) {
    validate_header();
    if (data_.size() != shape_.voxels()) {
      throw ShapeError("volume payload has " + std::to_string(data_.size()) + " values, shape " +
                       to_string(shape_) + " needs " + std::to_string(shape_.voxels()));
    }
  }

  const Shape3& shape() const { return shape_; }
  const Spacing& spacing() const { return spacing_; }
  std::size_t size() const { return data_.size(); }

  std::span<const T> data() const { return data_; }
  std::span<T> data() { return data_; }

  const T& operator()(int z, int y, int x) const { return data_[linear_index(shape_, z, y, x)]; }
  T& operator()(int z, int y, int x) { return data_[linear_index(shape_, z, y, x)]; }
  const T& operator()(const Index3& p) const { return (*this)(p.z, p.y, p.x); }
  T& operator()(const Index3& p) { return (*this)(p.z, p.y, p.x); }

  friend bool operator==(const VoxelVolume&, const VoxelVolume&) = default;

 private:
  void validate_header() const {
    if (!shape_.positive()) throw ShapeError("volume shape must be positive, got " + to_string(shape_));
    if (!spacing_.positive()) throw ShapeError("volume spacing must be positive");
  }

  Shape3 shape_{};
  Spacing spacing_{};
  std::vector<T> data_;
};

/// 3D {0,1} grid; implant labels and masking regions.
class BinaryMask {
 public:
  BinaryMask() = default;

  explicit BinaryMask(Shape3 shape) : shape_(shape) {
    if (!shape_.positive()) throw ShapeError("mask shape must be positive, got " + to_string(shape_));
    data_.assign(shape_.voxels(), 0);
  }

  BinaryMask(Shape3 shape, std::vector<std::uint8_t> data) : shape_(shape), data_(std::move(data)) {
    if (!shape_.positive()) throw ShapeError("mask shape must be positive, got " + to_string(shape_));
    if (data_.size() != shape_.voxels()) throw ShapeError("mask payload does not match shape " + to_string(shape_));
    for (auto v : data_) {
      if (v > 1) throw FormatError("mask element outside {0,1}");
    }
  }

  const Shape3& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::span<const std::uint8_t> data() const { return data_; }

  bool operator()(int z, int y, int x) const { return data_[linear_index(shape_, z, y, x)] != 0; }
  bool operator()(const Index3& p) const { return (*this)(p.z, p.y, p.x); }
  void set(int z, int y, int x, bool on = true) { data_[linear_index(shape_, z, y, x)] = on ? 1 : 0; }
  void set(const Index3& p, bool on = true) { set(p.z, p.y, p.x, on); }

  std::size_t popcount() const {
    return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
  }
  bool empty() const { return popcount() == 0; }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  Shape3 shape_{};
  std::vector<std::uint8_t> data_;
};

inline BinaryMask mask_union(const BinaryMask& a, const BinaryMask& b) {
  if (a.shape() != b.shape()) throw ShapeError("mask union of different shapes");
  std::vector<std::uint8_t> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] | b.data()[i];
  return BinaryMask(a.shape(), std::move(out));
}

/// Implant vertex, midpoint and base in voxel coordinates. The midpoint is carried
/// through I/O but label generation uses only vertex and base.
struct LandmarkTriple {
  Index3 vertex;
  Index3 midpoint;
  Index3 base;

  friend bool operator==(const LandmarkTriple&, const LandmarkTriple&) = default;
};

inline void validate_landmarks(const LandmarkTriple& lm, const Shape3& shape) {
  for (const Index3& p : {lm.vertex, lm.midpoint, lm.base}) {
    if (!inside(p, shape)) {
      throw BoundsError("landmark (" + std::to_string(p.z) + "," + std::to_string(p.y) + "," +
                        std::to_string(p.x) + ") outside volume " + to_string(shape));
    }
  }
  if (lm.vertex.z == lm.base.z) throw GeometryError("implant vertex and base lie on the same axial slice");
}

/// Implant inclination: k1 in the x-z plane, k2 in the y-z plane (dx/dz, dy/dz).
struct SlopePair {
  double k1 = 0.0;
  double k2 = 0.0;

  static SlopePair checked(double k1, double k2) {
    if (!std::isfinite(k1) || !std::isfinite(k2)) throw GeometryError("slope pair must be finite");
    return {k1, k2};
  }
  friend bool operator==(const SlopePair&, const SlopePair&) = default;
};

namespace detail {

template <class Grid>
void check_crop(const Grid& g, const Index3& origin, const Shape3& size) {
  const Shape3& s = g.shape();
  if (!size.positive()) throw BoundsError("crop size must be positive");
  if (origin.z < 0 || origin.y < 0 || origin.x < 0 || origin.z + size.d > s.d || origin.y + size.h > s.h ||
      origin.x + size.w > s.w) {
    throw BoundsError("crop " + to_string(size) + " at (" + std::to_string(origin.z) + "," +
                      std::to_string(origin.y) + "," + std::to_string(origin.x) + ") exceeds " + to_string(s));
  }
}

template <class V>
std::vector<V> crop_values(std::span<const V> src, const Shape3& s, const Index3& o, const Shape3& size) {
  std::vector<V> out(size.voxels());
  auto dst = out.begin();
  for (int z = 0; z < size.d; ++z) {
    for (int y = 0; y < size.h; ++y) {
      auto row = src.begin() + static_cast<std::ptrdiff_t>(linear_index(s, o.z + z, o.y + y, o.x));
      dst = std::copy(row, row + size.w, dst);
    }
  }
  return out;
}

}  // namespace detail

template <class T>
VoxelVolume<T> crop(const VoxelVolume<T>& v, const Index3& origin, const Shape3& size) {
  detail::check_crop(v, origin, size);
  return VoxelVolume<T>(size, v.spacing(), detail::crop_values(v.data(), v.shape(), origin, size));
}

inline BinaryMask crop(const BinaryMask& m, const Index3& origin, const Shape3& size) {
  detail::check_crop(m, origin, size);
  return BinaryMask(size, detail::crop_values(m.data(), m.shape(), origin, size));
}

/// Zero-pads symmetrically up to at least `target` per axis. Returns the offset of the
/// original data inside the padded grid.
template <class T>
std::pair<VoxelVolume<T>, Index3> pad_to(const VoxelVolume<T>& v, const Shape3& target, T fill = T{0}) {
  const Shape3& s = v.shape();
  Shape3 out_shape{std::max(s.d, target.d), std::max(s.h, target.h), std::max(s.w, target.w)};
  Index3 off{(out_shape.d - s.d) / 2, (out_shape.h - s.h) / 2, (out_shape.w - s.w) / 2};
  VoxelVolume<T> out(out_shape, v.spacing(), fill);
  for (int z = 0; z < s.d; ++z)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) out(z + off.z, y + off.y, x + off.x) = v(z, y, x);
  return {std::move(out), off};
}

inline std::pair<BinaryMask, Index3> pad_to(const BinaryMask& m, const Shape3& target) {
  const Shape3& s = m.shape();
  Shape3 out_shape{std::max(s.d, target.d), std::max(s.h, target.h), std::max(s.w, target.w)};
  Index3 off{(out_shape.d - s.d) / 2, (out_shape.h - s.h) / 2, (out_shape.w - s.w) / 2};
  BinaryMask out(out_shape);
  for (int z = 0; z < s.d; ++z)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x)
        if (m(z, y, x)) out.set(z + off.z, y + off.y, x + off.x);
  return {std::move(out), off};
}

template <class To, class From>
VoxelVolume<To> convert(const VoxelVolume<From>& v) {
  std::vector<To> out(v.size());
  std::transform(v.data().begin(), v.data().end(), out.begin(), [](From f) { return static_cast<To>(f); });
  return VoxelVolume<To>(v.shape(), v.spacing(), std::move(out));
}

}  // namespace regfreenet
