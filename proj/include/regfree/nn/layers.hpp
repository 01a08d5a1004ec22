#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "regfree/nn/tensor.hpp"

// Layers cache what their backward pass needs during forward. Each instance serves one
// sample at a time: forward, then backward, then the next sample.

namespace regfreenet::nn {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

/// Stride-1 3D convolution with zero "same" padding (dilation * (kernel - 1) / 2).
/// Lowered to GEMM over im2col columns, processed in axial slabs to bound memory.
template <class T>
class Conv3d {
 public:
  Conv3d() = default;
  Conv3d(const std::string& name, int in_channels, int out_channels, int kernel, int dilation, bool bias,
         std::mt19937_64& rng)
      : in_(in_channels), out_(out_channels), k_(kernel), dil_(dilation), has_bias_(bias) {
    if (kernel < 1 || kernel % 2 == 0) throw ConfigError("conv kernel must be odd");
    if (dilation < 1) throw ConfigError("conv dilation must be >= 1");
    weight = Parameter<T>(name + ".weight", {out_, in_, k_, k_, k_});
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_ * k_ * k_ * k_));
    weight.init_uniform(rng, bound);
    if (has_bias_) {
      this->bias = Parameter<T>(name + ".bias", {out_});
      this->bias.init_uniform(rng, bound);
    }
  }

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int dilation() const { return dil_; }
  int kernel() const { return k_; }

  FeatureMap<T> forward(const FeatureMap<T>& x) {
    if (x.channels != in_) {
      throw ShapeError(weight.name + ": expected " + std::to_string(in_) + " input channels, got " +
                       std::to_string(x.channels));
    }
    input_ = x;
    FeatureMap<T> y(out_, x.shape);
    const Eigen::Index n_total = static_cast<Eigen::Index>(x.spatial());
    Eigen::Map<const RowMat<T>> w(weight.value.data(), out_, kdim());
    for_each_slab(x.shape, [&](int z0, int z1) {
      const Eigen::Index off = static_cast<Eigen::Index>(z0) * x.shape.h * x.shape.w;
      const Eigen::Index n = static_cast<Eigen::Index>(z1 - z0) * x.shape.h * x.shape.w;
      StridedMap<T> out(y.data.data() + off, out_, n, Eigen::OuterStride<>(n_total));
      if (pointwise()) {
        ConstStridedMap<T> in(x.data.data() + off, in_, n, Eigen::OuterStride<>(n_total));
        out.noalias() = w * in;
      } else {
        im2col(x, z0, z1);
        out.noalias() = w * col_;
      }
    });
    if (has_bias_) {
      for (int c = 0; c < out_; ++c) {
        T* p = y.channel(c);
        const T b = bias.value[static_cast<std::size_t>(c)];
        for (std::size_t i = 0; i < y.spatial(); ++i) p[i] += b;
      }
    }
    return y;
  }

  FeatureMap<T> backward(const FeatureMap<T>& dy, bool want_input_grad = true) {
    const FeatureMap<T>& x = input_;
    if (dy.channels != out_ || dy.shape != x.shape) throw ShapeError(weight.name + ": gradient layout mismatch");
    FeatureMap<T> dx;
    if (want_input_grad) dx = FeatureMap<T>(in_, x.shape);
    const Eigen::Index n_total = static_cast<Eigen::Index>(x.spatial());
    Eigen::Map<const RowMat<T>> w(weight.value.data(), out_, kdim());
    Eigen::Map<RowMat<T>> dw(weight.grad.data(), out_, kdim());
    for_each_slab(x.shape, [&](int z0, int z1) {
      const Eigen::Index off = static_cast<Eigen::Index>(z0) * x.shape.h * x.shape.w;
      const Eigen::Index n = static_cast<Eigen::Index>(z1 - z0) * x.shape.h * x.shape.w;
      ConstStridedMap<T> g(dy.data.data() + off, out_, n, Eigen::OuterStride<>(n_total));
      if (pointwise()) {
        ConstStridedMap<T> in(x.data.data() + off, in_, n, Eigen::OuterStride<>(n_total));
        dw.noalias() += g * in.transpose();
        if (want_input_grad) {
          StridedMap<T> din(dx.data.data() + off, in_, n, Eigen::OuterStride<>(n_total));
          din.noalias() = w.transpose() * g;
        }
      } else {
        im2col(x, z0, z1);
        dw.noalias() += g * col_.transpose();
        if (want_input_grad) {
          col_.noalias() = w.transpose() * g;
          col2im(dx, z0, z1);
        }
      }
    });
    if (has_bias_) {
      for (int c = 0; c < out_; ++c) {
        const T* p = dy.channel(c);
        T s{0};
        for (std::size_t i = 0; i < dy.spatial(); ++i) s += p[i];
        bias.grad[static_cast<std::size_t>(c)] += s;
      }
    }
    return dx;
  }

  void collect(ParamList<T>& params) {
    params.push_back(&weight);
    if (has_bias_) params.push_back(&bias);
  }

  void release() {
    input_ = {};
    col_.resize(0, 0);
  }

  Parameter<T> weight;
  Parameter<T> bias;

 private:
  Eigen::Index kdim() const { return static_cast<Eigen::Index>(in_) * k_ * k_ * k_; }
  bool pointwise() const { return k_ == 1; }

  template <class F>
  void for_each_slab(const Shape3& s, F&& f) const {
    // Roughly 16M column entries per slab.
    const std::size_t per_slice = static_cast<std::size_t>(kdim()) * static_cast<std::size_t>(s.h) * s.w;
    const int slab = std::max<int>(1, static_cast<int>((std::size_t{1} << 24) / std::max<std::size_t>(per_slice, 1)));
    for (int z0 = 0; z0 < s.d; z0 += slab) f(z0, std::min(s.d, z0 + slab));
  }

  // Column layout: row (ci, kz, ky, kx), column (z - z0, y, x).
  void im2col(const FeatureMap<T>& x, int z0, int z1) {
    const Shape3& s = x.shape;
    const int hw = s.h * s.w;
    const Eigen::Index n = static_cast<Eigen::Index>(z1 - z0) * hw;
    col_.resize(kdim(), n);
    const int half = k_ / 2;
    Eigen::Index row = 0;
    for (int ci = 0; ci < in_; ++ci) {
      const T* src = x.channel(ci);
      for (int kz = 0; kz < k_; ++kz)
        for (int ky = 0; ky < k_; ++ky)
          for (int kx = 0; kx < k_; ++kx, ++row) {
            const int dz = (kz - half) * dil_, dyy = (ky - half) * dil_, dxx = (kx - half) * dil_;
            T* dst = col_.row(row).data();
            const int xlo = std::max(0, -dxx), xhi = std::min(s.w, s.w - dxx);
            for (int z = z0; z < z1; ++z) {
              const int zz = z + dz;
              T* slice = dst + static_cast<std::ptrdiff_t>(z - z0) * hw;
              if (zz < 0 || zz >= s.d) {
                std::fill(slice, slice + hw, T{0});
                continue;
              }
              for (int y = 0; y < s.h; ++y) {
                const int yy = y + dyy;
                T* line = slice + static_cast<std::ptrdiff_t>(y) * s.w;
                if (yy < 0 || yy >= s.h || xlo >= xhi) {
                  std::fill(line, line + s.w, T{0});
                  continue;
                }
                const T* from = src + (static_cast<std::ptrdiff_t>(zz) * s.h + yy) * s.w + dxx;
                std::fill(line, line + xlo, T{0});
                std::copy(from + xlo, from + xhi, line + xlo);
                std::fill(line + xhi, line + s.w, T{0});
              }
            }
          }
    }
  }

  void col2im(FeatureMap<T>& dx, int z0, int z1) const {
    const Shape3& s = dx.shape;
    const int hw = s.h * s.w;
    const int half = k_ / 2;
    Eigen::Index row = 0;
    for (int ci = 0; ci < in_; ++ci) {
      T* dst = dx.channel(ci);
      for (int kz = 0; kz < k_; ++kz)
        for (int ky = 0; ky < k_; ++ky)
          for (int kx = 0; kx < k_; ++kx, ++row) {
            const int dz = (kz - half) * dil_, dyy = (ky - half) * dil_, dxx = (kx - half) * dil_;
            const T* src = col_.row(row).data();
            const int xlo = std::max(0, -dxx), xhi = std::min(s.w, s.w - dxx);
            if (xlo >= xhi) continue;
            for (int z = z0; z < z1; ++z) {
              const int zz = z + dz;
              if (zz < 0 || zz >= s.d) continue;
              const T* slice = src + static_cast<std::ptrdiff_t>(z - z0) * hw;
              for (int y = 0; y < s.h; ++y) {
                const int yy = y + dyy;
                if (yy < 0 || yy >= s.h) continue;
                const T* line = slice + static_cast<std::ptrdiff_t>(y) * s.w;
                T* to = dst + (static_cast<std::ptrdiff_t>(zz) * s.h + yy) * s.w + dxx;
                for (int x = xlo; x < xhi; ++x) to[x] += line[x];
              }
            }
          }
    }
  }

  int in_ = 0, out_ = 0, k_ = 3, dil_ = 1;
  bool has_bias_ = false;
  FeatureMap<T> input_;
  RowMat<T> col_;
};

/// Per-sample, per-channel normalisation with a learned affine transform.
template <class T>
class InstanceNorm3d {
 public:
  InstanceNorm3d() = default;
  InstanceNorm3d(const std::string& name, int channels) : channels_(channels) {
    gamma = Parameter<T>(name + ".gamma", {channels});
    beta = Parameter<T>(name + ".beta", {channels});
    gamma.fill(T{1});
  }

  FeatureMap<T> forward(const FeatureMap<T>& x) {
    if (x.channels != channels_) throw ShapeError(gamma.name + ": channel mismatch");
    const std::size_t n = x.spatial();
    xhat_ = FeatureMap<T>(x.channels, x.shape);
    inv_std_.assign(static_cast<std::size_t>(channels_), T{0});
    FeatureMap<T> y(x.channels, x.shape);
    for (int c = 0; c < channels_; ++c) {
      const T* p = x.channel(c);
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += p[i];
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t i = 0; i < n; ++i) var += (p[i] - mean) * (p[i] - mean);
      var /= static_cast<double>(n);
      const T inv = static_cast<T>(1.0 / std::sqrt(var + kEps));
      inv_std_[static_cast<std::size_t>(c)] = inv;
      T* xh = xhat_.channel(c);
      T* out = y.channel(c);
      const T g = gamma.value[static_cast<std::size_t>(c)], b = beta.value[static_cast<std::size_t>(c)];
      const T m = static_cast<T>(mean);
      for (std::size_t i = 0; i < n; ++i) {
        xh[i] = (p[i] - m) * inv;
        out[i] = g * xh[i] + b;
      }
    }
    return y;
  }

  FeatureMap<T> backward(const FeatureMap<T>& dy) {
    const std::size_t n = dy.spatial();
    FeatureMap<T> dx(dy.channels, dy.shape);
    for (int c = 0; c < channels_; ++c) {
      const T* g = dy.channel(c);
      const T* xh = xhat_.channel(c);
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        sum_g += g[i];
        sum_gx += static_cast<double>(g[i]) * xh[i];
      }
      const auto cu = static_cast<std::size_t>(c);
      gamma.grad[cu] += static_cast<T>(sum_gx);
      beta.grad[cu] += static_cast<T>(sum_g);
      const T scale = gamma.value[cu] * inv_std_[cu];
      const T mg = static_cast<T>(sum_g / static_cast<double>(n));
      const T mgx = static_cast<T>(sum_gx / static_cast<double>(n));
      T* out = dx.channel(c);
      for (std::size_t i = 0; i < n; ++i) out[i] = scale * (g[i] - mg - xh[i] * mgx);
    }
    return dx;
  }

  void collect(ParamList<T>& params) {
    params.push_back(&gamma);
    params.push_back(&beta);
  }

  Parameter<T> gamma;
  Parameter<T> beta;

 private:
  static constexpr double kEps = 1e-5;
  int channels_ = 0;
  FeatureMap<T> xhat_;
  std::vector<T> inv_std_;
};

template <class T>
class ReLU {
 public:
  FeatureMap<T> forward(FeatureMap<T> x) {
    for (auto& v : x.data) v = v > T{0} ? v : T{0};
    out_ = x;
    return x;
  }
  std::vector<T> forward(std::vector<T> x) {
    for (auto& v : x) v = v > T{0} ? v : T{0};
    vec_out_ = x;
    return x;
  }
  FeatureMap<T> backward(FeatureMap<T> dy) const {
    for (std::size_t i = 0; i < dy.data.size(); ++i)
      if (!(out_.data[i] > T{0})) dy.data[i] = T{0};
    return dy;
  }
  std::vector<T> backward(std::vector<T> dy) const {
    for (std::size_t i = 0; i < dy.size(); ++i)
      if (!(vec_out_[i] > T{0})) dy[i] = T{0};
    return dy;
  }

 private:
  FeatureMap<T> out_;
  std::vector<T> vec_out_;
};

/// 2x2x2 max pooling, stride 2. Spatial dims must be even.
template <class T>
class MaxPool3d {
 public:
  FeatureMap<T> forward(const FeatureMap<T>& x) {
    const Shape3& s = x.shape;
    if (s.d % 2 || s.h % 2 || s.w % 2) throw ShapeError("max pooling needs even spatial dims, got " + to_string(s));
    in_shape_ = s;
    FeatureMap<T> y(x.channels, {s.d / 2, s.h / 2, s.w / 2});
    argmax_.assign(y.size(), 0);
    std::size_t o = 0;
    for (int c = 0; c < x.channels; ++c) {
      const T* p = x.channel(c);
      for (int z = 0; z < y.shape.d; ++z)
        for (int yy = 0; yy < y.shape.h; ++yy)
          for (int xx = 0; xx < y.shape.w; ++xx, ++o) {
            std::size_t best = linear_index(s, 2 * z, 2 * yy, 2 * xx);
            for (int a = 0; a < 2; ++a)
              for (int b = 0; b < 2; ++b)
                for (int e = 0; e < 2; ++e) {
                  const std::size_t i = linear_index(s, 2 * z + a, 2 * yy + b, 2 * xx + e);
                  if (p[i] > p[best]) best = i;
                }
            argmax_[o] = static_cast<std::uint32_t>(best);
            y.data[o] = p[best];
          }
    }
    return y;
  }

  FeatureMap<T> backward(const FeatureMap<T>& dy) const {
    FeatureMap<T> dx(dy.channels, in_shape_);
    const std::size_t per_out = dy.spatial();
    for (std::size_t o = 0; o < dy.size(); ++o) {
      const int c = static_cast<int>(o / per_out);
      dx.channel(c)[argmax_[o]] += dy.data[o];
    }
    return dx;
  }

 private:
  Shape3 in_shape_{};
  std::vector<std::uint32_t> argmax_;
};

namespace detail {

struct LerpTap {
  int i0 = 0, i1 = 0;
  double w0 = 1.0, w1 = 0.0;
};

// Half-pixel-centre linear interpolation (align_corners = false).
inline std::vector<LerpTap> lerp_table(int in, int out) {
  std::vector<LerpTap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    const double l = src - i0;
    taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - l, l};
  }
  return taps;
}

}  // namespace detail

/// Trilinear resize to an explicit target shape.
template <class T>
class Resize3d {
 public:
  FeatureMap<T> forward(const FeatureMap<T>& x, const Shape3& target) {
    in_shape_ = x.shape;
    tz_ = detail::lerp_table(x.shape.d, target.d);
    ty_ = detail::lerp_table(x.shape.h, target.h);
    tx_ = detail::lerp_table(x.shape.w, target.w);
    FeatureMap<T> y(x.channels, target);
    for (int c = 0; c < x.channels; ++c) {
      const T* p = x.channel(c);
      T* out = y.channel(c);
      std::size_t o = 0;
      for (const auto& a : tz_)
        for (const auto& b : ty_)
          for (const auto& e : tx_) {
            auto v = [&](int z, int yy, int xx) { return static_cast<double>(p[linear_index(in_shape_, z, yy, xx)]); };
            const double r = a.w0 * (b.w0 * (e.w0 * v(a.i0, b.i0, e.i0) + e.w1 * v(a.i0, b.i0, e.i1)) +
                                     b.w1 * (e.w0 * v(a.i0, b.i1, e.i0) + e.w1 * v(a.i0, b.i1, e.i1))) +
                             a.w1 * (b.w0 * (e.w0 * v(a.i1, b.i0, e.i0) + e.w1 * v(a.i1, b.i0, e.i1)) +
                                     b.w1 * (e.w0 * v(a.i1, b.i1, e.i0) + e.w1 * v(a.i1, b.i1, e.i1)));
            out[o++] = static_cast<T>(r);
          }
    }
    return y;
  }

  FeatureMap<T> backward(const FeatureMap<T>& dy) const {
    FeatureMap<T> dx(dy.channels, in_shape_);
    for (int c = 0; c < dy.channels; ++c) {
      const T* g = dy.channel(c);
      T* d = dx.channel(c);
      std::size_t o = 0;
      for (const auto& a : tz_)
        for (const auto& b : ty_)
          for (const auto& e : tx_) {
            const double gv = g[o++];
            auto put = [&](int z, int yy, int xx, double w) {
              d[linear_index(in_shape_, z, yy, xx)] += static_cast<T>(w * gv);
            };
            put(a.i0, b.i0, e.i0, a.w0 * b.w0 * e.w0);
            put(a.i0, b.i0, e.i1, a.w0 * b.w0 * e.w1);
            put(a.i0, b.i1, e.i0, a.w0 * b.w1 * e.w0);
            put(a.i0, b.i1, e.i1, a.w0 * b.w1 * e.w1);
            put(a.i1, b.i0, e.i0, a.w1 * b.w0 * e.w0);
            put(a.i1, b.i0, e.i1, a.w1 * b.w0 * e.w1);
            put(a.i1, b.i1, e.i0, a.w1 * b.w1 * e.w0);
            put(a.i1, b.i1, e.i1, a.w1 * b.w1 * e.w1);
          }
    }
    return dx;
  }

 private:
  Shape3 in_shape_{};
  std::vector<detail::LerpTap> tz_, ty_, tx_;
};

namespace detail {

inline std::pair<int, int> adaptive_bin(int i, int in, int out) {
  const int start = (i * in) / out;
  const int end = ((i + 1) * in + out - 1) / out;
  return {start, end};
}

}  // namespace detail

/// Adaptive average pooling onto a fixed output grid (bins as in common DL frameworks).
template <class T>
class AdaptiveAvgPool3d {
 public:
  explicit AdaptiveAvgPool3d(Shape3 grid = {4, 4, 4}) : grid_(grid) {}

  FeatureMap<T> forward(const FeatureMap<T>& x) {
    const Shape3& s = x.shape;
    if (s.d < grid_.d || s.h < grid_.h || s.w < grid_.w) {
      throw ShapeError("adaptive pooling input " + to_string(s) + " is smaller than grid " + to_string(grid_));
    }
    in_shape_ = s;
    FeatureMap<T> y(x.channels, grid_);
    for (int c = 0; c < x.channels; ++c) {
      const T* p = x.channel(c);
      std::size_t o = 0;
      for (int a = 0; a < grid_.d; ++a)
        for (int b = 0; b < grid_.h; ++b)
          for (int e = 0; e < grid_.w; ++e) {
            const auto [z0, z1] = detail::adaptive_bin(a, s.d, grid_.d);
            const auto [y0, y1] = detail::adaptive_bin(b, s.h, grid_.h);
            const auto [x0, x1] = detail::adaptive_bin(e, s.w, grid_.w);
            double sum = 0.0;
            for (int z = z0; z < z1; ++z)
              for (int yy = y0; yy < y1; ++yy)
                for (int xx = x0; xx < x1; ++xx) sum += p[linear_index(s, z, yy, xx)];
            y.channel(c)[o++] = static_cast<T>(sum / ((z1 - z0) * (y1 - y0) * (x1 - x0)));
          }
    }
    return y;
  }

  FeatureMap<T> backward(const FeatureMap<T>& dy) const {
    const Shape3& s = in_shape_;
    FeatureMap<T> dx(dy.channels, s);
    for (int c = 0; c < dy.channels; ++c) {
      T* d = dx.channel(c);
      std::size_t o = 0;
      for (int a = 0; a < grid_.d; ++a)
        for (int b = 0; b < grid_.h; ++b)
          for (int e = 0; e < grid_.w; ++e) {
            const auto [z0, z1] = detail::adaptive_bin(a, s.d, grid_.d);
            const auto [y0, y1] = detail::adaptive_bin(b, s.h, grid_.h);
            const auto [x0, x1] = detail::adaptive_bin(e, s.w, grid_.w);
            const T g = dy.channel(c)[o++] / static_cast<T>((z1 - z0) * (y1 - y0) * (x1 - x0));
            for (int z = z0; z < z1; ++z)
              for (int yy = y0; yy < y1; ++yy)
                for (int xx = x0; xx < x1; ++xx) d[linear_index(s, z, yy, xx)] += g;
          }
    }
    return dx;
  }

  const Shape3& grid() const { return grid_; }

 private:
  Shape3 grid_;
  Shape3 in_shape_{};
};

/// y = W x + b on a flat vector.
template <class T>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in, int out, std::mt19937_64& rng) : in_(in), out_(out) {
    weight = Parameter<T>(name + ".weight", {out, in});
    bias = Parameter<T>(name + ".bias", {out});
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight.init_uniform(rng, bound);
    bias.init_uniform(rng, bound);
  }

  int in_features() const { return in_; }
  int out_features() const { return out_; }

  std::vector<T> forward(const std::vector<T>& x) {
    if (static_cast<int>(x.size()) != in_) {
      throw ShapeError(weight.name + ": expected " + std::to_string(in_) + " inputs, got " + std::to_string(x.size()));
    }
    input_ = x;
    std::vector<T> y(bias.value);
    Eigen::Map<const RowMat<T>> w(weight.value.data(), out_, in_);
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> xv(x.data(), in_);
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> yv(y.data(), out_);
    yv.noalias() += w * xv;
    return y;
  }

  std::vector<T> backward(const std::vector<T>& dy) {
    Eigen::Map<const RowMat<T>> w(weight.value.data(), out_, in_);
    Eigen::Map<RowMat<T>> dw(weight.grad.data(), out_, in_);
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> g(dy.data(), out_);
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> xv(input_.data(), in_);
    dw.noalias() += g * xv.transpose();
    for (int i = 0; i < out_; ++i) bias.grad[static_cast<std::size_t>(i)] += dy[static_cast<std::size_t>(i)];
    std::vector<T> dx(static_cast<std::size_t>(in_));
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> dxv(dx.data(), in_);
    dxv.noalias() = w.transpose() * g;
    return dx;
  }

  void collect(ParamList<T>& params) {
    params.push_back(&weight);
    params.push_back(&bias);
  }

  Parameter<T> weight;
  Parameter<T> bias;

 private:
  int in_ = 0, out_ = 0;
  std::vector<T> input_;
};

/// Inverted dropout; identity outside training.
template <class T>
class Dropout {
 public:
  explicit Dropout(double p = 0.5) : p_(p) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout probability must be in [0, 1)");
  }

  std::vector<T> forward(std::vector<T> x, bool training, std::mt19937_64& rng) {
    keep_.assign(x.size(), T{1});
    if (!training || p_ == 0.0) return x;
    std::bernoulli_distribution drop(p_);
    const T scale = static_cast<T>(1.0 / (1.0 - p_));
    for (std::size_t i = 0; i < x.size(); ++i) {
      keep_[i] = drop(rng) ? T{0} : scale;
      x[i] *= keep_[i];
    }
    return x;
  }

  std::vector<T> backward(std::vector<T> dy) const {
    for (std::size_t i = 0; i < dy.size(); ++i) dy[i] *= keep_[i];
    return dy;
  }

 private:
  double p_;
  std::vector<T> keep_;
};

template <class T>
class Sigmoid {
 public:
  FeatureMap<T> forward(FeatureMap<T> x) {
    for (auto& v : x.data) v = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
    out_ = x;
    return x;
  }
  FeatureMap<T> backward(FeatureMap<T> dy) const {
    for (std::size_t i = 0; i < dy.data.size(); ++i) dy.data[i] *= out_.data[i] * (T{1} - out_.data[i]);
    return dy;
  }

 private:
  FeatureMap<T> out_;
};

/// conv (no bias) -> instance norm -> ReLU.
template <class T>
class ConvNormAct {
 public:
  ConvNormAct() = default;
  ConvNormAct(const std::string& name, int in, int out, std::mt19937_64& rng)
      : conv_(name + ".conv", in, out, 3, 1, false, rng), norm_(name + ".norm", out) {}

  FeatureMap<T> forward(const FeatureMap<T>& x) { return act_.forward(norm_.forward(conv_.forward(x))); }
  FeatureMap<T> backward(const FeatureMap<T>& dy, bool want_input_grad = true) {
    return conv_.backward(norm_.backward(act_.backward(dy)), want_input_grad);
  }
  void collect(ParamList<T>& params) {
    conv_.collect(params);
    norm_.collect(params);
  }
  int out_channels() const { return conv_.out_channels(); }

 private:
  Conv3d<T> conv_;
  InstanceNorm3d<T> norm_;
  ReLU<T> act_;
};

template <class T>
class DoubleConv {
 public:
  DoubleConv() = default;
  DoubleConv(const std::string& name, int in, int out, std::mt19937_64& rng)
      : a_(name + ".0", in, out, rng), b_(name + ".1", out, out, rng) {}

  FeatureMap<T> forward(const FeatureMap<T>& x) { return b_.forward(a_.forward(x)); }
  FeatureMap<T> backward(const FeatureMap<T>& dy, bool want_input_grad = true) {
    return a_.backward(b_.backward(dy), want_input_grad);
  }
  void collect(ParamList<T>& params) {
    a_.collect(params);
    b_.collect(params);
  }

 private:
  ConvNormAct<T> a_, b_;
};

}  // namespace regfreenet::nn
