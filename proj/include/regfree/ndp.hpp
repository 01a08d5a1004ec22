#pragma once

#include <array>
#include <random>
#include <string>
#include <vector>

#include "regfree/nn/layers.hpp"

// Neighboring distance perception front-end:
//   D_j  = ReLU(dilated conv_j(V))                     j = 1..3, rates (2,3,4)
//   P_j  = adaptive_avg_pool_4x4x4(ReLU(conv(D_j)))    64 graph nodes
//   G_j  = GCN_j(P_j)                                  two message-passing layers
//   F_j  = D_j + trilinear_upsample(G_j)               residual fusion
//   out  = ReLU(conv1x1([F_1; F_2; F_3]))

namespace regfreenet {

struct NDPConfig {
  std::array<int, 3> dilation_rates{2, 3, 4};
  int in_channels = 1;
  int branch_channels = 16;
  Shape3 node_grid{4, 4, 4};
  int gcn_hidden = 16;
  int out_channels = 8;

  void validate() const {
    for (int i = 0; i < 3; ++i) {
      if (dilation_rates[static_cast<std::size_t>(i)] < 1) throw ConfigError("NDP dilation rates must be >= 1");
      if (i > 0 && dilation_rates[static_cast<std::size_t>(i)] <= dilation_rates[static_cast<std::size_t>(i - 1)]) {
        throw ConfigError("NDP dilation rates must be strictly increasing");
      }
    }
    if (node_grid.voxels() != 64) throw ConfigError("NDP node grid must hold exactly 64 nodes");
    if (in_channels < 1 || branch_channels < 1 || gcn_hidden < 1 || out_channels < 1) {
      throw ConfigError("NDP channel counts must be positive");
    }
  }
};

namespace ndp {

using nn::FeatureMap;
using nn::ParamList;
using nn::RowMat;

/// Node features, one row per node.
template <class T>
using NodeFeatures = RowMat<T>;

template <class T>
NodeFeatures<T> grid_to_nodes(const FeatureMap<T>& grid) {
  const auto n = static_cast<Eigen::Index>(grid.spatial());
  NodeFeatures<T> nodes(n, grid.channels);
  for (int c = 0; c < grid.channels; ++c)
    for (Eigen::Index i = 0; i < n; ++i) nodes(i, c) = grid.channel(c)[i];
  return nodes;
}

template <class T>
FeatureMap<T> nodes_to_grid(const NodeFeatures<T>& nodes, const Shape3& grid) {
  FeatureMap<T> out(static_cast<int>(nodes.cols()), grid);
  for (int c = 0; c < out.channels; ++c)
    for (Eigen::Index i = 0; i < nodes.rows(); ++i) out.channel(c)[i] = nodes(i, c);
  return out;
}

/// One dilated 3x3x3 convolution branch followed by ReLU; padding = rate keeps the size.
template <class T>
class DilatedBranch {
 public:
  DilatedBranch() = default;
  DilatedBranch(const std::string& name, int in, int out, int rate, std::mt19937_64& rng)
      : conv_(name + ".conv", in, out, 3, rate, true, rng) {}

  FeatureMap<T> forward(const FeatureMap<T>& v) {
    const int extent = 2 * conv_.dilation() + 1;
    if (v.shape.d < extent || v.shape.h < extent || v.shape.w < extent) {
      throw ShapeError("dilated branch (rate " + std::to_string(conv_.dilation()) + ") needs spatial dims >= " +
                       std::to_string(extent) + ", got " + to_string(v.shape));
    }
    return act_.forward(conv_.forward(v));
  }
  FeatureMap<T> backward(const FeatureMap<T>& dy, bool want_input_grad = true) {
    return conv_.backward(act_.backward(dy), want_input_grad);
  }
  void collect(ParamList<T>& p) { conv_.collect(p); }
  nn::Conv3d<T>& conv() { return conv_; }

 private:
  nn::Conv3d<T> conv_;
  nn::ReLU<T> act_;
};

/// Keypoint network: 3x3x3 conv + ReLU, then adaptive average pooling onto the node grid.
template <class T>
class KNet {
 public:
  KNet() = default;
  KNet(const std::string& name, int channels, Shape3 grid, std::mt19937_64& rng)
      : conv_(name + ".conv", channels, channels, 3, 1, true, rng), pool_(grid) {}

  NodeFeatures<T> forward(const FeatureMap<T>& d) {
    const Shape3& g = pool_.grid();
    if (d.shape.d < g.d || d.shape.h < g.h || d.shape.w < g.w) {
      throw ShapeError("keypoint pooling input " + to_string(d.shape) + " is smaller than node grid " + to_string(g));
    }
    return grid_to_nodes(pool_.forward(act_.forward(conv_.forward(d))));
  }
  FeatureMap<T> backward(const NodeFeatures<T>& dp) {
    return conv_.backward(act_.backward(pool_.backward(nodes_to_grid(dp, pool_.grid()))));
  }
  void collect(ParamList<T>& p) { conv_.collect(p); }
  nn::Conv3d<T>& conv() { return conv_; }

 private:
  nn::Conv3d<T> conv_;
  nn::ReLU<T> act_;
  nn::AdaptiveAvgPool3d<T> pool_;
};

/// Dense message passing over all nodes with self inclusion:
///   h_i' = ReLU(W_self h_i + W_msg mean_j(h_j) + b)
/// The aggregate uses uniform 1/N weights over every node including i.
template <class T>
class GraphLayer {
 public:
  GraphLayer() = default;
  GraphLayer(const std::string& name, int in, int out, std::mt19937_64& rng) : in_(in), out_(out) {
    w_self = nn::Parameter<T>(name + ".w_self", {out, in});
    w_msg = nn::Parameter<T>(name + ".w_msg", {out, in});
    bias = nn::Parameter<T>(name + ".bias", {out});
    const double bound = 1.0 / std::sqrt(static_cast<double>(2 * in));
    w_self.init_uniform(rng, bound);
    w_msg.init_uniform(rng, bound);
    bias.init_uniform(rng, bound);
  }

  NodeFeatures<T> forward(const NodeFeatures<T>& h) {
    if (h.cols() != in_) throw ShapeError(w_self.name + ": node feature width mismatch");
    input_ = h;
    const Eigen::Matrix<T, 1, Eigen::Dynamic> mean = h.colwise().mean();
    Eigen::Map<const RowMat<T>> ws(w_self.value.data(), out_, in_);
    Eigen::Map<const RowMat<T>> wm(w_msg.value.data(), out_, in_);
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias.value.data(), out_);
    const Eigen::Matrix<T, 1, Eigen::Dynamic> shared = mean * wm.transpose() + b;
    NodeFeatures<T> z = h * ws.transpose();
    z.rowwise() += shared;
    output_ = z.cwiseMax(T{0});
    return output_;
  }

  NodeFeatures<T> backward(const NodeFeatures<T>& dy) {
    const NodeFeatures<T> dz = (output_.array() > T{0}).select(dy, T{0});
    const auto n = static_cast<T>(input_.rows());
    Eigen::Map<const RowMat<T>> ws(w_self.value.data(), out_, in_);
    Eigen::Map<const RowMat<T>> wm(w_msg.value.data(), out_, in_);
    Eigen::Map<RowMat<T>> dws(w_self.grad.data(), out_, in_);
    Eigen::Map<RowMat<T>> dwm(w_msg.grad.data(), out_, in_);
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> db(bias.grad.data(), out_);
    const Eigen::Matrix<T, 1, Eigen::Dynamic> dz_sum = dz.colwise().sum();
    const Eigen::Matrix<T, 1, Eigen::Dynamic> mean = input_.colwise().mean();
    dws.noalias() += dz.transpose() * input_;
    dwm.noalias() += dz_sum.transpose() * mean;
    db += dz_sum;
    NodeFeatures<T> dh = dz * ws;
    const Eigen::Matrix<T, 1, Eigen::Dynamic> shared = (dz_sum * wm) / n;
    dh.rowwise() += shared;
    return dh;
  }

  void collect(ParamList<T>& p) {
    p.push_back(&w_self);
    p.push_back(&w_msg);
    p.push_back(&bias);
  }

  nn::Parameter<T> w_self, w_msg, bias;

 private:
  int in_ = 0, out_ = 0;
  NodeFeatures<T> input_, output_;
};

template <class T>
class GCN {
 public:
  GCN() = default;
  GCN(const std::string& name, int channels, int hidden, std::mt19937_64& rng)
      : first_(name + ".0", channels, hidden, rng), second_(name + ".1", hidden, channels, rng) {}

  NodeFeatures<T> forward(const NodeFeatures<T>& p) {
    if (p.rows() != 64) throw ShapeError("GCN expects 64 nodes, got " + std::to_string(p.rows()));
    return second_.forward(first_.forward(p));
  }
  NodeFeatures<T> backward(const NodeFeatures<T>& dg) { return first_.backward(second_.backward(dg)); }
  void collect(ParamList<T>& p) {
    first_.collect(p);
    second_.collect(p);
  }
  GraphLayer<T>& layer(int i) { return i == 0 ? first_ : second_; }

 private:
  GraphLayer<T> first_, second_;
};

template <class T>
class NDP {
 public:
  NDP() = default;
  NDP(const NDPConfig& cfg, std::mt19937_64& rng, const std::string& name = "ndp") : cfg_(cfg) {
    cfg_.validate();
    for (std::size_t j = 0; j < 3; ++j) {
      const std::string b = name + ".branch" + std::to_string(j);
      branch_[j] = DilatedBranch<T>(b + ".dilated", cfg_.in_channels, cfg_.branch_channels, cfg_.dilation_rates[j], rng);
      knet_[j] = KNet<T>(b + ".knet", cfg_.branch_channels, cfg_.node_grid, rng);
      gcn_[j] = GCN<T>(b + ".gcn", cfg_.branch_channels, cfg_.gcn_hidden, rng);
    }
    fuse_ = nn::Conv3d<T>(name + ".fuse", 3 * cfg_.branch_channels, cfg_.out_channels, 1, 1, true, rng);
  }

  const NDPConfig& config() const { return cfg_; }

  FeatureMap<T> forward(const FeatureMap<T>& v) {
    FeatureMap<T> cat;
    for (std::size_t j = 0; j < 3; ++j) {
      FeatureMap<T> d = branch_[j].forward(v);
      const NodeFeatures<T> g = gcn_[j].forward(knet_[j].forward(d));
      nn::add_into(d, up_[j].forward(nodes_to_grid(g, cfg_.node_grid), d.shape));
      cat = j == 0 ? std::move(d) : nn::concat(cat, d);
    }
    return act_.forward(fuse_.forward(cat));
  }

  FeatureMap<T> backward(const FeatureMap<T>& dy, bool want_input_grad = true) {
    const FeatureMap<T> dcat = fuse_.backward(act_.backward(dy));
    FeatureMap<T> dv;
    for (std::size_t j = 0; j < 3; ++j) {
      FeatureMap<T> dd = nn::slice_channels(dcat, static_cast<int>(j) * cfg_.branch_channels, cfg_.branch_channels);
      const NodeFeatures<T> dg = grid_to_nodes(up_[j].backward(dd));
      nn::add_into(dd, knet_[j].backward(gcn_[j].backward(dg)));
      FeatureMap<T> dvj = branch_[j].backward(dd, want_input_grad);
      if (!want_input_grad) continue;
      if (j == 0) dv = std::move(dvj);
      else nn::add_into(dv, dvj);
    }
    return dv;
  }

  void collect(ParamList<T>& p) {
    for (std::size_t j = 0; j < 3; ++j) {
      branch_[j].collect(p);
      knet_[j].collect(p);
      gcn_[j].collect(p);
    }
    fuse_.collect(p);
  }

  DilatedBranch<T>& branch(int j) { return branch_[static_cast<std::size_t>(j)]; }
  KNet<T>& knet(int j) { return knet_[static_cast<std::size_t>(j)]; }
  GCN<T>& gcn(int j) { return gcn_[static_cast<std::size_t>(j)]; }
  nn::Conv3d<T>& fuse() { return fuse_; }

 private:
  NDPConfig cfg_;
  std::array<DilatedBranch<T>, 3> branch_;
  std::array<KNet<T>, 3> knet_;
  std::array<GCN<T>, 3> gcn_;
  std::array<nn::Resize3d<T>, 3> up_;
  nn::Conv3d<T> fuse_;
  nn::ReLU<T> act_;
};

}  // namespace ndp
}  // namespace regfreenet
