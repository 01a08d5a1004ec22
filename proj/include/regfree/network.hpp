#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "regfree/io.hpp"
#include "regfree/ndp.hpp"
#include "regfree/nn/layers.hpp"

namespace regfreenet {

struct NetworkConfig {
  std::array<int, 4> channels{8, 16, 32, 64};
  Shape3 input_size{32, 32, 32};
  bool use_ndp = true;
  bool use_spb = true;
  int spb_hidden = 256;
  double spb_dropout = 0.5;
  int ndp_branch_channels = 16;
  int ndp_gcn_hidden = 16;
  std::array<int, 3> ndp_rates{2, 3, 4};
  std::uint64_t init_seed = 1;

  void validate() const {
    for (std::size_t i = 0; i < 4; ++i) {
      if (channels[i] < 1) throw ConfigError("encoder channels must be positive");
      if (i > 0 && channels[i] <= channels[i - 1]) throw ConfigError("encoder channels must be strictly increasing");
    }
    if (!input_size.positive() || input_size.d % 16 || input_size.h % 16 || input_size.w % 16) {
      throw ConfigError("input size must be divisible by 16 on every axis, got " + to_string(input_size));
    }
    if (spb_hidden < 1) throw ConfigError("spb_hidden must be positive");
    if (spb_dropout < 0.0 || spb_dropout >= 1.0) throw ConfigError("spb_dropout must be in [0, 1)");
    ndp_config().validate();
  }

  NDPConfig ndp_config() const {
    NDPConfig c;
    c.dilation_rates = ndp_rates;
    c.in_channels = 1;
    c.branch_channels = ndp_branch_channels;
    c.gcn_hidden = ndp_gcn_hidden;
    c.out_channels = channels[0];
    return c;
  }

  int stem_channels() const { return use_ndp ? channels[0] : 1; }

  Shape3 deepest_shape() const { return {input_size.d / 16, input_size.h / 16, input_size.w / 16}; }

  /// Canonical text form; also the input of the checkpoint fingerprint.
  std::string canonical() const {
    std::ostringstream s;
    s.precision(17);
    s << "channels=" << channels[0] << ',' << channels[1] << ',' << channels[2] << ',' << channels[3]
      << ";input=" << to_string(input_size) << ";ndp=" << use_ndp << ";spb=" << use_spb << ";spb_hidden=" << spb_hidden
      << ";spb_dropout=" << spb_dropout << ";ndp_branch=" << ndp_branch_channels << ";ndp_gcn=" << ndp_gcn_hidden
      << ";ndp_rates=" << ndp_rates[0] << ',' << ndp_rates[1] << ',' << ndp_rates[2];
    return s.str();
  }

  std::uint64_t fingerprint() const {
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a
    for (unsigned char c : canonical()) {
      h ^= c;
      h *= 1099511628211ull;
    }
    return h;
  }

  static NetworkConfig from_keyvalues(const io::KeyValues& kv) {
    NetworkConfig c;
    if (kv.has("channels")) {
      const auto ch = kv.get_list<int>("channels", {});
      if (ch.size() != 4) throw ConfigError("channels needs exactly 4 values");
      for (std::size_t i = 0; i < 4; ++i) c.channels[i] = ch[i];
    }
    if (kv.has("input_size")) {
      const auto s = kv.get_list<int>("input_size", {});
      if (s.size() == 1) c.input_size = Shape3::cube(s[0]);
      else if (s.size() == 3) c.input_size = {s[0], s[1], s[2]};
      else throw ConfigError("input_size needs 1 or 3 values");
    }
    c.use_ndp = kv.get_flag("use_ndp", c.use_ndp);
    c.use_spb = kv.get_flag("use_spb", c.use_spb);
    c.spb_hidden = kv.get<int>("spb_hidden", c.spb_hidden);
    c.spb_dropout = kv.get<double>("spb_dropout", c.spb_dropout);
    c.ndp_branch_channels = kv.get<int>("ndp_branch_channels", c.ndp_branch_channels);
    c.ndp_gcn_hidden = kv.get<int>("ndp_gcn_hidden", c.ndp_gcn_hidden);
    if (kv.has("ndp_rates")) {
      const auto r = kv.get_list<int>("ndp_rates", {});
      if (r.size() != 3) throw ConfigError("ndp_rates needs exactly 3 values");
      c.ndp_rates = {r[0], r[1], r[2]};
    }
    c.init_seed = kv.get<std::uint64_t>("init_seed", c.init_seed);
    c.validate();
    return c;
  }
};

template <class T>
struct FeaturePyramid {
  std::array<nn::FeatureMap<T>, 4> maps;  // 1/2, 1/4, 1/8, 1/16 of the input
};

namespace net {

using nn::FeatureMap;
using nn::ParamList;

/// Four blocks of (conv-norm-ReLU x2, 2x2x2 max pool).
template <class T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(int in_channels, const std::array<int, 4>& channels, std::mt19937_64& rng) {
    int in = in_channels;
    for (std::size_t i = 0; i < 4; ++i) {
      blocks_[i] = nn::DoubleConv<T>("encoder" + std::to_string(i), in, channels[i], rng);
      in = channels[i];
    }
  }

  FeaturePyramid<T> forward(const FeatureMap<T>& x) {
    const Shape3& s = x.shape;
    if (s.d % 16 || s.h % 16 || s.w % 16) throw ShapeError("encoder input must be divisible by 16, got " + to_string(s));
    FeaturePyramid<T> out;
    const FeatureMap<T>* cur = &x;
    for (std::size_t i = 0; i < 4; ++i) {
      out.maps[i] = pools_[i].forward(blocks_[i].forward(*cur));
      cur = &out.maps[i];
    }
    return out;
  }

  /// `grads[i]` is the total gradient reaching M_{i+1} from outside the encoder.
  FeatureMap<T> backward(std::array<FeatureMap<T>, 4> grads, bool want_input_grad) {
    for (int i = 3; i >= 0; --i) {
      const auto u = static_cast<std::size_t>(i);
      FeatureMap<T> dx = blocks_[u].backward(pools_[u].backward(grads[u]), i > 0 || want_input_grad);
      if (i > 0) nn::add_into(grads[u - 1], dx);
      else return dx;
    }
    return {};
  }

  void collect(ParamList<T>& p) {
    for (auto& b : blocks_) b.collect(p);
  }

 private:
  std::array<nn::DoubleConv<T>, 4> blocks_;
  std::array<nn::MaxPool3d<T>, 4> pools_;
};

/// Implant position branch: four (upsample, concat skip, conv x2) stages and a 1x1x1
/// sigmoid head. Stages 1-3 fuse M3..M1; the last stage fuses the encoder input.
template <class T>
class PositionDecoder {
 public:
  PositionDecoder() = default;
  PositionDecoder(int stem_channels, const std::array<int, 4>& ch, std::mt19937_64& rng) {
    stages_[0] = nn::DoubleConv<T>("ippb0", ch[3] + ch[2], ch[2], rng);
    stages_[1] = nn::DoubleConv<T>("ippb1", ch[2] + ch[1], ch[1], rng);
    stages_[2] = nn::DoubleConv<T>("ippb2", ch[1] + ch[0], ch[0], rng);
    stages_[3] = nn::DoubleConv<T>("ippb3", ch[0] + stem_channels, ch[0], rng);
    head_ = nn::Conv3d<T>("ippb.head", ch[0], 1, 1, 1, true, rng);
  }

  FeatureMap<T> forward(const FeaturePyramid<T>& pyr, const FeatureMap<T>& stem) {
    const std::array<const FeatureMap<T>*, 4> skips{&pyr.maps[2], &pyr.maps[1], &pyr.maps[0], &stem};
    FeatureMap<T> x = pyr.maps[3];
    for (std::size_t s = 0; s < 4; ++s) {
      up_channels_[s] = x.channels;
      x = stages_[s].forward(nn::concat(up_[s].forward(x, skips[s]->shape), *skips[s]));
    }
    return sigmoid_.forward(head_.forward(x));
  }

  /// Returns gradients for M1..M4 and the stem input.
  std::pair<std::array<FeatureMap<T>, 4>, FeatureMap<T>> backward(const FeatureMap<T>& dprob) {
    FeatureMap<T> dx = head_.backward(sigmoid_.backward(dprob));
    std::array<FeatureMap<T>, 4> skip_grads;
    for (int s = 3; s >= 0; --s) {
      const auto u = static_cast<std::size_t>(s);
      const FeatureMap<T> dcat = stages_[u].backward(dx);
      const int up_c = up_channels_[u];
      skip_grads[u] = nn::slice_channels(dcat, up_c, dcat.channels - up_c);
      dx = up_[u].backward(nn::slice_channels(dcat, 0, up_c));
    }
    // skip_grads: [0] -> M3, [1] -> M2, [2] -> M1, [3] -> stem
    std::array<FeatureMap<T>, 4> pyramid{std::move(skip_grads[2]), std::move(skip_grads[1]), std::move(skip_grads[0]),
                                         std::move(dx)};
    return {std::move(pyramid), std::move(skip_grads[3])};
  }

  void collect(ParamList<T>& p) {
    for (auto& s : stages_) s.collect(p);
    head_.collect(p);
  }

 private:
  std::array<nn::DoubleConv<T>, 4> stages_;
  std::array<nn::Resize3d<T>, 4> up_;
  std::array<int, 4> up_channels_{};
  nn::Conv3d<T> head_;
  nn::Sigmoid<T> sigmoid_;
};

/// Slope branch: flatten(M4) -> FC(hidden) -> ReLU -> dropout -> FC(2).
template <class T>
class SlopeHead {
 public:
  SlopeHead() = default;
  SlopeHead(int flat, int hidden, double dropout, std::mt19937_64& rng)
      : fc1_("spb.fc1", flat, hidden, rng), drop_(dropout), fc2_("spb.fc2", hidden, 2, rng) {}

  int flat_size() const { return fc1_.in_features(); }

  std::array<T, 2> forward(const FeatureMap<T>& m4, bool training, std::mt19937_64& rng) {
    if (static_cast<int>(m4.size()) != flat_size()) {
      throw ShapeError("slope head expects " + std::to_string(flat_size()) + " flattened features, got " +
                       std::to_string(m4.size()));
    }
    m4_layout_ = {m4.channels, m4.shape};
    const std::vector<T> out = fc2_.forward(drop_.forward(act_.forward(fc1_.forward(m4.data)), training, rng));
    return {out[0], out[1]};
  }

  FeatureMap<T> backward(const std::array<T, 2>& dk) {
    std::vector<T> g = fc1_.backward(act_.backward(drop_.backward(fc2_.backward({dk[0], dk[1]}))));
    FeatureMap<T> out(m4_layout_.first, m4_layout_.second);
    out.data = std::move(g);
    return out;
  }

  void collect(ParamList<T>& p) {
    fc1_.collect(p);
    fc2_.collect(p);
  }

 private:
  nn::Linear<T> fc1_;
  nn::ReLU<T> act_;
  nn::Dropout<T> drop_;
  nn::Linear<T> fc2_;
  std::pair<int, Shape3> m4_layout_{0, {}};
};

}  // namespace net

template <class T>
struct NetOutput {
  nn::FeatureMap<T> probability;         // 1 channel, input resolution
  std::optional<std::array<T, 2>> slope;  // (k1, k2) when the slope branch ran
};

/// NDP (optional) -> encoder -> {position decoder, slope head (optional)}.
template <class T>
class RegFreeNet {
 public:
  explicit RegFreeNet(const NetworkConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(cfg_.init_seed);
    if (cfg_.use_ndp) ndp_.emplace(cfg_.ndp_config(), rng);
    encoder_ = net::Encoder<T>(cfg_.stem_channels(), cfg_.channels, rng);
    decoder_ = net::PositionDecoder<T>(cfg_.stem_channels(), cfg_.channels, rng);
    if (cfg_.use_spb) {
      const int flat = cfg_.channels[3] * static_cast<int>(cfg_.deepest_shape().voxels());
      spb_.emplace(flat, cfg_.spb_hidden, cfg_.spb_dropout, rng);
    }
    if (ndp_) ndp_->collect(params_);
    encoder_.collect(params_);
    decoder_.collect(params_);
    if (spb_) spb_->collect(params_);
  }

  RegFreeNet(const RegFreeNet&) = delete;
  RegFreeNet& operator=(const RegFreeNet&) = delete;

  const NetworkConfig& config() const { return cfg_; }
  const nn::ParamList<T>& parameters() const { return params_; }
  void zero_grad() { nn::zero_grad(params_); }

  /// The slope head runs when enabled and the input matches the configured size.
  /// In training mode a size mismatch with the slope head enabled is an error.
  NetOutput<T> forward(const nn::FeatureMap<T>& x, bool training, std::mt19937_64& dropout_rng) {
    if (x.channels != 1) throw ShapeError("network input must have one channel");
    stem_ = ndp_ ? ndp_->forward(x) : x;
    pyramid_ = encoder_.forward(stem_);
    NetOutput<T> out;
    out.probability = decoder_.forward(pyramid_, stem_);
    slope_ran_ = false;
    if (spb_) {
      if (x.shape == cfg_.input_size) {
        out.slope = spb_->forward(pyramid_.maps[3], training, dropout_rng);
        slope_ran_ = true;
      } else if (training) {
        throw ShapeError("training input " + to_string(x.shape) + " differs from configured input size " +
                         to_string(cfg_.input_size));
      }
    }
    return out;
  }

  NetOutput<T> predict(const nn::FeatureMap<T>& x) {
    std::mt19937_64 unused(0);
    return forward(x, false, unused);
  }

  /// Accumulates parameter gradients of a loss with the given output gradients.
  void backward(const nn::FeatureMap<T>& dprob, const std::optional<std::array<T, 2>>& dslope) {
    auto [grads, dstem] = decoder_.backward(dprob);
    if (slope_ran_ && dslope) nn::add_into(grads[3], spb_->backward(*dslope));
    nn::FeatureMap<T> dx = encoder_.backward(std::move(grads), ndp_.has_value());
    if (ndp_) {
      nn::add_into(dx, dstem);
      ndp_->backward(dx, false);
    }
  }

  ndp::NDP<T>* ndp() { return ndp_ ? &*ndp_ : nullptr; }
  net::Encoder<T>& encoder() { return encoder_; }
  const FeaturePyramid<T>& last_pyramid() const { return pyramid_; }

 private:
  NetworkConfig cfg_;
  std::optional<ndp::NDP<T>> ndp_;
  net::Encoder<T> encoder_;
  net::PositionDecoder<T> decoder_;
  std::optional<net::SlopeHead<T>> spb_;
  nn::ParamList<T> params_;

  nn::FeatureMap<T> stem_;
  FeaturePyramid<T> pyramid_;
  bool slope_ran_ = false;
};

}  // namespace regfreenet
