#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <vector>

#include "regfree/checkpoint.hpp"
#include "regfree/dataset.hpp"
#include "regfree/inference.hpp"
#include "regfree/labelgen.hpp"
#include "regfree/metrics.hpp"
#include "regfree/network.hpp"
#include "regfree/objectives.hpp"
#include "regfree/optim.hpp"
#include "regfree/slope.hpp"

namespace regfreenet {

struct TrainConfig {
  int batch_size = 4;
  double base_lr = 3e-4;
  double weight_decay = 5e-5;
  int warmup_steps = 0;
  int total_steps = 0;  // required, no default
  Shape3 crop_size{128, 128, 128};
  std::uint64_t seed = 0;
  double fg_fraction = 0.5;  // share of crops forced to contain a label voxel
  MaskingConfig masking{};
  LossConfig loss{};
  int checkpoint_every = 0;  // 0 writes only the final checkpoint
  double eval_overlap = 0.25;
  double threshold = 0.5;

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (total_steps < 1) throw ConfigError("total_steps is required and must be >= 1");
    schedule().validate();
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (!crop_size.positive()) throw ConfigError("crop_size must be positive");
    if (fg_fraction < 0.0 || fg_fraction > 1.0) throw ConfigError("fg_fraction must lie in [0, 1]");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
    masking.validate();
  }

  WarmupCosine schedule() const { return {base_lr, warmup_steps, total_steps}; }

  /// Hash of every field that shapes the optimisation trajectory.
  std::uint64_t fingerprint() const {
    std::ostringstream s;
    s.precision(17);
    s << batch_size << ';' << base_lr << ';' << weight_decay << ';' << warmup_steps << ';' << total_steps << ';'
      << to_string(crop_size) << ';' << seed << ';' << fg_fraction << ';' << masking.radius << ';'
      << masking.fill_value << ';' << masking.max_offset << ';' << masking.rng_seed << ';' << loss.dice_smooth << ';'
      << loss.ce_epsilon << ';' << loss.ce_normalize << ';' << loss.slope_weight;
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s.str()) {
      h ^= c;
      h *= 1099511628211ull;
    }
    return h;
  }

  static TrainConfig from_keyvalues(const io::KeyValues& kv) {
    TrainConfig c;
    c.batch_size = kv.get<int>("batch_size", c.batch_size);
    c.base_lr = kv.get<double>("base_lr", c.base_lr);
    c.weight_decay = kv.get<double>("weight_decay", c.weight_decay);
    c.warmup_steps = kv.get<int>("warmup_steps", c.warmup_steps);
    c.total_steps = kv.require<int>("total_steps");
    if (kv.has("crop_size")) {
      const auto s = kv.get_list<int>("crop_size", {});
      if (s.size() == 1) c.crop_size = Shape3::cube(s[0]);
      else if (s.size() == 3) c.crop_size = {s[0], s[1], s[2]};
      else throw ConfigError("crop_size needs 1 or 3 values");
    }
    c.seed = kv.get<std::uint64_t>("seed", c.seed);
    c.fg_fraction = kv.get<double>("fg_fraction", c.fg_fraction);
    c.masking.radius = kv.get<double>("label_radius", c.masking.radius);
    c.masking.fill_value = kv.get<float>("fill_value", c.masking.fill_value);
    c.masking.max_offset = kv.get<int>("max_offset", c.masking.max_offset);
    c.loss.dice_smooth = kv.get<double>("dice_smooth", c.loss.dice_smooth);
    c.loss.ce_epsilon = kv.get<double>("ce_epsilon", c.loss.ce_epsilon);
    c.loss.ce_normalize = kv.get_flag("ce_normalize", c.loss.ce_normalize);
    c.loss.slope_weight = kv.get<double>("slope_weight", c.loss.slope_weight);
    c.checkpoint_every = kv.get<int>("checkpoint_every", c.checkpoint_every);
    c.eval_overlap = kv.get<double>("eval_overlap", c.eval_overlap);
    c.threshold = kv.get<double>("threshold", c.threshold);
    c.validate();
    return c;
  }
};

inline double lr_at(int step, const TrainConfig& cfg) { return cfg.schedule().at(step); }

/// splitmix64 finaliser over (seed, stream, index); gives independent per-sample streams.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::uint64_t z = seed ^ (stream * 0x9E3779B97F4A7C15ull) ^ (index * 0xBF58476D1CE4E5B9ull + 0x94D049BB133111EBull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

struct TrainingSample {
  VoxelVolume<float> image;  // masked crop
  BinaryMask label;          // aligned label crop
  SlopePair slope;           // from the full label
};

/// Jitters and applies the implant mask, then takes an aligned crop of image and label.
/// Inputs smaller than the crop are zero-padded first.
inline TrainingSample make_training_sample(const VoxelVolume<float>& volume, const BinaryMask& label,
                                           const TrainConfig& cfg, std::mt19937_64& rng) {
  if (volume.shape() != label.shape()) throw ShapeError("volume and label shapes differ");
  TrainingSample out;
  out.slope = slopes_from_label(label);

  const BinaryMask moved = jitter_mask(label, cfg.masking, rng);
  VoxelVolume<float> masked = mask_implant(volume, moved, cfg.masking);
  BinaryMask lab = label;
  const Shape3 c = cfg.crop_size;
  if (masked.shape().d < c.d || masked.shape().h < c.h || masked.shape().w < c.w) {
    masked = pad_to(masked, c).first;
    lab = pad_to(lab, c).first;
  }
  const Shape3 s = masked.shape();

  std::bernoulli_distribution want_fg(cfg.fg_fraction);
  const bool fg = want_fg(rng);
  auto uniform = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  Index3 origin;
  if (fg && !lab.empty()) {
    std::vector<std::size_t> on;
    const auto bits = lab.data();
    for (std::size_t i = 0; i < bits.size(); ++i)
      if (bits[i]) on.push_back(i);
    const std::size_t pick = on[std::uniform_int_distribution<std::size_t>(0, on.size() - 1)(rng)];
    const int pz = static_cast<int>(pick / (static_cast<std::size_t>(s.h) * s.w));
    const int py = static_cast<int>((pick / s.w) % s.h);
    const int px = static_cast<int>(pick % s.w);
    origin.z = uniform(std::max(0, pz - c.d + 1), std::min(pz, s.d - c.d));
    origin.y = uniform(std::max(0, py - c.h + 1), std::min(py, s.h - c.h));
    origin.x = uniform(std::max(0, px - c.w + 1), std::min(px, s.w - c.w));
  } else {
    origin = {uniform(0, s.d - c.d), uniform(0, s.h - c.h), uniform(0, s.w - c.w)};
  }
  out.image = crop(masked, origin, c);
  out.label = crop(lab, origin, c);
  return out;
}

// Inference ----------------------------------------------------------------

struct ScanPrediction {
  VoxelVolume<float> probability;
  BinaryMask mask;
  std::optional<SlopePair> slope;
};

/// Sliding-window segmentation of a (masked) volume. The slope comes from one extra
/// window of the configured input size centred on the predicted implant, or on the
/// probability peak when nothing crosses the threshold. `seg_window` overrides the
/// segmentation tile (any multiple of 16).
inline ScanPrediction predict_scan(RegFreeNet<float>& model, const VoxelVolume<float>& volume, double overlap = 0.25,
                                   double threshold = 0.5, std::optional<Shape3> seg_window = {},
                                   BlendMode blend = BlendMode::uniform) {
  const Shape3 win = model.config().input_size;
  const Shape3 tile_shape = seg_window.value_or(win);
  if (!tile_shape.positive() || tile_shape.d % 16 || tile_shape.h % 16 || tile_shape.w % 16) {
    throw ConfigError("inference window must be a positive multiple of 16, got " + to_string(tile_shape));
  }
  ScanPrediction out;
  out.probability = sliding_window_infer(
      volume, [&](const VoxelVolume<float>& tile) { return nn::to_volume(model.predict(nn::from_volume(tile)).probability); },
      tile_shape, overlap, blend);
  out.mask = binarize(out.probability, threshold);
  if (!model.config().use_spb) return out;

  const Shape3 s = volume.shape();
  double cz = 0, cy = 0, cx = 0;
  if (!out.mask.empty()) {
    const auto pts = implant_coordinates(out.mask);
    for (const auto& p : pts) {
      cz += p.z;
      cy += p.y;
      cx += p.x;
    }
    cz /= pts.size();
    cy /= pts.size();
    cx /= pts.size();
  } else {
    const auto p = out.probability.data();
    const std::size_t i = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    cz = static_cast<double>(i / (static_cast<std::size_t>(s.h) * s.w));
    cy = static_cast<double>((i / s.w) % s.h);
    cx = static_cast<double>(i % s.w);
  }
  auto [padded, off] = pad_to(volume, win);
  const Shape3 ps = padded.shape();
  auto place = [](double c, int pad, int w, int len) {
    return std::clamp(static_cast<int>(std::lround(c + pad - w / 2.0)), 0, len - w);
  };
  const Index3 o{place(cz, off.z, win.d, ps.d), place(cy, off.y, win.h, ps.h), place(cx, off.x, win.w, ps.w)};
  const auto res = model.predict(nn::from_volume(crop(padded, o, win)));
  if (res.slope) out.slope = SlopePair{(*res.slope)[0], (*res.slope)[1]};
  return out;
}

struct ScanMetrics {
  std::string id;
  double dice = 0.0;
  double iou = 0.0;
  std::optional<SlopePair> predicted_slope;
  SlopePair true_slope;
  double slope_error = std::numeric_limits<double>::quiet_NaN();  // mean |dk| over both components
};

struct EvalSummary {
  std::vector<ScanMetrics> scans;
  double dice = 0.0;
  double iou = 0.0;
  double slope_mae = std::numeric_limits<double>::quiet_NaN();
};

/// Masks every scan with its own label (no jitter), predicts, and scores.
inline EvalSummary evaluate(RegFreeNet<float>& model, const std::vector<Scan>& scans, const MaskingConfig& masking,
                            double window_overlap = 0.25, double threshold = 0.5) {
  EvalSummary sum;
  std::vector<double> dice, iou, slope;
  for (const Scan& sc : scans) {
    const auto pred = predict_scan(model, mask_implant(sc.volume, sc.label, masking), window_overlap, threshold);
    ScanMetrics m;
    m.id = sc.id;
    const auto c = overlap(pred.mask, sc.label);
    m.dice = dice_score(c);
    m.iou = iou_score(c);
    m.true_slope = slopes_from_label(sc.label);
    m.predicted_slope = pred.slope;
    if (pred.slope) {
      m.slope_error = 0.5 * (std::abs(pred.slope->k1 - m.true_slope.k1) + std::abs(pred.slope->k2 - m.true_slope.k2));
      slope.push_back(m.slope_error);
    }
    dice.push_back(m.dice);
    iou.push_back(m.iou);
    sum.scans.push_back(m);
  }
  sum.dice = macro_mean(dice);
  sum.iou = macro_mean(iou);
  if (!slope.empty()) sum.slope_mae = macro_mean(slope);
  return sum;
}

// Training -----------------------------------------------------------------

/// Deterministic single-writer training loop. Every random draw is derived from
/// (seed, global sample index) or (seed, epoch), so a run resumed from a checkpoint
/// replays exactly the same samples, masks and dropout patterns.
class Trainer {
 public:
  Trainer(const TrainConfig& tc, const NetworkConfig& nc, std::vector<Scan> train)
      : tc_(tc), model_(nc), data_(std::move(train)) {
    tc_.validate();
    if (data_.empty()) throw ConfigError("training set is empty");
    if (tc_.crop_size != nc.input_size) {
      throw ConfigError("crop_size " + to_string(tc_.crop_size) + " must equal the network input size " +
                        to_string(nc.input_size));
    }
    AdamW<float>::Hyper h;
    h.weight_decay = tc_.weight_decay;
    opt_ = AdamW<float>(model_.parameters(), h);
  }

  const TrainConfig& config() const { return tc_; }
  RegFreeNet<float>& model() { return model_; }
  long current_step() const { return step_; }
  const std::vector<StepLog>& history() const { return log_; }
  AdamW<float>& optimizer() { return opt_; }

  /// Index into the training set used for global sample `g`.
  std::size_t scan_for(long g) {
    const std::size_t n = data_.size();
    const long epoch = g / static_cast<long>(n);
    if (epoch != perm_epoch_) {
      perm_.resize(n);
      std::iota(perm_.begin(), perm_.end(), std::size_t{0});
      std::mt19937_64 rng(mix_seed(tc_.seed, 1, static_cast<std::uint64_t>(epoch)));
      std::shuffle(perm_.begin(), perm_.end(), rng);
      perm_epoch_ = epoch;
    }
    return perm_[static_cast<std::size_t>(g % static_cast<long>(n))];
  }

  TrainingSample sample(long g) {
    const Scan& sc = data_[scan_for(g)];
    std::mt19937_64 rng(mix_seed(tc_.seed, 2, static_cast<std::uint64_t>(g)));
    return make_training_sample(sc.volume, sc.label, tc_, rng);
  }

  /// One optimizer step over `batch_size` samples; returns the batch-mean losses.
  StepLog step() {
    if (step_ >= tc_.total_steps) throw BoundsError("training already reached total_steps");
    const bool spb = model_.config().use_spb;
    const double inv_b = 1.0 / tc_.batch_size;
    StepLog rec;
    rec.step = step_;
    rec.lr = lr_at(static_cast<int>(step_), tc_);

    model_.zero_grad();
    for (int b = 0; b < tc_.batch_size; ++b) {
      const long g = step_ * tc_.batch_size + b;
      const TrainingSample s = sample(g);
      std::mt19937_64 drop(mix_seed(tc_.seed, 3, static_cast<std::uint64_t>(g)));
      const auto out = model_.forward(nn::from_volume(s.image), true, drop);

      nn::FeatureMap<float> dprob(1, out.probability.shape);
      std::array<double, 2> gslope{};
      std::optional<SlopePair> pk;
      if (out.slope) pk = SlopePair{(*out.slope)[0], (*out.slope)[1]};
      const LossBreakdown l = total_loss<float>(out.probability.data, s.label.data(), pk ? &*pk : nullptr, &s.slope,
                                                spb, tc_.loss, std::span<float>(dprob.data), &gslope);
      for (auto& v : dprob.data) v = static_cast<float>(v * inv_b);
      std::optional<std::array<float, 2>> dk;
      if (spb) dk = std::array<float, 2>{static_cast<float>(gslope[0] * inv_b), static_cast<float>(gslope[1] * inv_b)};
      model_.backward(dprob, dk);

      rec.dice += l.dice * inv_b;
      rec.ce += l.ce * inv_b;
      rec.slope += l.slope * inv_b;
      rec.total += l.total * inv_b;
    }
    opt_.step(rec.lr);
    ++step_;
    log_.push_back(rec);
    return rec;
  }

  /// Steps until `until` (clamped to total_steps). With an output directory, writes
  /// checkpoints every `checkpoint_every` steps plus one at the end, and the loss log.
  void run(long until, const fs::path& out_dir = {}, const std::function<void(const StepLog&)>& on_step = {}) {
    until = std::min<long>(until, tc_.total_steps);
    while (step_ < until) {
      const StepLog r = step();
      if (on_step) on_step(r);
      if (!out_dir.empty() && tc_.checkpoint_every > 0 && step_ % tc_.checkpoint_every == 0 && step_ < until) {
        save(out_dir / "checkpoint.bin");
        write_loss_log(out_dir / "loss.tsv");
      }
    }
    if (!out_dir.empty()) {
      save(out_dir / "checkpoint.bin");
      write_loss_log(out_dir / "loss.tsv");
    }
  }

  ckpt::Header header() const {
    return {model_.config().fingerprint(), tc_.fingerprint(), step_};
  }

  void save(const fs::path& path) { ckpt::save(path, header(), log_, model_.parameters(), opt_); }

  void resume(const fs::path& path) {
    const auto h = ckpt::load(path, header(), log_, model_.parameters(), opt_);
    step_ = h.step;
    if (static_cast<long>(log_.size()) != step_) throw FormatError("checkpoint loss log does not match its step");
  }

  void write_loss_log(const fs::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "step\tlr\tdice\tce\tslope\ttotal\n" << std::setprecision(9);
    for (const auto& r : log_) {
      out << r.step << '\t' << r.lr << '\t' << r.dice << '\t' << r.ce << '\t' << r.slope << '\t' << r.total << '\n';
    }
  }

  EvalSummary evaluate_on(const std::vector<Scan>& scans) {
    return evaluate(model_, scans, tc_.masking, tc_.eval_overlap, tc_.threshold);
  }
  EvalSummary evaluate_training_set() { return evaluate_on(data_); }

 private:
  TrainConfig tc_;
  RegFreeNet<float> model_;
  AdamW<float> opt_;
  std::vector<Scan> data_;
  long step_ = 0;
  std::vector<StepLog> log_;
  std::vector<std::size_t> perm_;
  long perm_epoch_ = -1;
};

}  // namespace regfreenet
