#pragma once

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "regfree/dataset.hpp"
#include "regfree/io.hpp"
#include "regfree/labelgen.hpp"
#include "regfree/metrics.hpp"
#include "regfree/slope.hpp"
#include "regfree/synthdata.hpp"
#include "regfree/trainer.hpp"

namespace regfreenet::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,       // no command, unknown command
  kBadFlags = 3,    // missing or malformed flags
  kIo = 4,          // unreadable or unwritable files
  kValidation = 5,  // data or configuration rejected
};

inline double round4(double v) { return std::round(v * 1e4) / 1e4; }

inline std::string fixed4(double v) {
  if (std::isnan(v)) return "-";
  std::ostringstream s;
  s << std::fixed << std::setprecision(4) << v;
  return s.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

inline json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline io::KeyValues load_config(const fs::path& path) { return io::KeyValues::load(path); }

inline json slope_json(const SlopePair& k) { return json{{"k1", k.k1}, {"k2", k.k2}}; }

inline json eval_json(const EvalSummary& s, const std::string& method, bool ndp, bool spb) {
  json scans = json::array();
  for (const auto& m : s.scans) {
    json j{{"id", m.id}, {"dice", m.dice}, {"iou", m.iou}, {"true_slope", slope_json(m.true_slope)}};
    if (m.predicted_slope) {
      j["predicted_slope"] = slope_json(*m.predicted_slope);
      j["slope_error"] = m.slope_error;
    }
    scans.push_back(j);
  }
  json mean{{"dice", s.dice}, {"iou", s.iou}};
  if (!std::isnan(s.slope_mae)) mean["slope_mae"] = s.slope_mae;
  return json{{"method", method}, {"ndp", ndp}, {"spb", spb}, {"scans", scans}, {"mean", mean}};
}

/// Restores a trained model from a `train` output directory (config.txt + checkpoint.bin).
inline std::unique_ptr<RegFreeNet<float>> load_model(const fs::path& dir) {
  const auto kv = load_config(dir / "config.txt");
  const NetworkConfig nc = NetworkConfig::from_keyvalues(kv);
  const TrainConfig tc = TrainConfig::from_keyvalues(kv);
  auto model = std::make_unique<RegFreeNet<float>>(nc);
  AdamW<float> opt(model->parameters(), {});
  std::vector<StepLog> log;
  ckpt::load(dir / "checkpoint.bin", {nc.fingerprint(), tc.fingerprint(), 0}, log, model->parameters(), opt);
  return model;
}

inline std::string method_name(bool ndp, bool spb) {
  std::string m = "U-Net";
  if (ndp) m += "+NDP";
  if (spb) m += "+SPB";
  return m;
}

// Sub-commands ---------------------------------------------------------------

struct SynthArgs {
  int n = 8;
  int shape = 64;
  fs::path out;
  std::uint64_t seed = 0;
  int n_teeth = 5;
  double test_fraction = 0.25;
  double max_tilt = 0.4;
  double label_radius = 0.0;
};

inline int run_synth(const SynthArgs& a, std::ostream& log) {
  if (a.n < 1) throw ConfigError("--n must be >= 1");
  if (a.n_teeth < 3) throw ConfigError("--n-teeth must be >= 3");
  if (a.test_fraction < 0.0 || a.test_fraction >= 1.0) throw ConfigError("--test-fraction must lie in [0, 1)");
  const int n_test = static_cast<int>(std::lround(a.n * a.test_fraction));
  const synth::TiltRange tilt{0.0, a.max_tilt};
  std::ostringstream manifest;
  manifest << "# volume landmarks split patient_id\n";
  for (int i = 0; i < a.n; ++i) {
    std::mt19937_64 rng(mix_seed(a.seed, 7, static_cast<std::uint64_t>(i)));
    synth::PhantomSpec spec;
    spec.seed = rng();
    spec.shape = Shape3::cube(a.shape);
    spec.n_teeth = a.n_teeth;
    spec.label_radius = a.label_radius;
    std::optional<synth::Phantom> ph;
    for (int attempt = 0; attempt < 100 && !ph; ++attempt) {
      spec.gap_index = std::uniform_int_distribution<int>(1, a.n_teeth - 2)(rng);
      spec.tilt = tilt.sample(rng);
      try {
        ph = synth::generate_phantom(spec);
      } catch (const GeometryError&) {
      }
    }
    if (!ph) throw GeometryError("could not place an implant in phantom " + std::to_string(i));
    char name[32];
    std::snprintf(name, sizeof name, "phantom_%03d", i);
    io::save_volume(ph->volume, a.out / "volumes" / name);
    io::save_mask(ph->label, a.out / "labels" / name, ph->volume.spacing());
    io::write_landmarks({ph->landmarks}, a.out / "landmarks" / (std::string(name) + ".lmk"));
    const char* split = i < a.n - n_test ? "train" : "test";
    manifest << "volumes/" << name << ".hdr landmarks/" << name << ".lmk " << split << " P" << std::setw(3)
             << std::setfill('0') << i << std::setfill(' ') << '\n';
  }
  write_text(a.out / "manifest.txt", manifest.str());
  log << "wrote " << a.n << " phantoms (" << n_test << " test) to " << a.out.string() << '\n';
  return kOk;
}

/// Shape and spacing come from `like` when given, otherwise from `shape` (1 or 3 values).
inline int run_make_labels(const fs::path& like, const std::vector<int>& shape, const fs::path& landmarks, double radius,
                           const fs::path& out, std::ostream& log) {
  Shape3 s;
  Spacing spacing;
  if (!like.empty()) {
    const auto h = io::read_header(like);
    s = h.shape;
    spacing = h.spacing;
  } else if (shape.size() == 1) {
    s = Shape3::cube(shape[0]);
  } else if (shape.size() == 3) {
    s = {shape[0], shape[1], shape[2]};
  } else {
    throw ConfigError("make-labels needs --like <volume> or --shape with 1 or 3 values");
  }
  const auto label = rasterize_implants(io::read_landmarks(landmarks), s, radius);
  io::save_mask(label, out, spacing);
  log << "label with " << label.popcount() << " voxels -> " << io::header_path(out).string() << '\n';
  return kOk;
}

/// The implant region is either rasterised from `landmarks` or read from `label`.
inline int run_mask(const fs::path& volume, const fs::path& landmarks, const fs::path& label_path,
                    const MaskingConfig& cfg, const fs::path& out, std::ostream& log) {
  const auto v = io::load_volume<float>(volume);
  if (landmarks.empty() == label_path.empty()) throw ConfigError("mask needs exactly one of --landmarks and --label");
  const auto label = label_path.empty() ? rasterize_implants(io::read_landmarks(landmarks), v.shape(), cfg.radius)
                                        : io::load_mask(label_path);
  std::mt19937_64 rng(cfg.rng_seed);
  const auto m = cfg.max_offset > 0 ? jitter_mask(label, cfg, rng) : label;
  io::save_volume(mask_implant(v, m, cfg), out);
  log << "masked " << m.popcount() << " voxels -> " << io::header_path(out).string() << '\n';
  return kOk;
}

inline int run_slope(const fs::path& label_path, const fs::path& out, std::ostream& log) {
  const auto label = io::load_mask(label_path);
  const SlopePair k = slopes_from_label(label);
  json j{{"label", label_path.string()}, {"k1", k.k1}, {"k2", k.k2}};
  if (!out.empty()) write_text(out, j.dump(2) + "\n");
  log << std::setprecision(10) << "k1 " << k.k1 << "\nk2 " << k.k2 << '\n';
  return kOk;
}

inline int run_train(const fs::path& config, const fs::path& data, const fs::path& out, bool resume,
                     std::ostream& log) {
  const auto kv = load_config(config);
  const NetworkConfig nc = NetworkConfig::from_keyvalues(kv);
  const TrainConfig tc = TrainConfig::from_keyvalues(kv);
  const auto entries = load_manifest(data);
  const auto train_entries = select_split(entries, "train");
  if (train_entries.empty()) throw ConfigError("manifest has no 'train' entries");
  const auto scans = load_scans(train_entries, tc.masking.radius);

  fs::create_directories(out);
  {
    std::ifstream src(config);
    std::ostringstream text;
    text << src.rdbuf();
    write_text(out / "config.txt", text.str());
  }
  Trainer trainer(tc, nc, scans);
  if (resume && fs::exists(out / "checkpoint.bin")) {
    trainer.resume(out / "checkpoint.bin");
    log << "resumed at step " << trainer.current_step() << '\n';
  }
  const long every = std::max(1, tc.total_steps / 20);
  trainer.run(tc.total_steps, out, [&](const StepLog& r) {
    if ((r.step + 1) % every == 0 || r.step + 1 == tc.total_steps) {
      log << "step " << r.step + 1 << "/" << tc.total_steps << " lr " << std::setprecision(4) << r.lr << " loss "
          << r.total << " (dice " << r.dice << ", ce " << r.ce << ", slope " << r.slope << ")\n";
    }
  });
  const EvalSummary s = trainer.evaluate_training_set();
  write_text(out / "train_eval.json", eval_json(s, method_name(nc.use_ndp, nc.use_spb), nc.use_ndp, nc.use_spb).dump(2) + "\n");
  log << "training-set dice " << fixed4(s.dice) << " iou " << fixed4(s.iou) << " slope mae " << fixed4(s.slope_mae)
      << '\n';
  return kOk;
}

struct InferArgs {
  fs::path model;  // train output directory, or the checkpoint.bin inside it
  fs::path volume;
  fs::path data;
  std::string split = "test";
  fs::path out;
  std::vector<int> window;  // empty: the trained input size
  std::optional<double> overlap;
  std::optional<double> threshold;
  bool gaussian = false;
};

/// Writes <id>.hdr (mask), <id>.prob.hdr (probability) and <id>.slope.json per scan.
inline int run_infer(const InferArgs& a, std::ostream& log) {
  const fs::path model_dir = fs::is_regular_file(a.model) ? a.model.parent_path() : a.model;
  auto model = load_model(model_dir);
  const TrainConfig tc = TrainConfig::from_keyvalues(load_config(model_dir / "config.txt"));
  std::optional<Shape3> window;
  if (a.window.size() == 1) window = Shape3::cube(a.window[0]);
  else if (a.window.size() == 3) window = Shape3{a.window[0], a.window[1], a.window[2]};
  else if (!a.window.empty()) throw ConfigError("--window needs 1 or 3 values");
  const double overlap = a.overlap.value_or(tc.eval_overlap);
  const double threshold = a.threshold.value_or(tc.threshold);
  const fs::path& out = a.out;
  auto emit = [&](const std::string& id, const VoxelVolume<float>& input) {
    const auto pred = predict_scan(*model, input, overlap, threshold, window,
                                   a.gaussian ? BlendMode::gaussian : BlendMode::uniform);
    io::save_mask(pred.mask, out / id, input.spacing());
    io::save_volume(pred.probability, out / (id + ".prob"));
    if (pred.slope) {
      write_text(out / (id + ".slope.json"), json{{"k1", pred.slope->k1}, {"k2", pred.slope->k2}}.dump(2) + "\n");
    }
    log << id << ": " << pred.mask.popcount() << " voxels predicted\n";
  };
  fs::create_directories(out);
  if (!a.volume.empty()) {
    emit(io::header_path(a.volume).stem().string(), io::load_volume<float>(a.volume));
  } else {
    for (const auto& e : select_split(load_manifest(a.data), a.split)) {
      const Scan sc = load_scan(e, tc.masking.radius);
      emit(sc.id, mask_implant(sc.volume, sc.label, tc.masking));
    }
  }
  return kOk;
}

/// Predictions stored as uint8 are masks; float volumes are binarised at `threshold`.
inline BinaryMask load_prediction(const fs::path& path, double threshold) {
  if (io::read_header(path).dtype == io::DType::uint8) return io::load_mask(path);
  return binarize(io::load_volume<float>(path), threshold);
}

inline int run_eval(const fs::path& pred_dir, const fs::path& gt_dir, const fs::path& out, const std::string& method,
                    bool ndp, bool spb, double threshold, std::ostream& log) {
  if (!fs::is_directory(gt_dir)) throw IoError("ground-truth directory " + gt_dir.string() + " not found");
  std::vector<fs::path> gts;
  for (const auto& e : fs::directory_iterator(gt_dir))
    if (e.path().extension() == ".hdr") gts.push_back(e.path());
  std::sort(gts.begin(), gts.end());
  if (gts.empty()) throw IoError("no label volumes in " + gt_dir.string());

  EvalSummary s;
  std::vector<double> dice, iou, slope;
  for (const auto& g : gts) {
    const std::string id = g.stem().string();
    const auto gt = io::load_mask(g);
    const auto pred = load_prediction(pred_dir / (id + ".hdr"), threshold);
    ScanMetrics m;
    m.id = id;
    const auto c = overlap(pred, gt);
    m.dice = dice_score(c);
    m.iou = iou_score(c);
    m.true_slope = gt.empty() ? SlopePair{} : slopes_from_label(gt);
    if (const fs::path sp = pred_dir / (id + ".slope.json"); fs::exists(sp)) {
      const json j = read_json(sp);
      m.predicted_slope = SlopePair{j.at("k1").get<double>(), j.at("k2").get<double>()};
      m.slope_error =
          0.5 * (std::abs(m.predicted_slope->k1 - m.true_slope.k1) + std::abs(m.predicted_slope->k2 - m.true_slope.k2));
      slope.push_back(m.slope_error);
    }
    dice.push_back(m.dice);
    iou.push_back(m.iou);
    s.scans.push_back(m);
    log << id << "  dice " << fixed4(m.dice) << "  iou " << fixed4(m.iou) << '\n';
  }
  s.dice = macro_mean(dice);
  s.iou = macro_mean(iou);
  if (!slope.empty()) s.slope_mae = macro_mean(slope);
  log << "mean  dice " << fixed4(s.dice) << "  iou " << fixed4(s.iou) << '\n';
  if (!out.empty()) write_text(out, eval_json(s, method, ndp, spb).dump(2) + "\n");
  return kOk;
}

/// Renders evaluation JSON files as a Method | NDP | SPB | Dice | IoU table.
inline std::pair<std::string, json> render_report(const std::vector<fs::path>& inputs) {
  std::vector<json> rows;
  for (const auto& p : inputs) {
    const json j = read_json(p);
    if (!j.contains("mean") || !j["mean"].contains("dice") || !j["mean"].contains("iou")) {
      throw FormatError(p.string() + " is not an evaluation report");
    }
    json row{{"method", j.value("method", p.stem().string())},
             {"ndp", j.value("ndp", false)},
             {"spb", j.value("spb", false)},
             {"dice", round4(j["mean"]["dice"].get<double>())},
             {"iou", round4(j["mean"]["iou"].get<double>())}};
    if (j["mean"].contains("slope_mae")) row["slope_mae"] = round4(j["mean"]["slope_mae"].get<double>());
    row["source"] = p.string();
    rows.push_back(row);
  }
  std::size_t wm = 6;
  for (const auto& r : rows) wm = std::max(wm, r["method"].get<std::string>().size());
  std::ostringstream t;
  auto mark = [](bool on) { return on ? "yes" : "no"; };
  t << std::left << std::setw(static_cast<int>(wm)) << "Method" << " | NDP | SPB | Dice   | IoU\n";
  t << std::string(wm, '-') << "-|-----|-----|--------|-------\n";
  for (const auto& r : rows) {
    t << std::left << std::setw(static_cast<int>(wm)) << r["method"].get<std::string>() << " | " << std::setw(3)
      << mark(r["ndp"].get<bool>()) << " | " << std::setw(3) << mark(r["spb"].get<bool>()) << " | "
      << fixed4(r["dice"].get<double>()) << " | " << fixed4(r["iou"].get<double>()) << '\n';
  }
  return {t.str(), json{{"rows", rows}}};
}

inline int run_report(const std::vector<fs::path>& inputs, const fs::path& out, std::ostream& log) {
  const auto [text, j] = render_report(inputs);
  log << text;
  if (!out.empty()) {
    write_text(fs::path(out.string() + ".txt"), text);
    write_text(fs::path(out.string() + ".json"), j.dump(2) + "\n");
  }
  return kOk;
}

// Dispatch -------------------------------------------------------------------

/// Runs one sub-command and maps failures to distinct exit codes.
inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Implant position and slope prediction from masked CBCT volumes", "regfree"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate synthetic jaw phantoms and a manifest");
  c_synth->add_option("--n", synth.n, "Number of phantoms");
  c_synth->add_option("--shape", synth.shape, "Cube edge length in voxels");
  c_synth->add_option("--out", synth.out, "Output directory")->required();
  c_synth->add_option("--seed", synth.seed, "Base seed");
  c_synth->add_option("--n-teeth", synth.n_teeth, "Teeth per arch");
  c_synth->add_option("--test-fraction", synth.test_fraction, "Share of phantoms in the test split");
  c_synth->add_option("--max-tilt", synth.max_tilt, "Largest absolute slope component");
  c_synth->add_option("--label-radius", synth.label_radius, "Label radius in voxels (0 = scale with shape)");

  fs::path volume, landmarks, out_path, label, config, data, pred_dir, gt_dir;
  std::vector<int> shape;
  double radius = 14.0, threshold = 0.5;
  std::string split = "test", method = "model";
  bool ndp = false, spb = false, resume = false;
  MaskingConfig mcfg;
  std::vector<fs::path> inputs;

  auto* c_labels = app.add_subcommand("make-labels", "Rasterise cylindrical implant labels from landmarks");
  auto* o_like = c_labels->add_option("--like,--volume", volume, "Reference volume (shape and spacing)");
  auto* o_shape = c_labels->add_option("--shape", shape, "Grid shape, 1 or 3 values, when no reference volume");
  o_like->excludes(o_shape);
  o_shape->excludes(o_like);
  c_labels->add_option("--landmarks", landmarks, "Landmark file")->required();
  c_labels->add_option("--radius", radius, "Label radius in voxels");
  c_labels->add_option("--out", out_path, "Output mask")->required();

  auto* c_mask = app.add_subcommand("mask", "Blank the implant region of a scan");
  c_mask->add_option("--volume", volume, "Input volume")->required();
  auto* o_lmk = c_mask->add_option("--landmarks", landmarks, "Landmark file");
  auto* o_lab = c_mask->add_option("--label", label, "Implant label volume instead of landmarks");
  o_lmk->excludes(o_lab);
  o_lab->excludes(o_lmk);
  c_mask->add_option("--radius", mcfg.radius, "Mask radius in voxels");
  c_mask->add_option("--fill", mcfg.fill_value, "Fill intensity");
  c_mask->add_option("--max-offset", mcfg.max_offset, "Random translation of the mask per axis");
  c_mask->add_option("--seed", mcfg.rng_seed, "Seed of the translation draw");
  c_mask->add_option("--out", out_path, "Output volume")->required();
  mcfg.max_offset = 0;

  auto* c_slope = app.add_subcommand("slope", "Least-squares implant slopes of a label");
  c_slope->add_option("--label", label, "Label volume")->required();
  c_slope->add_option("--out", out_path, "Optional JSON output");

  auto* c_train = app.add_subcommand("train", "Train a model");
  c_train->add_option("--config", config, "Key-value config file")->required();
  c_train->add_option("--data", data, "Manifest")->required();
  c_train->add_option("--out", out_path, "Output directory")->required();
  c_train->add_flag("--resume", resume, "Continue from <out>/checkpoint.bin when present");

  InferArgs infer;
  double infer_overlap = 0.0, infer_threshold = 0.0;
  auto* c_infer = app.add_subcommand("infer", "Predict implant masks, probabilities and slopes");
  c_infer->add_option("--model,--checkpoint", infer.model, "Directory written by train, or its checkpoint.bin")
      ->required();
  auto* o_vol = c_infer->add_option("--volume", infer.volume, "Single (already masked) volume");
  auto* o_data = c_infer->add_option("--data", infer.data, "Manifest; scans are masked with their landmarks");
  c_infer->add_option("--split", infer.split, "Manifest split to predict");
  c_infer->add_option("--window", infer.window, "Segmentation window, 1 or 3 multiples of 16");
  auto* o_overlap = c_infer->add_option("--overlap", infer_overlap, "Window overlap fraction");
  auto* o_thr = c_infer->add_option("--threshold", infer_threshold, "Binarisation threshold");
  c_infer->add_flag("--gaussian", infer.gaussian, "Gaussian instead of uniform blending");
  c_infer->add_option("--out", infer.out, "Output directory")->required();
  o_vol->excludes(o_data);
  o_data->excludes(o_vol);

  auto* c_eval = app.add_subcommand("eval", "Score predicted masks against labels");
  c_eval->add_option("--pred,--pred-dir", pred_dir, "Directory of predicted masks or probabilities")->required();
  c_eval->add_option("--gt,--gt-dir", gt_dir, "Directory of label masks")->required();
  c_eval->add_option("--threshold", threshold, "Threshold for probability predictions");
  c_eval->add_option("--out,--report", out_path, "JSON report");
  c_eval->add_option("--method", method, "Method name for reports");
  c_eval->add_flag("--ndp", ndp, "Record the model as using NDP");
  c_eval->add_flag("--spb", spb, "Record the model as using the slope branch");

  auto* c_report = app.add_subcommand("report", "Tabulate evaluation reports");
  c_report->add_option("inputs", inputs, "Evaluation JSON files")->required();
  c_report->add_option("--out", out_path, "Output stem; writes <stem>.txt and <stem>.json");

  if (argc <= 1) {
    out << app.help();
    return kUsage;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::RequiredError& e) {
    // Also raised when no sub-command was given.
    err << "error: " << e.what() << '\n';
    return app.get_subcommands().empty() ? kUsage : kBadFlags;
  } catch (const CLI::ExtrasError& e) {
    err << "error: " << e.what() << '\n';
    return app.get_subcommands().empty() ? kUsage : kBadFlags;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kBadFlags;
  }

  try {
    if (c_synth->parsed()) return run_synth(synth, out);
    if (c_labels->parsed()) return run_make_labels(volume, shape, landmarks, radius, out_path, out);
    if (c_mask->parsed()) return run_mask(volume, landmarks, label, mcfg, out_path, out);
    if (c_slope->parsed()) return run_slope(label, out_path, out);
    if (c_train->parsed()) return run_train(config, data, out_path, resume, out);
    if (c_infer->parsed()) {
      if (infer.volume.empty() && infer.data.empty()) {
        err << "error: infer needs --volume or --data\n";
        return kBadFlags;
      }
      if (o_overlap->count()) infer.overlap = infer_overlap;
      if (o_thr->count()) infer.threshold = infer_threshold;
      return run_infer(infer, out);
    }
    if (c_eval->parsed()) return run_eval(pred_dir, gt_dir, out_path, method, ndp, spb, threshold, out);
    if (c_report->parsed()) return run_report(inputs, out_path, out);
  } catch (const IoError& e) {
    err << "io error: " << e.what() << '\n';
    return kIo;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "io error: " << e.what() << '\n';
    return kIo;
  } catch (const Error& e) {
    err << "invalid input: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}

}  // namespace regfreenet::cli
