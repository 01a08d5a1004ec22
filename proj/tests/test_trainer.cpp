#include <cstdlib>
#include <fstream>
#include <sstream>

#include "regfree/synthdata.hpp"
#include "regfree/trainer.hpp"
#include "test_util.hpp"

using namespace regfreenet;

namespace {

NetworkConfig small_net() {
  NetworkConfig c;
  c.channels = {4, 8, 16, 32};
  c.input_size = Shape3::cube(16);
  c.ndp_branch_channels = 4;
  c.ndp_gcn_hidden = 4;
  c.spb_hidden = 16;
  c.spb_dropout = 0.1;
  return c;
}

TrainConfig small_train(int total) {
  TrainConfig t;
  t.batch_size = 2;
  t.base_lr = 2e-3;
  t.total_steps = total;
  t.crop_size = Shape3::cube(16);
  t.seed = 11;
  t.fg_fraction = 1.0;
  t.masking.radius = 2;
  t.masking.max_offset = 1;
  return t;
}

Scan phantom_scan(std::uint64_t seed, int gap, SlopePair tilt = {0.1, -0.1}) {
  const auto p = synth::generate_phantom(seed, Shape3::cube(32), 5, gap, tilt);
  return {"s" + std::to_string(seed), "P" + std::to_string(seed), p.volume, p.label};
}

}  // namespace

TEST(Schedule, WarmupCosineEndpoints) {
  TrainConfig t;
  t.base_lr = 1e-3;
  t.total_steps = 100;
  EXPECT_DOUBLE_EQ(lr_at(0, t), 1e-3);
  EXPECT_NEAR(lr_at(50, t), 5e-4, 1e-15);
  EXPECT_NEAR(lr_at(100, t), 0.0, 1e-18);
  for (int s = 1; s <= 100; ++s) EXPECT_LE(lr_at(s, t), lr_at(s - 1, t));
  EXPECT_THROW(lr_at(101, t), BoundsError);
  EXPECT_THROW(lr_at(-1, t), BoundsError);

  t.warmup_steps = 10;
  EXPECT_EQ(lr_at(0, t), 0.0);
  EXPECT_NEAR(lr_at(5, t), 5e-4, 1e-15);
  EXPECT_NEAR(lr_at(10, t), 1e-3, 1e-15);
  EXPECT_NEAR(lr_at(55, t), 5e-4, 1e-15);
  // Continuity across the warmup boundary.
  EXPECT_NEAR(lr_at(9, t), lr_at(10, t), 1e-4 + 1e-12);
}

TEST(Schedule, ConfigValidation) {
  TrainConfig t;
  EXPECT_THROW(t.validate(), ConfigError);  // total_steps has no default
  t.total_steps = 10;
  EXPECT_NO_THROW(t.validate());
  t.warmup_steps = 10;
  EXPECT_THROW(t.validate(), ConfigError);
  t.warmup_steps = 0;
  t.fg_fraction = 1.5;
  EXPECT_THROW(t.validate(), ConfigError);
}

TEST(TrainConfig, KeyValuesRoundTrip) {
  std::istringstream in("total_steps = 40\nbatch_size = 3\ncrop_size = 16\nseed = 5\nmax_offset = 2\n");
  const auto kv = io::KeyValues::parse(in);
  const TrainConfig t = TrainConfig::from_keyvalues(kv);
  EXPECT_EQ(t.total_steps, 40);
  EXPECT_EQ(t.batch_size, 3);
  EXPECT_EQ(t.crop_size, Shape3::cube(16));
  EXPECT_EQ(t.masking.max_offset, 2);
  std::istringstream missing("batch_size = 3\n");
  EXPECT_THROW(TrainConfig::from_keyvalues(io::KeyValues::parse(missing)), ConfigError);
}

TEST(AdamW, ZeroGradientAndNoDecayLeavesParameters) {
  nn::Parameter<float> p("w", {5});
  p.value = {1, -2, 3, 0.5f, 0};
  const auto before = p.value;
  AdamW<float>::Hyper h;
  h.weight_decay = 0.0;
  AdamW<float> opt({&p}, h);
  for (int i = 0; i < 10; ++i) opt.step(1e-2);
  EXPECT_EQ(p.value, before);
  EXPECT_EQ(opt.step_count(), 10);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  nn::Parameter<double> p("w", {3});
  p.value = {1, 1, 1};
  p.grad = {0.5, -2, 0};
  AdamW<double>::Hyper h;
  h.weight_decay = 0.0;
  AdamW<double> opt({&p}, h);
  opt.step(0.1);
  EXPECT_NEAR(p.value[0], 0.9, 1e-6);
  EXPECT_NEAR(p.value[1], 1.1, 1e-6);
  EXPECT_EQ(p.value[2], 1.0);
}

TEST(TrainingSample, FullCropKeepsGeometry) {
  const auto ph = synth::generate_phantom(3, Shape3::cube(32), 5, 2, {0.2, 0.0});
  TrainConfig t = small_train(1);
  t.crop_size = Shape3::cube(32);
  t.masking.max_offset = 0;
  std::mt19937_64 rng(1);
  const auto s = make_training_sample(ph.volume, ph.label, t, rng);
  EXPECT_EQ(s.label, ph.label);
  EXPECT_EQ(s.image, mask_implant(ph.volume, ph.label, t.masking));
  EXPECT_NEAR(s.slope.k1, slopes_from_label(ph.label).k1, 1e-15);
  // No implant intensity survives an unshifted mask.
  for (std::size_t i = 0; i < s.image.size(); ++i) {
    if (ph.implant_body.data()[i]) ASSERT_EQ(s.image.data()[i], 0.0f);
  }
  for (float v : s.image.data()) ASSERT_NE(v, synth::kImplant);
}

TEST(TrainingSample, DeterministicForEqualSeeds) {
  const auto ph = synth::generate_phantom(4, Shape3::cube(32), 5, 1, {});
  const TrainConfig t = small_train(1);
  std::mt19937_64 a(9), b(9);
  const auto sa = make_training_sample(ph.volume, ph.label, t, a);
  const auto sb = make_training_sample(ph.volume, ph.label, t, b);
  EXPECT_EQ(sa.image, sb.image);
  EXPECT_EQ(sa.label, sb.label);
  EXPECT_EQ(sa.image.shape(), Shape3::cube(16));
  EXPECT_FALSE(sa.label.empty());  // fg_fraction 1 forces a label voxel into the crop
}

TEST(TrainingSample, PadsSmallVolumes) {
  VoxelVolume<float> v({8, 10, 12}, {}, 0.5f);
  std::vector<std::uint8_t> bits(v.size(), 0);
  bits[linear_index(v.shape(), 4, 5, 6)] = 1;
  bits[linear_index(v.shape(), 5, 5, 6)] = 1;
  TrainConfig t = small_train(1);
  t.masking.max_offset = 0;
  std::mt19937_64 rng(2);
  const auto s = make_training_sample(v, BinaryMask(v.shape(), bits), t, rng);
  EXPECT_EQ(s.image.shape(), Shape3::cube(16));
  EXPECT_EQ(s.label.popcount(), 2u);
}

TEST(Manifest, ParsesAndResolvesPaths) {
  std::istringstream in("# comment\na.hdr a.lmk train P1\n/abs/b.hdr b.lmk test P2  # trailing\n\n");
  const auto e = parse_manifest(in, "/data");
  ASSERT_EQ(e.size(), 2u);
  EXPECT_EQ(e[0].volume, fs::path("/data/a.hdr"));
  EXPECT_EQ(e[1].volume, fs::path("/abs/b.hdr"));
  EXPECT_EQ(e[1].landmarks, fs::path("/data/b.lmk"));
  EXPECT_EQ(select_split(e, "test").size(), 1u);
  std::istringstream bad("a.hdr a.lmk train\n");
  EXPECT_THROW(parse_manifest(bad, "/data"), FormatError);
}

TEST(Manifest, RejectsPatientLeakage) {
  std::istringstream in("a.hdr a.lmk train P1\nb.hdr b.lmk train P1\nc.hdr c.lmk test P1\n");
  EXPECT_THROW(parse_manifest(in, "/data"), LeakageError);
  std::istringstream ok("a.hdr a.lmk train P1\nb.hdr b.lmk train P1\nc.hdr c.lmk test P2\n");
  EXPECT_NO_THROW(parse_manifest(ok, "/data"));
}

TEST(Manifest, DataRootFromEnvironment) {
  testutil::TempDir dir("manifest");
  {
    std::ofstream(dir / "m.txt") << "x.hdr x.lmk train P1\n";
  }
  ::unsetenv(kDataRootEnv);
  EXPECT_EQ(load_manifest(dir / "m.txt")[0].volume, dir.path() / "x.hdr");
  ::setenv(kDataRootEnv, "/elsewhere", 1);
  EXPECT_EQ(load_manifest(dir / "m.txt")[0].volume, fs::path("/elsewhere/x.hdr"));
  EXPECT_EQ(load_manifest(dir / "m.txt", "/explicit")[0].volume, fs::path("/explicit/x.hdr"));
  ::unsetenv(kDataRootEnv);
  EXPECT_THROW(load_manifest(dir / "absent.txt"), IoError);
}

TEST(Trainer, RejectsMismatchedCrop) {
  TrainConfig t = small_train(5);
  t.crop_size = Shape3::cube(32);
  EXPECT_THROW(Trainer(t, small_net(), {phantom_scan(1, 2)}), ConfigError);
  EXPECT_THROW(Trainer(small_train(5), small_net(), {}), ConfigError);
}

TEST(Trainer, LossDecreasesOnOneSample) {
  TrainConfig t = small_train(50);
  t.batch_size = 1;
  t.masking.max_offset = 0;
  Trainer tr(t, small_net(), {phantom_scan(21, 2)});
  tr.run(50);
  const auto& h = tr.history();
  ASSERT_EQ(h.size(), 50u);
  double first = 0, last = 0;
  for (int i = 0; i < 5; ++i) {
    first += h[static_cast<std::size_t>(i)].total;
    last += h[h.size() - 1 - static_cast<std::size_t>(i)].total;
  }
  EXPECT_LT(last, 0.8 * first);
  EXPECT_THROW(tr.step(), BoundsError);
}

TEST(Trainer, ResumeIsBitIdentical) {
  testutil::TempDir dir("resume");
  const std::vector<Scan> scans{phantom_scan(1, 1), phantom_scan(2, 2), phantom_scan(3, 3)};
  const TrainConfig t = small_train(8);

  Trainer straight(t, small_net(), scans);
  straight.run(8);

  Trainer first(t, small_net(), scans);
  first.run(4, dir.path());
  Trainer second(t, small_net(), scans);
  second.resume(dir / "checkpoint.bin");
  EXPECT_EQ(second.current_step(), 4);
  second.run(8);

  EXPECT_EQ(second.history(), straight.history());
  const auto pa = straight.model().parameters(), pb = second.model().parameters();
  for (std::size_t k = 0; k < pa.size(); ++k) ASSERT_EQ(pa[k]->value, pb[k]->value) << pa[k]->name;
}

TEST(Trainer, CheckpointRejectsOtherConfigs) {
  testutil::TempDir dir("ckpt");
  const std::vector<Scan> scans{phantom_scan(1, 1)};
  Trainer a(small_train(3), small_net(), scans);
  a.run(1, dir.path());
  EXPECT_TRUE(fs::exists(dir / "loss.tsv"));

  TrainConfig other = small_train(3);
  other.base_lr = 1e-3;
  Trainer b(other, small_net(), scans);
  EXPECT_THROW(b.resume(dir / "checkpoint.bin"), ConfigError);

  NetworkConfig net = small_net();
  net.use_ndp = false;
  Trainer c(small_train(3), net, scans);
  EXPECT_THROW(c.resume(dir / "checkpoint.bin"), ConfigError);

  {
    std::ofstream(dir / "junk.bin") << "not a checkpoint";
  }
  EXPECT_THROW(a.resume(dir / "junk.bin"), FormatError);
}
