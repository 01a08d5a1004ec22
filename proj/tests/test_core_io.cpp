#include <fstream>

#include "regfree/core.hpp"
#include "regfree/io.hpp"
#include "test_util.hpp"

using namespace regfreenet;

TEST(Volume, RejectsPayloadOfWrongLength) {
  EXPECT_THROW(VoxelVolume<float>({2, 2, 2}, {}, std::vector<float>(7)), ShapeError);
  EXPECT_THROW(VoxelVolume<float>({0, 2, 2}), ShapeError);
  EXPECT_THROW(VoxelVolume<float>({2, 2, 2}, Spacing{0.0, 1.0, 1.0}), ShapeError);
}

TEST(Volume, IndexingIsRowMajorZYX) {
  VoxelVolume<int> v({2, 3, 4});
  v(1, 2, 3) = 7;
  EXPECT_EQ(v.data()[1 * 12 + 2 * 4 + 3], 7);
  EXPECT_EQ(linear_index({2, 3, 4}, 1, 0, 1), 13u);
}

TEST(Mask, OnlyAcceptsZeroOrOne) {
  EXPECT_THROW(BinaryMask({1, 1, 2}, {0, 2}), FormatError);
  EXPECT_THROW(BinaryMask({1, 1, 2}, {0}), ShapeError);
  BinaryMask m({1, 2, 2}, {0, 1, 1, 0});
  EXPECT_EQ(m.popcount(), 2u);
  EXPECT_FALSE(m.empty());
}

TEST(Landmarks, ValidationCatchesBoundsAndFlatAxes) {
  const Shape3 s{10, 10, 10};
  EXPECT_NO_THROW(validate_landmarks({{1, 1, 1}, {3, 1, 1}, {5, 1, 1}}, s));
  EXPECT_THROW(validate_landmarks({{1, 1, 1}, {3, 1, 1}, {10, 1, 1}}, s), BoundsError);
  EXPECT_THROW(validate_landmarks({{-1, 1, 1}, {3, 1, 1}, {5, 1, 1}}, s), BoundsError);
  EXPECT_THROW(validate_landmarks({{4, 1, 1}, {4, 2, 2}, {4, 3, 3}}, s), GeometryError);
}

TEST(Crop, CopiesSubgridAndChecksBounds) {
  VoxelVolume<float> v({4, 4, 4});
  for (int z = 0; z < 4; ++z)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) v(z, y, x) = static_cast<float>(100 * z + 10 * y + x);
  const auto c = crop(v, {1, 2, 0}, {2, 2, 3});
  EXPECT_EQ(c.shape(), (Shape3{2, 2, 3}));
  EXPECT_EQ(c(1, 1, 2), 100.f * 2 + 10.f * 3 + 2.f);
  EXPECT_THROW(crop(v, {3, 0, 0}, {2, 2, 2}), BoundsError);
}

TEST(Pad, CentersDataAndRoundTripsThroughCrop) {
  VoxelVolume<float> v({3, 4, 5}, {}, 1.0f);
  auto [p, off] = pad_to(v, {8, 4, 6});
  EXPECT_EQ(p.shape(), (Shape3{8, 4, 6}));
  EXPECT_EQ(off, (Index3{2, 0, 0}));
  EXPECT_EQ(crop(p, off, v.shape()), v);
  double total = 0;
  for (float f : p.data()) total += f;
  EXPECT_EQ(total, 60.0);
}

TEST(VolumeIO, RoundTripsAllDtypes) {
  testutil::TempDir dir("io");
  std::mt19937 rng(3);
  std::uniform_real_distribution<float> u(-5, 5);
  VoxelVolume<float> v({3, 5, 7}, {0.2, 0.25, 0.3});
  for (auto& x : v.data()) x = u(rng);
  io::save_volume(v, dir / "a");
  EXPECT_EQ(io::load_volume<float>(dir / "a.hdr"), v);
  EXPECT_EQ(io::load_volume<float>(dir / "a.raw").spacing(), v.spacing());

  VoxelVolume<double> d({2, 2, 2}, {1.0 / 3.0, 1, 1});
  d(1, 1, 1) = 1.0 / 7.0;
  io::save_volume(d, dir / "d");
  EXPECT_EQ(io::load_volume<double>(dir / "d"), d);

  BinaryMask m({2, 3, 4});
  m.set(1, 2, 3);
  m.set(0, 0, 0);
  io::save_mask(m, dir / "m");
  EXPECT_EQ(io::load_mask(dir / "m"), m);
}

TEST(VolumeIO, MalformedInputsRaiseTypedErrors) {
  testutil::TempDir dir("iobad");
  EXPECT_THROW(io::load_volume<float>(dir / "missing"), IoError);

  VoxelVolume<float> v({2, 2, 2});
  io::save_volume(v, dir / "v");
  std::ofstream(dir / "v.raw", std::ios::binary | std::ios::trunc) << "short";
  EXPECT_THROW(io::load_volume<float>(dir / "v"), ShapeError);

  std::ofstream(dir / "h.hdr") << "regfree-volume 1\nshape 2 2\nspacing 1 1 1\ndtype float32\n";
  EXPECT_THROW(io::read_header(dir / "h"), FormatError);
  std::ofstream(dir / "k.hdr") << "regfree-volume 1\nshape 2 2 2\nspacing 1 1 1\ndtype int16\n";
  EXPECT_THROW(io::read_header(dir / "k"), FormatError);
  std::ofstream(dir / "n.hdr") << "regfree-volume 1\nshape 2 2 2\ndtype float32\n";
  EXPECT_THROW(io::read_header(dir / "n"), FormatError);
  EXPECT_THROW(io::parse_format("nifti"), FormatError);

  VoxelVolume<float> nb({1, 1, 2}, {}, std::vector<float>{0.0f, 0.5f});
  io::save_volume(nb, dir / "nb");
  EXPECT_THROW(io::load_mask(dir / "nb"), FormatError);
}

TEST(LandmarkIO, RoundTripsAndRejectsShortRecords) {
  testutil::TempDir dir("lmk");
  std::vector<LandmarkTriple> recs{{{1, 2, 3}, {4, 5, 6}, {7, 8, 9}}, {{9, 8, 7}, {6, 5, 4}, {3, 2, 1}}};
  io::write_landmarks(recs, dir / "a.lmk");
  EXPECT_EQ(io::read_landmarks(dir / "a.lmk"), recs);

  std::ofstream(dir / "b.lmk") << "# comment\n1 2 3 4 5 6 7 8\n";
  EXPECT_THROW(io::read_landmarks(dir / "b.lmk"), FormatError);
  std::ofstream(dir / "c.lmk") << "# nothing\n";
  EXPECT_THROW(io::read_landmarks(dir / "c.lmk"), FormatError);
  std::ofstream(dir / "d.lmk") << "1 2 3 4 5 x 7 8 9\n";
  EXPECT_THROW(io::read_landmarks(dir / "d.lmk"), FormatError);
}

TEST(KeyValues, ParsesTypesAndFlagsErrors) {
  std::istringstream in("a = 3\nb=0.5 # trailing\n# full comment\nflag = on\nlist = 1, 2,3\n");
  const auto kv = io::KeyValues::parse(in);
  EXPECT_EQ(kv.get<int>("a", 0), 3);
  EXPECT_DOUBLE_EQ(kv.get<double>("b", 0), 0.5);
  EXPECT_TRUE(kv.get_flag("flag", false));
  EXPECT_EQ(kv.get_list<int>("list", {}), (std::vector<int>{1, 2, 3}));
  EXPECT_EQ(kv.get<int>("absent", 9), 9);
  EXPECT_THROW(kv.require<int>("absent"), ConfigError);
  EXPECT_THROW(kv.get<int>("b", 0), ConfigError);

  std::istringstream bad("just words\n");
  EXPECT_THROW(io::KeyValues::parse(bad), ConfigError);
}

TEST(Crop, MatchesSourceIndexByIndex) {
  std::mt19937 rng(11);
  std::uniform_real_distribution<float> u(0, 1);
  VoxelVolume<float> v(Shape3::cube(16));
  for (auto& x : v.data()) x = u(rng);
  const auto before = v;
  const auto c = crop(v, {4, 4, 4}, Shape3::cube(8));
  for (int z = 0; z < 8; ++z)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) ASSERT_EQ(c(z, y, x), v(z + 4, y + 4, x + 4));
  EXPECT_EQ(crop(v, {0, 0, 0}, v.shape()), v);
  EXPECT_EQ(v, before);
}
