#include <Eigen/Dense>
#include <random>

#include "regfree/labelgen.hpp"
#include "regfree/slope.hpp"
#include "test_util.hpp"

using namespace regfreenet;

namespace {

// Ordinary least squares of x on [z, 1] through a QR solve.
double ols_slope(const std::vector<double>& z, const std::vector<double>& x) {
  Eigen::MatrixXd A(static_cast<Eigen::Index>(z.size()), 2);
  Eigen::VectorXd b(static_cast<Eigen::Index>(z.size()));
  for (std::size_t i = 0; i < z.size(); ++i) {
    A(static_cast<Eigen::Index>(i), 0) = z[i];
    A(static_cast<Eigen::Index>(i), 1) = 1.0;
    b(static_cast<Eigen::Index>(i)) = x[i];
  }
  return A.colPivHouseholderQr().solve(b)(0);
}

SlopePair slopes_of(const std::vector<std::array<double, 3>>& xyz) {
  std::vector<Point3d> p;
  for (const auto& a : xyz) p.push_back({a[0], a[1], a[2]});
  return compute_slopes(p);
}

}  // namespace

TEST(Coordinates, ScanOrderAndConvention) {
  BinaryMask m({6, 6, 6});
  m.set(3, 4, 5);
  const auto c = implant_coordinates(m);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0], (Index3{3, 4, 5}));

  m.set(1, 0, 0);
  const auto two = implant_coordinates(m);
  ASSERT_EQ(two.size(), 2u);
  EXPECT_EQ(two[0], (Index3{1, 0, 0}));
  EXPECT_THROW(implant_coordinates(BinaryMask({2, 2, 2})), GeometryError);

  const auto cyl = rasterize_implant({{2, 8, 8}, {6, 8, 8}, {10, 8, 8}}, Shape3::cube(16), 2.0);
  EXPECT_EQ(implant_coordinates(cyl).size(), 117u);
}

TEST(Slopes, HandExamples) {
  EXPECT_DOUBLE_EQ(slopes_of({{5, 0, 1}, {5, 0, 2}, {5, 0, 3}}).k1, 0.0);
  EXPECT_DOUBLE_EQ(slopes_of({{0, 0, 0}, {1, 0, 1}, {2, 0, 2}}).k1, 1.0);
  EXPECT_NEAR(slopes_of({{0, 0, 0}, {1, 0, 1}, {2, 0, 2}, {5, 0, 3}}).k1, 1.6, 1e-12);
  EXPECT_THROW(slopes_of({{0, 0, 4}}), GeometryError);
  EXPECT_THROW(slopes_of({{0, 0, 4}, {3, 1, 4}}), GeometryError);
}

TEST(Slopes, MatchQrLeastSquares) {
  std::mt19937_64 rng(123);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = std::uniform_int_distribution<int>(2, 500)(rng);
    std::normal_distribution<double> g(0.0, 10.0);
    std::vector<double> z(n), x(n), y(n);
    std::vector<Point3d> pts;
    for (int i = 0; i < n; ++i) {
      z[i] = g(rng);
      x[i] = g(rng);
      y[i] = g(rng);
      pts.push_back({x[i], y[i], z[i]});
    }
    const SlopePair k = compute_slopes(pts);
    ASSERT_LT(testutil::rel_err(k.k1, ols_slope(z, x), 1e-12), 1e-9);
    ASSERT_LT(testutil::rel_err(k.k2, ols_slope(z, y), 1e-12), 1e-9);
  }
}

TEST(Slopes, FromLabels) {
  const auto straight = rasterize_implant({{2, 8, 8}, {6, 8, 8}, {10, 8, 8}}, Shape3::cube(16), 2.0);
  const SlopePair s0 = slopes_from_label(straight);
  EXPECT_NEAR(s0.k1, 0.0, 1e-12);
  EXPECT_NEAR(s0.k2, 0.0, 1e-12);

  // One voxel in x per slice.
  const auto tilted = rasterize_implant({{2, 8, 3}, {6, 8, 7}, {10, 8, 11}}, Shape3::cube(16), 2.0);
  const SlopePair s1 = slopes_from_label(tilted);
  EXPECT_NEAR(s1.k1, 1.0, 1e-9);
  EXPECT_NEAR(s1.k2, 0.0, 1e-9);

  // Millimetre units rescale by spacing_x / spacing_z.
  const SlopePair mm = slopes_from_label(tilted, Spacing{0.5, 0.2, 0.2});
  EXPECT_NEAR(mm.k1, 0.4, 1e-9);
  EXPECT_THROW(slopes_from_label(BinaryMask(Shape3::cube(4))), GeometryError);
}
