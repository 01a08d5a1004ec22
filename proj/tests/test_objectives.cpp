#include <cmath>
#include <random>

#include "regfree/objectives.hpp"
#include "test_util.hpp"

using namespace regfreenet;

namespace {

std::vector<std::uint8_t> random_target(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::uint8_t> t(n);
  for (auto& v : t) v = std::bernoulli_distribution(0.4)(rng) ? 1 : 0;
  return t;
}

std::vector<double> random_prob(std::size_t n, std::mt19937_64& rng) {
  std::vector<double> p(n);
  for (auto& v : p) v = std::uniform_real_distribution<double>(0.02, 0.98)(rng);
  return p;
}

}  // namespace

TEST(DiceLoss, ClosedFormCases) {
  const std::vector<std::uint8_t> t{1, 1, 1, 1, 0, 0, 0, 0};
  const std::vector<double> half(8, 0.5);
  LossConfig no_smooth;
  no_smooth.dice_smooth = 0.0;
  EXPECT_NEAR(dice_loss<double>(half, t, no_smooth), 1.0 / 3.0, 1e-15);

  const std::vector<double> exact(t.begin(), t.end());
  EXPECT_NEAR(dice_loss<double>(exact, t), 0.0, 1e-12);
  std::vector<double> flipped(8);
  for (int i = 0; i < 8; ++i) flipped[static_cast<std::size_t>(i)] = 1.0 - exact[static_cast<std::size_t>(i)];
  const double s = LossConfig{}.dice_smooth;
  EXPECT_NEAR(dice_loss<double>(flipped, t), 1.0 - s / (8.0 + s), 1e-15);
}

TEST(CeLoss, ClosedFormCasesAndClamp) {
  const std::vector<std::uint8_t> one{1};
  EXPECT_NEAR(ce_loss<double>(std::vector<double>{0.5}, one), 0.693147180559945, 1e-12);
  const double at_zero = ce_loss<double>(std::vector<double>{0.0}, one);
  EXPECT_TRUE(std::isfinite(at_zero));
  EXPECT_NEAR(at_zero, -std::log(1e-7), 1e-9);

  const std::vector<std::uint8_t> t{1, 0, 1, 0};
  const std::vector<double> p{1.0, 0.0, 1.0, 0.0};
  EXPECT_LE(ce_loss<double>(p, t), -std::log(1.0 - 1e-7) + 1e-15);

  LossConfig sum;
  sum.ce_normalize = false;
  const std::vector<double> q{0.5, 0.5, 0.5, 0.5};
  EXPECT_NEAR(ce_loss<double>(q, t, sum), 4 * std::log(2.0), 1e-12);
  EXPECT_NEAR(ce_loss<double>(q, t), std::log(2.0), 1e-12);
}

TEST(SlopeLoss, HandSumsAndSymmetry) {
  EXPECT_EQ(slope_loss({0.1, -0.2}, {0.1, -0.2}), 0.0);
  EXPECT_NEAR(slope_loss({0, 0}, {0.3, -0.1}), 0.4, 1e-15);
  EXPECT_EQ(slope_loss({0.7, 0.1}, {-0.2, 0.5}), slope_loss({-0.2, 0.5}, {0.7, 0.1}));
  std::array<double, 2> g{};
  slope_loss({0.5, -0.5}, {0.0, 0.0}, &g);
  EXPECT_EQ(g, (std::array<double, 2>{1.0, -1.0}));
  EXPECT_THROW(slope_loss({NAN, 0}, {0, 0}), GeometryError);
}

TEST(TotalLoss, IsTheSumOfItsParts) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto t = random_target(50, rng);
    const auto p = random_prob(50, rng);
    const SlopePair kp{0.1 * trial, -0.05}, kt{0.2, 0.3};
    const LossBreakdown with = total_loss<double>(p, t, &kp, &kt, true);
    const double hand = dice_loss<double>(p, t) + ce_loss<double>(p, t) + slope_loss(kp, kt);
    EXPECT_NEAR(with.total, hand, 1e-12);
    const LossBreakdown without = total_loss<double>(p, t, nullptr, nullptr, false);
    EXPECT_NEAR(without.total, dice_loss<double>(p, t) + ce_loss<double>(p, t), 1e-12);
    EXPECT_EQ(without.slope, 0.0);
    EXPECT_GE(with.dice, 0.0);
    EXPECT_GE(with.ce, 0.0);
  }
  EXPECT_THROW(total_loss<double>(std::vector<double>{0.5}, std::vector<std::uint8_t>{1}, nullptr, nullptr, true),
               ConfigError);
  EXPECT_THROW(total_loss<double>(std::vector<double>{0.5, 0.5}, std::vector<std::uint8_t>{1}, nullptr, nullptr, false),
               ShapeError);
}

TEST(TotalLoss, PerfectPredictionIsNearZero) {
  const std::vector<std::uint8_t> t{1, 0, 0, 1};
  const std::vector<double> p{1.0, 0.0, 0.0, 1.0};
  const SlopePair k{0.2, 0.1};
  EXPECT_NEAR(total_loss<double>(p, t, &k, &k, true).total, 0.0, 1e-6);
}

TEST(TotalLoss, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(2);
  const auto t = random_target(40, rng);
  auto p = random_prob(40, rng);
  std::vector<double> g(40);
  total_loss<double>(p, t, nullptr, nullptr, false, {}, std::span<double>(g));
  const double h = 1e-7;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double keep = p[i];
    p[i] = keep + h;
    const double a = total_loss<double>(p, t, nullptr, nullptr, false).total;
    p[i] = keep - h;
    const double b = total_loss<double>(p, t, nullptr, nullptr, false).total;
    p[i] = keep;
    EXPECT_LT(testutil::rel_err(g[i], (a - b) / (2 * h), 1e-6), 1e-6) << i;
  }
}
