#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "malsde/density.hpp"

using namespace malsde;

namespace {

double phi(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

std::vector<Vec<double, 1>> grid1(double lo, double hi, int n) {
  std::vector<Vec<double, 1>> ys(n);
  for (int i = 0; i < n; ++i) ys[i] = {lo + (hi - lo) * i / (n - 1)};
  return ys;
}

}  // namespace

TEST(GaussianOracle, Examples) {
  const auto bm = gaussian_law(BrownianModel<1>{{1.0}, {0.0}, 1.0}, 1.0);
  EXPECT_NEAR(gaussian_oracle<1>(bm, {0.0}), 0.3989422804014327, 1e-15);
  EXPECT_NEAR(gaussian_oracle<1>(bm, {0.0}, {0}), 0.0, 1e-16);
  EXPECT_NEAR(gaussian_oracle<1>(bm, {1.0}, {0}), -phi(1.0), 1e-15);
  EXPECT_NEAR(gaussian_oracle<1>(bm, {1.0}, {0, 0}), 0.0, 1e-15);  // (z^2 - 1) phi
  const auto ou = gaussian_law(OrnsteinUhlenbeck<1>{1.0, {0.5}, {1.0}, {3.0}, 1.0}, 60.0);
  EXPECT_NEAR(ou.mean[0], 0.5, 1e-12);
  EXPECT_NEAR(ou.variance[0], 0.5, 1e-15);
  EXPECT_NEAR(gaussian_oracle<1>(ou, {0.5}), 1.0 / std::sqrt(std::numbers::pi), 1e-12);
}

TEST(GaussianOracle, EulerLawOfOu) {
  const OrnsteinUhlenbeck<1> m{1.0, {0.0}, {1.0}, {1.0}, 1.0};
  const auto e = euler_gaussian_law(m, TimeGrid(1.0, 1000));
  EXPECT_NEAR(e.mean[0], std::pow(0.999, 1000), 1e-14);
  const auto x = gaussian_law(m, 1.0);
  EXPECT_NEAR(e.variance[0], x.variance[0], 1e-3);
}

TEST(DensityMc, BrownianMatchesNormalDensity) {
  const TimeGrid g(1.0, 16);
  const auto fam = untruncated(BrownianModel<1>{{1.0}, {0.0}, 1.0});
  const auto ys = grid1(-3.0, 3.0, 11);
  const auto est = density_mc(fam, g, 200000, 31, std::span<const Vec<double, 1>>(ys));
  for (std::size_t i = 0; i < ys.size(); ++i) EXPECT_LE(std::abs(est[i].estimate - phi(ys[i][0])), 3.0 * est[i].se);
}

TEST(DensityMc, FarLeftIsMeanWeight) {
  const TimeGrid g(1.0, 16);
  const auto fam = untruncated(OrnsteinUhlenbeck<1>{1.0, {0.0}, {1.0}, {0.0}, 1.0});
  WeightSample<1> s;
  const std::vector<Vec<double, 1>> ys{{-50.0}};
  const auto est = density_mc(fam, g, 50000, 32, std::span<const Vec<double, 1>>(ys), 0, &s);
  RunningStats all;
  for (double h : s.weight) all.add(h);
  EXPECT_EQ(est[0].estimate, all.mean);
  EXPECT_LE(std::abs(est[0].estimate), 3.0 * est[0].se);
}

TEST(DensityMc, OuWithinWeakErrorBudget) {
  const TimeGrid g(1.0, 64);
  const OrnsteinUhlenbeck<1> m{1.0, {0.0}, {1.0}, {0.5}, 1.0};
  const auto exact = gaussian_law(m, 1.0), euler = euler_gaussian_law(m, g);
  const auto ys = grid1(-2.0, 2.5, 10);
  const auto est = density_mc(untruncated(m), g, 100000, 33, std::span<const Vec<double, 1>>(ys));
  for (std::size_t i = 0; i < ys.size(); ++i) {
    const double o = gaussian_oracle<1>(exact, ys[i]);
    const double budget = std::abs(gaussian_oracle<1>(euler, ys[i]) - o);
    EXPECT_LE(std::abs(est[i].estimate - o), 3.0 * est[i].se + budget);
  }
}

TEST(DensityDerivative, BrownianExamples) {
  const TimeGrid g(1.0, 16);
  const auto fam = untruncated(BrownianModel<1>{{1.0}, {0.0}, 1.0});
  const std::vector<Vec<double, 1>> ys{{0.0}, {1.0}};
  const auto est = density_derivative_mc(fam, g, 200000, 34, std::span<const Vec<double, 1>>(ys), {0});
  EXPECT_LE(std::abs(est[0].estimate), 3.0 * est[0].se);
  EXPECT_LE(std::abs(est[1].estimate + 0.24197072451914337), 3.0 * est[1].se);
}

TEST(DensityDerivative, OrderCapEnforced) {
  const TimeGrid g(1.0, 8);
  const auto fam = untruncated(BrownianModel<2>{{1.0, 1.0}, {0.0, 0.0}, 1.0});
  const std::vector<Vec<double, 2>> ys{{0.0, 0.0}};
  EXPECT_THROW(density_derivative_mc(fam, g, 100, 1, std::span<const Vec<double, 2>>(ys), {0}), UnsupportedOrder);
}

TEST(DensityMc, TwoDimensionalProductDensity) {
  const TimeGrid g(1.0, 8);
  const auto fam = untruncated(BrownianModel<2>{{1.0, 2.0}, {0.0, 0.0}, 1.0});
  const auto law = gaussian_law(BrownianModel<2>{{1.0, 2.0}, {0.0, 0.0}, 1.0}, 1.0);
  const std::vector<Vec<double, 2>> ys{{0.0, 0.0}, {0.5, -1.0}, {-1.0, 2.0}};
  const auto est = density_mc(fam, g, 100000, 35, std::span<const Vec<double, 2>>(ys));
  for (std::size_t i = 0; i < ys.size(); ++i)
    EXPECT_LE(std::abs(est[i].estimate - gaussian_oracle<2>(law, ys[i])), 3.0 * est[i].se);
}

TEST(Kde, BrownianAccuracy) {
  const NormalStream s(36, 0);
  std::vector<Vec<double, 1>> xs(100000);
  for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = {s.normal(i)};
  const auto ys = grid1(-3.0, 3.0, 61);
  const auto k = kde<1>(xs, ys);
  for (std::size_t i = 0; i < ys.size(); ++i) EXPECT_LE(std::abs(k.estimate[i] - phi(ys[i][0])), 0.01);
}

TEST(Kde, PointMassIsKernel) {
  std::vector<Vec<double, 1>> xs(1000, Vec<double, 1>{0.7});
  const auto ys = grid1(-1.0, 2.0, 7);
  const auto k = kde<1>(xs, ys);
  const double h = k.bandwidth[0];
  EXPECT_NEAR(h, 1.06 * std::pow(1000.0, -0.2), 1e-15);
  for (std::size_t i = 0; i < ys.size(); ++i) EXPECT_NEAR(k.estimate[i], phi((ys[i][0] - 0.7) / h) / h, 1e-12);
}

TEST(Kde, IntegratesToOne) {
  const NormalStream s(37, 0);
  std::vector<Vec<double, 1>> xs(5000);
  for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = {2.0 + 0.5 * s.normal(i)};
  const auto ys = grid1(2.0 - 4.0, 2.0 + 4.0, 401);
  const auto k = kde<1>(xs, ys);
  double total = 0.0;
  for (double v : k.estimate) total += v * 0.02;
  EXPECT_NEAR(total, 1.0, 0.02);
  for (double v : k.estimate) EXPECT_GE(v, 0.0);
}

TEST(DecayCheck, BrownianTailExponent) {
  const double sigma = 1.0, t = 1.0;
  const TimeGrid g(t, 16);
  const auto fam = untruncated(BrownianModel<1>{{sigma}, {0.0}, t});
  const auto ys = grid1(-3.0, 3.0, 21);
  const auto est = density_mc(fam, g, 200000, 38, std::span<const Vec<double, 1>>(ys));
  const double slope = tail_exponent<1>(ys, est, {0.0});
  const double target = -1.0 / (2.0 * sigma * sigma * t);
  EXPECT_LE(std::abs(slope - target), 0.1 * std::abs(target));
}

TEST(DecayCheck, HoldoutCoveredByFittedEnvelope) {
  const TimeGrid g(1.0, 16);
  const auto fam = untruncated(OrnsteinUhlenbeck<1>{1.0, {0.0}, {1.0}, {0.0}, 1.0});
  const auto ys = grid1(-2.5, 2.5, 21);
  const auto est = density_mc(fam, g, 100000, 39, std::span<const Vec<double, 1>>(ys));
  const std::vector<double> x0{0.0};
  const auto env = make_decay_envelope(1, x0, 1.0, 1.0, 0.01, 1.0, 1.0);
  const auto dc = decay_check<1>(ys, est, env);
  EXPECT_EQ(dc.holdout_rate, 1.0);
  EXPECT_TRUE(dc.all_pass);
  for (std::size_t i = 1; i < dc.envelope.size(); ++i) {
    if (ys[i][0] > 0.0) {
      EXPECT_LT(dc.envelope[i], dc.envelope[i - 1]);
    }
  }
}

TEST(DecayCheck, OuTailShallowerAtLaterTime) {
  const OrnsteinUhlenbeck<1> m{1.0, {0.0}, {1.0}, {0.0}, 1.0};
  std::vector<double> slopes;
  for (double t : {0.5, 1.0}) {
    OrnsteinUhlenbeck<1> mt = m;
    mt.horizon = t;
    const TimeGrid g(t, 16);
    const double sd = std::sqrt(gaussian_law(m, t).variance[0]);
    const auto ys = grid1(-2.5 * sd, 2.5 * sd, 21);
    const auto est = density_mc(untruncated(mt), g, 100000, 40, std::span<const Vec<double, 1>>(ys));
    slopes.push_back(tail_exponent<1>(ys, est, {0.0}));
  }
  EXPECT_LT(slopes[0], slopes[1]);
}

TEST(DecayEnvelope, PositiveAndDecreasing) {
  const std::vector<double> x0{0.0, 0.0};
  const auto env = make_decay_envelope(2, x0, 1.0, 1.21, 0.5, 2.0, 0.81);
  EXPECT_DOUBLE_EQ(env.eta, 0.5 + 4.0 * 1.21 + 0.5);
  double prev = std::numeric_limits<double>::infinity();
  for (double r = 0.0; r < 10.0; r += 0.5) {
    const std::vector<double> y{r, r};
    const double v = env(y);
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, prev);
    prev = v;
  }
}

TEST(Labels, Multiindex) {
  EXPECT_EQ(multiindex_label({}), "");
  EXPECT_EQ(multiindex_label({0, 1}), "1.2");
}
