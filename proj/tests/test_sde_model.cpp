#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "malsde/rng.hpp"
#include "malsde/sde_model.hpp"

using namespace malsde;

namespace {

std::vector<Vec<double, 1>> line_points(double lo, double hi, int n) {
  std::vector<Vec<double, 1>> xs(n);
  for (int i = 0; i < n; ++i) xs[i] = {lo + (hi - lo) * i / (n - 1)};
  return xs;
}

template <int D>
std::vector<std::pair<Vec<double, D>, Vec<double, D>>> random_pairs(double lo, double hi, int n, std::uint64_t seed) {
  const NormalStream s(seed, kAuxStreamBase);
  std::vector<std::pair<Vec<double, D>, Vec<double, D>>> out(n);
  std::uint64_t idx = 0;
  for (auto& [x, y] : out)
    for (int i = 0; i < D; ++i) {
      x[i] = lo + (hi - lo) * s.uniform(idx++);
      y[i] = lo + (hi - lo) * s.uniform(idx++);
    }
  return out;
}

struct SquareDrift {
  template <class S>
  Vec<S, 1> drift(const Vec<S, 1>& x) const {
    return {x[0] * x[0]};
  }
};

}  // namespace

TEST(EvalDrift, DoubleWellAndOu) {
  const DoubleWell1d dw;
  EXPECT_EQ(eval_drift(dw, {0.0})[0], 0.0);
  EXPECT_EQ(eval_drift(dw, {2.0})[0], -6.0);
  const OrnsteinUhlenbeck<1> ou{1.0, {0.0}, {1.0}, {0.0}, 1.0};
  EXPECT_EQ(eval_drift(ou, {3.0})[0], -3.0);
}

TEST(EvalDrift, RejectsNonFiniteInput) {
  const DoubleWell1d dw;
  EXPECT_THROW(eval_drift(dw, {std::nan("")}), ModelError);
}

TEST(TruncatedDrift, InsideBallEqualsDrift) {
  const TruncationFamily<DoubleWell1d> fam(DoubleWell1d{}, 4.0);
  EXPECT_EQ(eval_truncated_drift(fam, {1.0})[0], 0.0);
  for (const auto& x : line_points(-4.0, 4.0, 801))
    EXPECT_EQ(eval_truncated_drift(fam, x)[0], eval_drift(fam.base, x)[0]);
}

TEST(TruncatedDrift, ClampOutsideBall) {
  const TruncationFamily<DoubleWell1d> fam(DoubleWell1d{}, 1.0);
  const double c = 1.0 + std::tanh(2.0);
  EXPECT_NEAR(eval_truncated_drift(fam, {3.0})[0], c - c * c * c, 1e-15);
  EXPECT_NEAR(eval_truncated_drift(fam, {1e6})[0], -6.0, 1e-12);
}

TEST(TruncatedDrift, BoundedByBallSup) {
  const TruncationFamily<DoubleWell1d> fam(DoubleWell1d{}, 2.0);
  double sup_ball = 0.0;
  for (const auto& y : line_points(-3.0, 3.0, 6001)) sup_ball = std::max(sup_ball, std::abs(eval_drift(fam.base, y)[0]));
  for (const auto& x : line_points(-100.0, 100.0, 20001))
    EXPECT_LE(std::abs(eval_truncated_drift(fam, x)[0]), sup_ball + 1e-12);
}

TEST(RadialClamp, C2AtTheBoundary) {
  using D2 = Dual<Dual<double, 1>, 1>;
  auto radial = [](double r) {
    D2 x(Dual<double, 1>::variable(r, 0));
    x.d[0] = Dual<double, 1>(1.0);
    return radial_clamp<D2, 1>(Vec<D2, 1>{x}, 2.0)[0];
  };
  const double eps = 1e-9;
  const auto in = radial(2.0 - eps), out = radial(2.0 + eps);
  EXPECT_NEAR(in.v.v, out.v.v, 1e-8);
  EXPECT_NEAR(in.d[0].v, out.d[0].v, 1e-8);
  EXPECT_NEAR(in.d[0].d[0], out.d[0].d[0], 1e-8);
}

TEST(RadialClamp, OneLipschitz) {
  for (const auto& [x, y] : random_pairs<2>(-10.0, 10.0, 5000, 3)) {
    const auto cx = radial_clamp<double, 2>(x, 3.0), cy = radial_clamp<double, 2>(y, 3.0);
    EXPECT_LE(std::sqrt(norm2(cx - cy)), std::sqrt(norm2(x - y)) * (1.0 + 1e-9));
  }
}

TEST(SemiMonotone, LinearDecreasing) {
  const OrnsteinUhlenbeck<1> ou{1.0, {0.0}, {1.0}, {0.0}, 1.0};
  const auto pairs = random_pairs<1>(-5.0, 5.0, 1000, 1);
  const auto r = check_semi_monotone<OrnsteinUhlenbeck<1>, 1>(ou, pairs, -1.0);
  EXPECT_NEAR(r.k_hat, -1.0, 1e-12);
  EXPECT_TRUE(r.pass);
}

TEST(SemiMonotone, DoubleWellBelowOne) {
  const auto pairs = random_pairs<1>(-3.0, 3.0, 5000, 2);
  const auto r = check_semi_monotone<DoubleWell1d, 1>(DoubleWell1d{}, pairs, 1.0);
  EXPECT_LE(r.k_hat, 1.0);
  EXPECT_GT(r.k_hat, 0.9);
  EXPECT_TRUE(r.pass);
}

TEST(SemiMonotone, SquareDriftGrowsWithRange) {
  const auto narrow = check_semi_monotone<SquareDrift, 1>(SquareDrift{}, random_pairs<1>(0.0, 1.0, 1000, 4), 5.0);
  const auto wide = check_semi_monotone<SquareDrift, 1>(SquareDrift{}, random_pairs<1>(0.0, 10.0, 1000, 4), 5.0);
  EXPECT_GT(wide.k_hat, narrow.k_hat * 5.0);
  EXPECT_FALSE(wide.pass);
}

TEST(Ellipticity, IdentityAndDiagonal) {
  std::vector<Vec<double, 2>> xs;
  for (const auto& p : random_pairs<2>(-5.0, 5.0, 200, 5)) xs.push_back(p.first);
  const BrownianModel<2> id{{1.0, 1.0}, {0.0, 0.0}, 1.0};
  const auto a = check_ellipticity(id, std::span<const Vec<double, 2>>(xs));
  EXPECT_DOUBLE_EQ(a.min_eig, 1.0);
  EXPECT_DOUBLE_EQ(a.max_eig, 1.0);
  EXPECT_TRUE(a.pass);
  const BrownianModel<2> diag{{1.0, 2.0}, {0.0, 0.0}, 1.0};
  const auto b = check_ellipticity(diag, std::span<const Vec<double, 2>>(xs));
  EXPECT_DOUBLE_EQ(b.min_eig, 1.0);
  EXPECT_DOUBLE_EQ(b.max_eig, 4.0);
  EXPECT_TRUE(b.pass);
}

TEST(Ellipticity, DegenerateFails) {
  const auto xs = line_points(-1.0, 1.0, 100);
  const BrownianModel<1> zero{{0.0}, {0.0}, 1.0};
  EXPECT_FALSE(check_ellipticity(zero, std::span<const Vec<double, 1>>(xs)).pass);
}

TEST(Ellipticity, DoubleWell2dWithinDeclared) {
  std::vector<Vec<double, 2>> xs;
  for (const auto& p : random_pairs<2>(-10.0, 10.0, 2000, 6)) xs.push_back(p.first);
  EXPECT_TRUE(check_ellipticity(DoubleWell2d{}, std::span<const Vec<double, 2>>(xs)).pass);
}

TEST(Generator, Examples) {
  const BrownianModel<1> bm{{1.0}, {0.0}, 1.0};
  for (double x : {-3.0, 0.0, 2.5}) EXPECT_DOUBLE_EQ((generator_apply<BrownianModel<1>, 1>(bm, {0.0}, 2, {x})), 1.0);
  const OrnsteinUhlenbeck<1> ou{1.0, {0.0}, {1.0}, {0.0}, 1.0};
  EXPECT_DOUBLE_EQ((generator_apply<OrnsteinUhlenbeck<1>, 1>(ou, {0.0}, 2, {2.0})), -7.0);
  EXPECT_DOUBLE_EQ((generator_apply<DoubleWell1d, 1>(DoubleWell1d{}, {0.0}, 2, {2.0})), -23.0);
}

TEST(Generator, QuarticAgainstFiniteDifferences) {
  const DoubleWell2d m;
  const Vec<double, 2> x0{0.3, -0.2}, x{1.1, 0.7};
  const double h = 1e-4;
  auto f = [&](const Vec<double, 2>& y) { return std::pow(norm2(y - x0), 2); };
  const auto b = m.drift<double>(x);
  const auto s = m.diffusion<double>(x);
  const auto a = matmul_bt<double, 2>(s, s);
  double fd = 0.0;
  for (int i = 0; i < 2; ++i) {
    auto xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    fd += b[i] * (f(xp) - f(xm)) / (2 * h);
    fd += 0.5 * a[i][i] * (f(xp) - 2 * f(x) + f(xm)) / (h * h);
  }
  EXPECT_NEAR((generator_apply<DoubleWell2d, 2>(m, x0, 4, x)), fd, 1e-5);
}

TEST(Generator, DoubleWellHypothesisShape) {
  // L_n f <= (2K + 1) f + trace bound on the truncated family.
  const TruncationFamily<DoubleWell1d> fam(DoubleWell1d{}, 4.0);
  for (const auto& x : line_points(-20.0, 20.0, 4001))
    EXPECT_LE((generator_apply<TruncationFamily<DoubleWell1d>, 1>(fam, {0.0}, 2, x)), 3.0 * x[0] * x[0] + 1.0 + 1e-9);
}

TEST(Models, ConstantsValidate) {
  EXPECT_NO_THROW(DoubleWell2d{}.constants().validate());
  EXPECT_NO_THROW(DoubleWell1d{}.constants().validate());
  EXPECT_THROW(TruncationFamily<DoubleWell1d>(DoubleWell1d{}, 0.0), ModelError);
}
