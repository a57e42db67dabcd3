#pragma once

// Density and density-derivative estimators. With the orthant indicator
// 1_{X > y} (componentwise) and the iterated weight H_(1..d),
//   rho(y)          = E[1_{X_N > y} H_(1..d)]
//   d_a rho(y)      = (-1)^{|a|} E[1_{X_N > y} H_(1..d, a)]
// Weights are computed once per path and reused for every grid point.
// Kernel density estimates and the closed-form Gaussian laws of the linear
// models serve as cross-checks; DecayEnvelope is the Gaussian-tail envelope
// c (32 C2 + 2)^q / (lambda0 t)^{d m (beta - 1/2)} exp{(-2 g2/a2 - 2 e^{-eta t}|y - x0|^2) / q}.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "malsde/malliavin.hpp"
#include "malsde/parallel.hpp"
#include "malsde/simulator.hpp"
#include "malsde/stats.hpp"

namespace malsde {

struct PointEstimate {
  double estimate = 0.0;
  double se = 0.0;
};

/// Terminal states and weights of the paths that produced a usable weight,
/// in path order.
template <int D>
struct WeightSample {
  std::vector<Vec<double, D>> terminal;
  std::vector<double> weight;
  std::size_t requested = 0;
  std::size_t dropped = 0;  // degenerate covariance

  bool dropped_warning() const { return dropped * 1000 > requested; }
};

/// Multiindex of the density weight H_(1..d).
template <int D>
Multiindex density_multiindex() {
  static_assert(D == 1 || D == 2, "densities are implemented for d <= 2");
  if constexpr (D == 1) {
    return {0};
  } else {
    return {0, 1};
  }
}

template <class Fam>
WeightSample<Fam::dim> weight_sample(const Fam& fam, const TimeGrid& grid, std::size_t paths, std::uint64_t seed,
                                     const Multiindex& alpha, int workers = 0) {
  constexpr int D = Fam::dim;
  struct Item {
    bool ok = false;
    Vec<double, D> x{};
    double h = 0.0;
  };
  auto items = parallel_map<Item>(paths, workers, [&](std::size_t i) {
    const auto noise = sample_noise<D>(grid, seed, i);
    Item it;
    try {
      const auto parts = ibp_weight_on(fam, grid.dt(), std::span<const Vec<double, D>>(noise.increments), alpha);
      it.ok = std::isfinite(parts.value);
      it.x = parts.terminal;
      it.h = parts.value;
    } catch (const DegenerateCovariance&) {
      it.ok = false;
    }
    for (double e : it.x)
      if (!std::isfinite(e)) throw NumericalError("non-finite terminal state on path " + std::to_string(i));
    return it;
  });
  WeightSample<D> s;
  s.requested = paths;
  s.terminal.reserve(paths);
  s.weight.reserve(paths);
  for (const auto& it : items) {
    if (!it.ok) {
      ++s.dropped;
      continue;
    }
    s.terminal.push_back(it.x);
    s.weight.push_back(it.h);
  }
  return s;
}

template <std::size_t D>
bool orthant_above(const std::array<double, D>& x, const std::array<double, D>& y) {
  for (std::size_t i = 0; i < D; ++i)
    if (!(x[i] > y[i])) return false;
  return true;
}

/// sign * mean of 1_{X > y} H over the sample, with its standard error.
template <int D>
PointEstimate orthant_mean(const WeightSample<D>& s, const Vec<double, D>& y, double sign = 1.0) {
  RunningStats st;
  for (std::size_t i = 0; i < s.weight.size(); ++i) st.add(orthant_above(s.terminal[i], y) ? sign * s.weight[i] : 0.0);
  return {st.mean, st.se()};
}

template <int D>
std::vector<PointEstimate> orthant_means(const WeightSample<D>& s, std::span<const Vec<double, D>> ys,
                                         double sign = 1.0) {
  std::vector<PointEstimate> out;
  out.reserve(ys.size());
  for (const auto& y : ys) out.push_back(orthant_mean<D>(s, y, sign));
  return out;
}

/// rho(y) at every y from one batch of M paths.
template <class Fam>
std::vector<PointEstimate> density_mc(const Fam& fam, const TimeGrid& grid, std::size_t paths, std::uint64_t seed,
                                      std::span<const Vec<double, Fam::dim>> ys, int workers = 0,
                                      WeightSample<Fam::dim>* sample_out = nullptr) {
  auto s = weight_sample(fam, grid, paths, seed, density_multiindex<Fam::dim>(), workers);
  auto out = orthant_means<Fam::dim>(s, ys);
  if (sample_out) *sample_out = std::move(s);
  return out;
}

/// d_alpha rho(y) for one extra derivative order. The total weight order
/// d + |alpha| is capped at 2, so only d = 1 with |alpha| = 1 qualifies.
template <class Fam>
std::vector<PointEstimate> density_derivative_mc(const Fam& fam, const TimeGrid& grid, std::size_t paths,
                                                 std::uint64_t seed, std::span<const Vec<double, Fam::dim>> ys,
                                                 const Multiindex& alpha, int workers = 0,
                                                 WeightSample<Fam::dim>* sample_out = nullptr) {
  constexpr int D = Fam::dim;
  if (alpha.empty()) return density_mc(fam, grid, paths, seed, ys, workers, sample_out);
  if (alpha.size() + D > 2)
    throw UnsupportedOrder("density derivatives need d + |alpha| <= 2, got d = " + std::to_string(D) +
                           ", |alpha| = " + std::to_string(alpha.size()));
  auto full = density_multiindex<D>();
  full.insert(full.end(), alpha.begin(), alpha.end());
  auto s = weight_sample(fam, grid, paths, seed, full, workers);
  const double sign = alpha.size() % 2 == 0 ? 1.0 : -1.0;
  auto out = orthant_means<D>(s, ys, sign);
  if (sample_out) *sample_out = std::move(s);
  return out;
}

// ---------------------------------------------------------------------------
// Kernel density estimation

template <int D>
struct KdeResult {
  std::vector<double> estimate;
  // Kernel standard error plus the leading bias term sum_i h_i^2/2 |d_ii f|,
  // with d_ii f itself estimated by the kernel.
  std::vector<double> risk;
  Vec<double, D> bandwidth{};
};

/// Gaussian-kernel estimate. d = 1: Silverman h = 1.06 s M^{-1/5};
/// d = 2: product kernel with Scott h_i = s_i M^{-1/6}. A zero sample spread
/// falls back to s = 1 so a point mass yields the kernel itself.
template <int D>
KdeResult<D> kde(std::span<const Vec<double, D>> xs, std::span<const Vec<double, D>> ys) {
  static_assert(D == 1 || D == 2, "kde is implemented for d <= 2");
  if (xs.size() < 1000) throw std::invalid_argument("kde needs >= 1000 samples");
  const double m = static_cast<double>(xs.size());
  KdeResult<D> r;
  for (int i = 0; i < D; ++i) {
    RunningStats st;
    for (const auto& x : xs) st.add(x[i]);
    double s = std::sqrt(st.variance());
    if (!(s > 0.0)) s = 1.0;
    r.bandwidth[i] = D == 1 ? 1.06 * s * std::pow(m, -0.2) : s * std::pow(m, -1.0 / 6.0);
  }
  for (const auto& y : ys) {
    RunningStats value;
    Vec<RunningStats, D> curvature{};
    for (const auto& x : xs) {
      double k = 1.0;
      Vec<double, D> u;
      for (int i = 0; i < D; ++i) {
        u[i] = (y[i] - x[i]) / r.bandwidth[i];
        k *= normal_pdf(u[i]) / r.bandwidth[i];
      }
      value.add(k);
      for (int i = 0; i < D; ++i) curvature[i].add(k * (u[i] * u[i] - 1.0) / (r.bandwidth[i] * r.bandwidth[i]));
    }
    double bias = 0.0;
    for (int i = 0; i < D; ++i) bias += 0.5 * r.bandwidth[i] * r.bandwidth[i] * std::abs(curvature[i].mean);
    r.estimate.push_back(value.mean);
    r.risk.push_back(value.se() + bias);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Closed-form laws of the linear models

/// Independent Gaussian coordinates.
template <int D>
struct GaussianLaw {
  Vec<double, D> mean{};
  Vec<double, D> variance{};
};

template <int D>
GaussianLaw<D> gaussian_law(const BrownianModel<D>& m, double t) {
  GaussianLaw<D> g;
  for (int i = 0; i < D; ++i) {
    g.mean[i] = m.x0[i];
    g.variance[i] = m.sigma[i] * m.sigma[i] * t;
  }
  return g;
}

/// X_t ~ N(x0 e^{-kt} + mu (1 - e^{-kt}), s^2 (1 - e^{-2kt}) / (2k)).
template <int D>
GaussianLaw<D> gaussian_law(const OrnsteinUhlenbeck<D>& m, double t) {
  if (m.kappa < 0.0) throw std::invalid_argument("gaussian_law needs kappa >= 0");
  GaussianLaw<D> g;
  for (int i = 0; i < D; ++i) {
    if (m.kappa == 0.0) {
      g.mean[i] = m.x0[i];
      g.variance[i] = m.sigma[i] * m.sigma[i] * t;
    } else {
      const double e = std::exp(-m.kappa * t);
      g.mean[i] = m.x0[i] * e + m.mu[i] * (1.0 - e);
      g.variance[i] = m.sigma[i] * m.sigma[i] * -std::expm1(-2.0 * m.kappa * t) / (2.0 * m.kappa);
    }
  }
  return g;
}

/// Exact law of the Euler chain X_N for the OU model: with r = 1 - k dt,
/// mean mu + (x0 - mu) r^N and variance s^2 dt sum_{j<N} r^{2j}.
template <int D>
GaussianLaw<D> euler_gaussian_law(const OrnsteinUhlenbeck<D>& m, const TimeGrid& grid) {
  if (m.kappa < 0.0) throw std::invalid_argument("euler_gaussian_law needs kappa >= 0");
  const double r = 1.0 - m.kappa * grid.dt();
  GaussianLaw<D> g;
  double geo = 0.0, pw = 1.0;
  for (int j = 0; j < grid.steps(); ++j) {
    geo += pw;
    pw *= r * r;
  }
  const double rn = std::pow(r, grid.steps());
  for (int i = 0; i < D; ++i) {
    g.mean[i] = m.mu[i] + (m.x0[i] - m.mu[i]) * rn;
    g.variance[i] = m.sigma[i] * m.sigma[i] * grid.dt() * geo;
  }
  return g;
}

/// The Brownian Euler chain is exact.
template <int D>
GaussianLaw<D> euler_gaussian_law(const BrownianModel<D>& m, const TimeGrid& grid) {
  return gaussian_law(m, grid.horizon());
}

/// d_alpha of the product Gaussian density at y, |alpha| <= 2.
template <int D>
double gaussian_oracle(const GaussianLaw<D>& law, const Vec<double, D>& y, const Multiindex& alpha = {}) {
  if (alpha.size() > 2) throw UnsupportedOrder("gaussian_oracle supports |alpha| <= 2");
  std::array<int, D> order{};
  for (int a : alpha) {
    if (a < 0 || a >= D) throw std::invalid_argument("multiindex coordinate out of range");
    ++order[a];
  }
  double out = 1.0;
  for (int i = 0; i < D; ++i) {
    const double v = law.variance[i];
    if (!(v > 0.0)) throw std::invalid_argument("gaussian_oracle needs a positive variance");
    const double z = y[i] - law.mean[i];
    const double phi = std::exp(-0.5 * z * z / v) / std::sqrt(2.0 * std::numbers::pi * v);
    switch (order[i]) {
      case 0: out *= phi; break;
      case 1: out *= -z / v * phi; break;
      default: out *= (z * z / (v * v) - 1.0 / v) * phi; break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Decay envelope

struct DecayEnvelope {
  int dim = 1;
  double c = 1.0;
  double q = 2.0;
  double m = 1.0;
  double beta = 1.0;
  double lambda0 = 1.0;
  double eta = 1.0;
  double c2 = 1.0;
  double gamma2 = 1.0;
  double alpha2 = 1.0;
  double t = 1.0;
  std::vector<double> x0;

  double log_prefactor() const {
    return q * std::log(32.0 * c2 + 2.0) - dim * m * (beta - 0.5) * std::log(lambda0 * t) -
           2.0 * gamma2 / alpha2 / q;
  }
  /// Coefficient of -|y - x0|^2 in the exponent.
  double tail_coefficient() const { return 2.0 * std::exp(-eta * t) / q; }

  double log_value(std::span<const double> y) const {
    double r2 = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) r2 += (y[i] - x0[i]) * (y[i] - x0[i]);
    return std::log(c) + log_prefactor() - tail_coefficient() * r2;
  }
  double operator()(std::span<const double> y) const { return std::exp(log_value(y)); }
};

/// Envelope with eta = a2 + 4 C2 + 1/2 and q = 2; m, beta and lambda0 enter
/// only through c, which decay_check fits.
inline DecayEnvelope make_decay_envelope(int dim, std::span<const double> x0, double t, double c2, double alpha2,
                                         double gamma2, double lambda0) {
  DecayEnvelope env;
  env.dim = dim;
  env.q = 2.0;
  env.c2 = c2;
  env.alpha2 = alpha2;
  env.gamma2 = gamma2;
  env.lambda0 = lambda0;
  env.eta = alpha2 + 4.0 * c2 + 0.5;
  env.t = t;
  env.x0.assign(x0.begin(), x0.end());
  return env;
}

struct DecayCheck {
  double c_fitted = 0.0;
  double tail_exponent = std::numeric_limits<double>::quiet_NaN();  // slope of log|est| in |y - x0|^2
  double envelope_tail = 0.0;                                        // -tail_coefficient()
  std::vector<double> envelope;
  std::vector<bool> pass;       // |est| <= envelope + 3 SE
  std::vector<bool> holdout;
  std::size_t fit_points = 0;
  double holdout_rate = 0.0;
  bool all_pass = false;
};

/// Fits c on the inner half of the grid, the ceil(n/2) points nearest x0
/// (log-scale least squares, then raised by the largest residual so every
/// fitted point is covered), and checks |est| <= envelope + 3 SE everywhere.
/// The outer half is the holdout, so coverage there tests the tail decay.
/// Points with |est| < 2 SE are excluded from the fits.
template <int D>
DecayCheck decay_check(std::span<const Vec<double, D>> ys, std::span<const PointEstimate> est, DecayEnvelope env) {
  if (ys.size() != est.size() || ys.empty()) throw std::invalid_argument("decay_check: grid and estimates differ");
  env.c = 1.0;
  DecayCheck out;
  auto dist2 = [&](std::size_t i) {
    double r2 = 0.0;
    for (int k = 0; k < D; ++k) r2 += (ys[i][k] - env.x0[k]) * (ys[i][k] - env.x0[k]);
    return r2;
  };
  std::vector<std::size_t> order(ys.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist2(a) < dist2(b); });
  std::vector<bool> inner(ys.size(), false);
  for (std::size_t j = 0; j < (ys.size() + 1) / 2; ++j) inner[order[j]] = true;
  std::vector<double> resid;
  std::vector<double> r2s, logs, ws;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    const double a = std::abs(est[i].estimate);
    if (!(a >= 2.0 * est[i].se) || a == 0.0) continue;
    r2s.push_back(dist2(i));
    logs.push_back(std::log(a));
    const double rel = est[i].se / a;
    ws.push_back(rel > 0.0 ? 1.0 / (rel * rel) : 1.0);
    if (inner[i]) resid.push_back(std::log(a) - env.log_value(std::span<const double>(ys[i].data(), D)));
  }
  out.fit_points = resid.size();
  if (resid.empty()) throw std::invalid_argument("decay_check: no estimate distinguishable from zero on the fit half");
  double mean = 0.0;
  for (double r : resid) mean += r;
  mean /= static_cast<double>(resid.size());
  double margin = 0.0;
  for (double r : resid) margin = std::max(margin, r - mean);
  env.c = std::exp(mean + margin);
  out.c_fitted = env.c;
  out.envelope_tail = -env.tail_coefficient();
  if (r2s.size() >= 2) {
    const bool spread = *std::max_element(r2s.begin(), r2s.end()) > *std::min_element(r2s.begin(), r2s.end());
    if (spread) out.tail_exponent = fit_line(r2s, logs, ws).slope;
  }
  std::size_t hold = 0, hold_ok = 0;
  out.all_pass = true;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    const double e = env(std::span<const double>(ys[i].data(), D));
    const bool ok = std::abs(est[i].estimate) <= e + 3.0 * est[i].se;
    out.envelope.push_back(e);
    out.pass.push_back(ok);
    out.holdout.push_back(!inner[i]);
    if (!inner[i]) {
      ++hold;
      hold_ok += ok;
    }
    out.all_pass = out.all_pass && ok;
  }
  out.holdout_rate = hold ? static_cast<double>(hold_ok) / static_cast<double>(hold) : 1.0;
  return out;
}

/// Gaussian tail coefficient of a density: weighted fit of log(est) against
/// |y - x0|^2 over the points with est >= 2 SE, weights (est / SE)^2.
template <int D>
double tail_exponent(std::span<const Vec<double, D>> ys, std::span<const PointEstimate> est,
                     const Vec<double, D>& x0) {
  std::vector<double> r2s, logs, ws;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    if (!(est[i].estimate >= 2.0 * est[i].se) || est[i].estimate <= 0.0) continue;
    r2s.push_back(norm2(ys[i] - x0));
    logs.push_back(std::log(est[i].estimate));
    const double rel = est[i].se / est[i].estimate;
    ws.push_back(rel > 0.0 ? 1.0 / (rel * rel) : 1.0);
  }
  return fit_line(r2s, logs, ws).slope;
}

// ---------------------------------------------------------------------------
// Report

struct DensityReport {
  std::string model;
  double level = std::numeric_limits<double>::infinity();
  int steps = 0;
  std::size_t paths = 0;
  std::uint64_t seed = 0;
  std::string alpha;  // "" for the density, else 1-based coordinates joined by '.'
  std::vector<std::vector<double>> ys;
  std::vector<PointEstimate> estimate;
  std::vector<double> kde;     // NaN when not computed
  std::vector<double> oracle;  // NaN when no closed form
  std::vector<double> envelope;
  std::vector<bool> pass;
  std::size_t dropped = 0;
};

inline std::string multiindex_label(const Multiindex& alpha) {
  std::string s;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    if (i) s += '.';
    s += std::to_string(alpha[i] + 1);
  }
  return s;
}

/// y-grid of `points` values spanning center +- width in every coordinate
/// (d = 2: along the diagonal).
template <int D>
std::vector<Vec<double, D>> diagonal_grid(const Vec<double, D>& center, double width, int points) {
  if (points < 2) throw std::invalid_argument("a grid needs >= 2 points");
  std::vector<Vec<double, D>> ys(points);
  for (int i = 0; i < points; ++i) {
    const double s = -width + 2.0 * width * i / (points - 1);
    for (int k = 0; k < D; ++k) ys[i][k] = center[k] + s;
  }
  return ys;
}

}  // namespace malsde
