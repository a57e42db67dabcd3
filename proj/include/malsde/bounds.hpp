#pragma once

// Empirical checks of the quantitative hypotheses and lemmas: generator
// domination, exponential moments, tails, derivative and covariance moments,
// inverse-covariance scaling in t, and L^p convergence of the truncations.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "malsde/density.hpp"
#include "malsde/report.hpp"
#include "malsde/malliavin.hpp"
#include "malsde/parallel.hpp"
#include "malsde/rng.hpp"
#include "malsde/sde_model.hpp"
#include "malsde/simulator.hpp"
#include "malsde/stats.hpp"

namespace malsde {

constexpr double kAlphaFloor = 0.01;

struct BoundReport {
  std::string check;
  std::string model;
  double level = std::numeric_limits<double>::infinity();
  int steps = 0;
  std::size_t paths = 0;
  std::uint64_t seed = 0;
  std::string param;
  double lhs = 0.0;
  double se = 0.0;
  double rhs = 0.0;
  bool informational = false;
  std::vector<std::pair<std::string, double>> constants;

  double margin() const { return rhs - lhs; }
  bool pass() const { return lhs <= rhs + 3.0 * se; }
};

// ---------------------------------------------------------------------------
// Sample points

/// `count` points uniform in the closed ball of radius r around center, from
/// an auxiliary stream so they never coincide with path noise.
template <int D>
std::vector<Vec<double, D>> ball_sample(const Vec<double, D>& center, double r, std::size_t count, std::uint64_t seed,
                                        std::uint64_t stream = 0) {
  static_assert(D == 1 || D == 2, "ball_sample is implemented for d <= 2");
  const NormalStream s(seed, kAuxStreamBase + stream);
  std::vector<Vec<double, D>> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    if constexpr (D == 1) {
      out[i][0] = center[0] + r * (2.0 * s.uniform(i) - 1.0);
    } else {
      const double rad = r * std::sqrt(s.uniform(2 * i));
      const double th = 2.0 * std::numbers::pi * s.uniform(2 * i + 1);
      out[i] = {center[0] + rad * std::cos(th), center[1] + rad * std::sin(th)};
    }
  }
  return out;
}

template <int D>
std::vector<std::pair<Vec<double, D>, Vec<double, D>>> pair_sample(const Vec<double, D>& center, double r,
                                                                   std::size_t count, std::uint64_t seed) {
  const auto a = ball_sample<D>(center, r, count, seed, 1);
  const auto b = ball_sample<D>(center, r, count, seed, 2);
  std::vector<std::pair<Vec<double, D>, Vec<double, D>>> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = {a[i], b[i]};
  return out;
}

// ---------------------------------------------------------------------------
// Generator domination

struct GeneratorFit {
  int p = 2;
  double alpha_raw = 0.0;   // minimal slope on the sample
  double gamma_raw = 0.0;   // minimal intercept for alpha_raw
  double alpha = 0.0;       // max(alpha_raw, floor), used by the checks
  double gamma = 0.0;       // minimal intercept for alpha, after holdout validation
  double radius = 0.0;
  std::size_t samples = 0;
  std::size_t holdout = 0;
  std::size_t holdout_violations = 0;  // before the intercept was raised
};

/// Minimal-slope fit of L_n f <= alpha f + gamma for f = |x - x0|^p on the
/// ball of radius R around x0: gamma0 = max of L_n f on |x - x0| < 1, then
/// alpha = max over |x - x0| >= 1 of (L_n f - gamma0) / f, then the smallest
/// gamma valid at every sample for that alpha. A fresh holdout of 10^4 points
/// is checked at tolerance 1e-9 and gamma raised to cover it.
template <class Fam>
GeneratorFit fit_generator_constants(const Fam& fam, int p, double radius, std::size_t samples, std::uint64_t seed,
                                     double alpha_floor = kAlphaFloor) {
  constexpr int D = Fam::dim;
  if (radius < 1.0) throw std::invalid_argument("generator fit needs a radius >= 1");
  if (std::isfinite(fam.level) && radius < fam.level)
    throw std::invalid_argument("generator fit radius must cover the truncation level");
  if (samples < 100) throw std::invalid_argument("generator fit needs >= 100 samples");
  const auto& x0 = fam.x0();
  const auto xs = ball_sample<D>(x0, radius, samples, seed, 10);
  std::vector<double> f(samples), lf(samples);
  double gamma0 = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < samples; ++i) {
    const double r2 = norm2(xs[i] - x0);
    f[i] = std::pow(r2, p / 2);
    lf[i] = generator_apply<Fam, D>(fam, x0, p, xs[i]);
    if (r2 < 1.0) gamma0 = std::max(gamma0, lf[i]);
  }
  // x0 itself: f = 0, so gamma >= L f(x0) whatever alpha is.
  gamma0 = std::max(gamma0, generator_apply<Fam, D>(fam, x0, p, x0));
  double alpha = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < samples; ++i)
    if (f[i] >= 1.0) alpha = std::max(alpha, (lf[i] - gamma0) / f[i]);
  if (!std::isfinite(alpha)) alpha = 0.0;
  auto intercept = [&](double a) {
    double g = gamma0;
    for (std::size_t i = 0; i < samples; ++i) g = std::max(g, lf[i] - a * f[i]);
    return g;
  };
  GeneratorFit fit;
  fit.p = p;
  fit.radius = radius;
  fit.samples = samples;
  fit.alpha_raw = alpha;
  fit.gamma_raw = intercept(alpha);
  fit.alpha = std::max(alpha, alpha_floor);
  fit.gamma = intercept(fit.alpha);

  const auto hold = ball_sample<D>(x0, radius, 10000, seed, 11);
  fit.holdout = hold.size();
  double needed = fit.gamma;
  for (const auto& x : hold) {
    const double v = generator_apply<Fam, D>(fam, x0, p, x) - fit.alpha * std::pow(norm2(x - x0), p / 2);
    if (v > fit.gamma + 1e-9) ++fit.holdout_violations;
    needed = std::max(needed, v);
  }
  fit.gamma = needed;
  return fit;
}

/// Violations of L_n f <= alpha f + gamma (tolerance 1e-9) on the points.
template <class Fam>
std::size_t generator_violations(const Fam& fam, const GeneratorFit& fit, double alpha, double gamma,
                                 std::span<const Vec<double, Fam::dim>> xs) {
  std::size_t bad = 0;
  for (const auto& x : xs) {
    const double f = std::pow(norm2(x - fam.x0()), fit.p / 2);
    if (generator_apply<Fam, Fam::dim>(fam, fam.x0(), fit.p, x) > alpha * f + gamma + 1e-9) ++bad;
  }
  return bad;
}

// ---------------------------------------------------------------------------
// Exponential moments and tails

struct ExpMomentSample {
  std::vector<double> zetas;
  std::vector<RunningStats> stats;   // exp(sup_k zeta e^{-eta t_k} |X_k - x0|^2)
  std::vector<LogSumExp> log_sums;   // same values in log space
  std::vector<double> eta;
  bool overflow = false;
};

/// One batch of paths evaluated for every zeta, with eta(zeta) supplied.
template <class Fam, class EtaFn>
ExpMomentSample exp_moment_sample(const Fam& fam, const TimeGrid& grid, std::size_t paths, std::uint64_t seed,
                                  std::span<const double> zetas, EtaFn&& eta_of, int workers = 0) {
  constexpr int D = Fam::dim;
  const std::size_t nz = zetas.size();
  std::vector<double> eta(nz);
  for (std::size_t j = 0; j < nz; ++j) eta[j] = eta_of(zetas[j]);
  struct Acc {
    std::vector<RunningStats> st;
    std::vector<LogSumExp> ls;
    bool overflow = false;
  };
  auto make = [&] { return Acc{std::vector<RunningStats>(nz), std::vector<LogSumExp>(nz)}; };
  auto add = [&](Acc& acc, std::size_t path) {
    const auto chain = simulate_chain(fam, grid, sample_noise<D>(grid, seed, path));
    for (std::size_t j = 0; j < nz; ++j) {
      double sup = 0.0;
      for (int k = 0; k <= grid.steps(); ++k)
        sup = std::max(sup, zetas[j] * std::exp(-eta[j] * grid.time(k)) * norm2(chain.states[k] - fam.x0()));
      const double v = std::exp(sup);
      if (!std::isfinite(v)) acc.overflow = true;
      acc.st[j].add(v);
      acc.ls[j].add(sup);
    }
  };
  auto merge = [&](Acc& t, const Acc& p) {
    for (std::size_t j = 0; j < nz; ++j) {
      t.st[j].merge(p.st[j]);
      t.ls[j].merge(p.ls[j]);
    }
    t.overflow = t.overflow || p.overflow;
  };
  const Acc acc = parallel_reduce<Acc>(paths, workers, make, add, merge);
  return {std::vector<double>(zetas.begin(), zetas.end()), acc.st, acc.ls, eta, acc.overflow};
}

/// Lemma-type bound E[exp(sup_t zeta e^{-eta t}|X_t - x0|^2)] <=
/// (8 C2 zeta^2 + 2) exp(-zeta gamma2 / alpha2), eta = alpha2 + 2 C2 zeta + 1/zeta.
/// Returns one report per zeta; with `flipped_sign` the exponent is
/// +zeta gamma2 / alpha2 and the rows are informational.
template <class Fam>
std::vector<BoundReport> exp_moment_check(const Fam& fam, const TimeGrid& grid, std::size_t paths, std::uint64_t seed,
                                          std::span<const double> zetas, const GeneratorFit& fit, double c2,
                                          bool flipped_sign = false, int workers = 0) {
  if (!(fit.alpha > 0.0)) throw std::invalid_argument("exp_moment_check needs alpha2 > 0");
  for (double z : zetas)
    if (!(z > 0.0)) throw std::invalid_argument("exp_moment_check needs zeta > 0");
  const auto sample = exp_moment_sample(fam, grid, paths, seed, zetas,
                                        [&](double z) { return fit.alpha + 2.0 * c2 * z + 1.0 / z; }, workers);
  std::vector<BoundReport> out;
  const double logm = std::log(static_cast<double>(paths));
  for (std::size_t j = 0; j < zetas.size(); ++j) {
    BoundReport r;
    r.check = flipped_sign ? "exp_moment_flipped" : "exp_moment";
    r.level = fam.level;
    r.steps = grid.steps();
    r.paths = paths;
    r.seed = seed;
    r.param = "zeta=" + format_number(zetas[j]);
    if (!sample.overflow) {
      r.lhs = sample.stats[j].mean;
      r.se = sample.stats[j].se();
    } else {
      r.lhs = std::exp(sample.log_sums[j].log_sum() - logm);
      r.se = std::numeric_limits<double>::infinity();
    }
    const double z = zetas[j];
    const double expo = (flipped_sign ? 1.0 : -1.0) * z * fit.gamma / fit.alpha;
    r.rhs = (8.0 * c2 * z * z + 2.0) * std::exp(expo);
    r.informational = flipped_sign;
    r.constants = {{"zeta", z},           {"eta", sample.eta[j]},     {"C2", c2},
                   {"alpha2", fit.alpha}, {"alpha2_raw", fit.alpha_raw}, {"gamma2", fit.gamma}};
    out.push_back(std::move(r));
  }
  return out;
}

/// P(X_T > y) (orthant for d = 2) against
/// (32 C2 + 2) exp{-2 gamma2/alpha2 - 2 e^{-eta T}|y - x0|^2}, eta = alpha2 + 4 C2 + 1/2.
/// The levels are offsets r with y = x0 + r (every coordinate).
template <class Fam>
std::vector<BoundReport> tail_check(const Fam& fam, const TimeGrid& grid, std::size_t paths, std::uint64_t seed,
                                    std::span<const double> offsets, const GeneratorFit& fit, double c2,
                                    bool flipped_sign = false, int workers = 0) {
  constexpr int D = Fam::dim;
  if (!(fit.alpha > 0.0)) throw std::invalid_argument("tail_check needs alpha2 > 0");
  const auto terminal = parallel_map<Vec<double, D>>(paths, workers, [&](std::size_t i) {
    const auto noise = sample_noise<D>(grid, seed, i);
    return euler_terminal<Fam, double, D>(fam, grid.dt(), std::span<const Vec<double, D>>(noise.increments));
  });
  const double eta = fit.alpha + 4.0 * c2 + 0.5;
  const double t = grid.horizon();
  std::vector<BoundReport> out;
  for (double off : offsets) {
    Vec<double, D> y;
    for (int i = 0; i < D; ++i) y[i] = fam.x0()[i] + off;
    RunningStats st;
    for (const auto& x : terminal) st.add(orthant_above(x, y) ? 1.0 : 0.0);
    BoundReport r;
    r.check = flipped_sign ? "tail_flipped" : "tail";
    r.level = fam.level;
    r.steps = grid.steps();
    r.paths = paths;
    r.seed = seed;
    r.param = "offset=" + format_number(off);
    r.lhs = st.mean;
    r.se = st.se();
    const double dist2 = norm2(y - fam.x0());
    r.rhs = (32.0 * c2 + 2.0) *
            std::exp((flipped_sign ? 2.0 : -2.0) * fit.gamma / fit.alpha - 2.0 * std::exp(-eta * t) * dist2);
    r.informational = flipped_sign;
    r.constants = {{"eta", eta}, {"C2", c2}, {"alpha2", fit.alpha}, {"alpha2_raw", fit.alpha_raw}, {"gamma2", fit.gamma}};
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Moments of DX and Q across truncation levels

struct LevelMoment {
  double level = 0.0;
  double mean = 0.0;
  double se = 0.0;
};

struct SpreadReport {
  std::vector<LevelMoment> rows;
  double max = 0.0;
  double spread = 0.0;  // (max - min) / max
  bool pass = false;
};

inline SpreadReport spread_of(std::vector<LevelMoment> rows, double tolerance) {
  SpreadReport r;
  r.rows = std::move(rows);
  double lo = std::numeric_limits<double>::infinity();
  for (const auto& m : r.rows) {
    r.max = std::max(r.max, m.mean);
    lo = std::min(lo, m.mean);
  }
  r.spread = r.max > 0.0 ? (r.max - lo) / r.max : 0.0;
  r.pass = std::isfinite(r.max) && r.spread <= tolerance;
  return r;
}

/// E[(sum_k dt |D_k X_T|_F^2)^{p/2}] for each level, common noise across levels.
template <SdeModel M>
SpreadReport dnorm_check(const M& base, std::span<const double> levels, const TimeGrid& grid, std::size_t paths,
                         int p, std::uint64_t seed, int workers = 0) {
  constexpr int D = M::dim;
  if (p != 2 && p != 4) throw std::invalid_argument("dnorm_check supports p in {2, 4}");
  std::vector<LevelMoment> rows;
  for (double n : levels) {
    const TruncationFamily<M> fam(base, n);
    auto acc = parallel_reduce<RunningStats>(
        paths, workers, [] { return RunningStats{}; },
        [&](RunningStats& st, std::size_t i) {
          const auto noise = sample_noise<D>(grid, seed, i);
          const auto sw = forward_sweep<double>(fam, grid.dt(), std::span<const Vec<double, D>>(noise.increments),
                                                false, true);
          const auto gk = backward_sweep(sw);
          double h = 0.0;
          for (const auto& g : gk) h += grid.dt() * frobenius2<double, D>(g);
          st.add(std::pow(h, 0.5 * p));
        },
        [](RunningStats& t, const RunningStats& s) { t.merge(s); });
    rows.push_back({n, acc.mean, acc.se()});
  }
  return spread_of(std::move(rows), 0.10);
}

/// Q(t_m) = dt Gamma_m along the chain, Gamma_{m+1} = A_m Gamma_m A_m^T + sigma sigma^T(X_m).
template <class Fam, int D = Fam::dim>
std::vector<Mat<double, D>> covariance_path(const Fam& fam, double dt, std::span<const Vec<double, D>> incs) {
  const auto sw = forward_sweep<double>(fam, dt, incs, false, true);
  std::vector<Mat<double, D>> q(incs.size() + 1);
  auto gamma = zero_mat<double, D>();
  q[0] = gamma;
  for (std::size_t m = 0; m < incs.size(); ++m) {
    const auto& a = sw.step_jacobian[m];
    gamma = matmul_bt<double, D>(matmul<double, D>(a, gamma), a) + matmul_bt<double, D>(sw.sigma[m], sw.sigma[m]);
    q[m + 1] = scaled<double, D>(gamma, dt);
  }
  return q;
}

/// max over grid times of E|Q_n(t)|_F^2 for each level.
template <SdeModel M>
SpreadReport covq_moment_check(const M& base, std::span<const double> levels, const TimeGrid& grid,
                               std::size_t paths, std::uint64_t seed, int workers = 0) {
  constexpr int D = M::dim;
  std::vector<LevelMoment> rows;
  const int n1 = grid.steps() + 1;
  for (double n : levels) {
    const TruncationFamily<M> fam(base, n);
    auto acc = parallel_reduce<std::vector<RunningStats>>(
        paths, workers, [&] { return std::vector<RunningStats>(n1); },
        [&](std::vector<RunningStats>& st, std::size_t i) {
          const auto noise = sample_noise<D>(grid, seed, i);
          const auto q = covariance_path<TruncationFamily<M>, D>(fam, grid.dt(),
                                                                 std::span<const Vec<double, D>>(noise.increments));
          for (int m = 0; m < n1; ++m) st[m].add(frobenius2<double, D>(q[m]));
        },
        [&](std::vector<RunningStats>& t, const std::vector<RunningStats>& s) {
          for (int m = 0; m < n1; ++m) t[m].merge(s[m]);
        });
    LevelMoment best{n, -1.0, 0.0};
    for (const auto& s : acc)
      if (s.mean > best.mean) best = {n, s.mean, s.se()};
    rows.push_back(best);
  }
  return spread_of(std::move(rows), 0.10);
}

// ---------------------------------------------------------------------------
// Inverse covariance scaling

struct InvCovRow {
  int p = 1;
  std::vector<double> t;
  std::vector<double> mean;  // E[det Q(t)^{-p}]
  std::vector<double> se;
  std::vector<bool> ess_warning;  // top 1% of terms carry > 50% of the sum
  double slope = 0.0;
  double hypothesis_exponent = 0.0;  // -d(p - 1/2)
  double appendix_exponent = 0.0;    // -d(p - 1/2) - 2
  double constant_sigma_exponent = 0.0;  // -d p
};

/// For each t, a chain of N steps on [0, t]; det Q(t)^{-p} accumulated in log
/// space; slope of log E vs log t by least squares.
template <class Fam>
std::vector<InvCovRow> invcov_moment_scaling(const Fam& fam, std::span<const double> times, std::span<const int> ps,
                                             int steps, std::size_t paths, std::uint64_t seed, int workers = 0) {
  constexpr int D = Fam::dim;
  if (times.size() < 2) throw std::invalid_argument("invcov_moment_scaling needs >= 2 times");
  const double tmin = *std::min_element(times.begin(), times.end());
  const double tmax = *std::max_element(times.begin(), times.end());
  if (tmax < 10.0 * tmin * (1.0 - 1e-12)) throw std::invalid_argument("the t-grid must span a decade");
  std::vector<InvCovRow> rows(ps.size());
  for (std::size_t j = 0; j < ps.size(); ++j) {
    rows[j].p = ps[j];
    rows[j].hypothesis_exponent = -D * (ps[j] - 0.5);
    rows[j].appendix_exponent = -D * (ps[j] - 0.5) - 2.0;
    rows[j].constant_sigma_exponent = -D * ps[j];
  }
  for (double t : times) {
    const TimeGrid grid(t, steps);
    const auto logdet = parallel_map<double>(paths, workers, [&](std::size_t i) {
      const auto noise = sample_noise<D>(grid, seed, i);
      const auto sw = forward_sweep<double>(fam, grid.dt(), std::span<const Vec<double, D>>(noise.increments),
                                            false, false);
      const double det = determinant<double, D>(scaled<double, D>(sw.gram, grid.dt()));
      if (!(det > kDegenerateDet)) throw DegenerateCovariance("degenerate covariance in invcov scaling");
      return std::log(det);
    });
    for (auto& row : rows) {
      LogSumExp first, second;
      std::vector<double> terms(paths);
      for (std::size_t i = 0; i < paths; ++i) {
        terms[i] = -row.p * logdet[i];
        first.add(terms[i]);
        second.add(2.0 * terms[i]);
      }
      const double logm = std::log(static_cast<double>(paths));
      const double m1 = std::exp(first.log_sum() - logm);
      const double m2 = std::exp(second.log_sum() - logm);
      row.t.push_back(t);
      row.mean.push_back(m1);
      row.se.push_back(std::sqrt(std::max(0.0, m2 - m1 * m1) / static_cast<double>(paths - 1)));
      std::sort(terms.begin(), terms.end(), std::greater<>());
      LogSumExp top;
      const std::size_t ntop = std::max<std::size_t>(1, paths / 100);
      for (std::size_t i = 0; i < ntop; ++i) top.add(terms[i]);
      row.ess_warning.push_back(top.log_sum() - first.log_sum() > std::log(0.5));
    }
  }
  for (auto& row : rows) {
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < row.t.size(); ++i) {
      lx.push_back(std::log(row.t[i]));
      ly.push_back(std::log(row.mean[i]));
    }
    row.slope = fit_line(lx, ly).slope;
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Truncation convergence

struct ConvergenceRow {
  double n1 = 0.0, n2 = 0.0;
  double value = 0.0;  // E[max_k |X^{n1}_k - X^{n2}_k|^p]^{1/p}
  double nonzero_fraction = 0.0;
};

template <SdeModel M>
std::vector<ConvergenceRow> truncation_convergence(const M& base, std::span<const double> levels,
                                                   const TimeGrid& grid, std::size_t paths, int p,
                                                   std::uint64_t seed, int workers = 0) {
  constexpr int D = M::dim;
  if (p < 1) throw std::invalid_argument("truncation_convergence needs p >= 1");
  for (std::size_t i = 1; i < levels.size(); ++i)
    if (levels[i] < levels[i - 1]) throw std::invalid_argument("truncation levels must be increasing");
  std::vector<ConvergenceRow> rows;
  for (std::size_t i = 0; i + 1 < levels.size(); ++i) {
    struct Acc {
      RunningStats dist;
      RunningStats nonzero;
    };
    const auto acc = parallel_reduce<Acc>(
        paths, workers, [] { return Acc{}; },
        [&](Acc& a, std::size_t path) {
          const auto pair =
              coupled_truncation_pair(base, levels[i], levels[i + 1], grid, sample_noise<D>(grid, seed, path));
          a.dist.add(std::pow(pair.distance, p));
          a.nonzero.add(pair.distance > 0.0 ? 1.0 : 0.0);
        },
        [](Acc& t, const Acc& s) {
          t.dist.merge(s.dist);
          t.nonzero.merge(s.nonzero);
        });
    rows.push_back({levels[i], levels[i + 1], std::pow(acc.dist.mean, 1.0 / p), acc.nonzero.mean});
  }
  return rows;
}

}  // namespace malsde
