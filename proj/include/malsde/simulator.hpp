#pragma once

// Euler-Maruyama chains for the truncated SDEs, driven by counter-based
// Brownian increments.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "malsde/linalg.hpp"
#include "malsde/parallel.hpp"
#include "malsde/rng.hpp"
#include "malsde/sde_model.hpp"
#include "malsde/stats.hpp"

namespace malsde {

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Uniform grid on [0, T]. dt * N == T holds exactly in double precision.
class TimeGrid {
 public:
  TimeGrid(double horizon, int steps) : horizon_(horizon), steps_(steps), dt_(horizon / steps) {
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw std::invalid_argument("grid horizon must be positive");
    if (steps < 1) throw std::invalid_argument("grid needs at least one step");
    if (dt_ * steps_ != horizon_)
      throw std::invalid_argument("T / N is not exactly representable for this grid; pick another N");
  }

  double horizon() const { return horizon_; }
  int steps() const { return steps_; }
  double dt() const { return dt_; }
  double time(int k) const { return k == steps_ ? horizon_ : dt_ * k; }

 private:
  double horizon_;
  int steps_;
  double dt_;
};

template <int D>
struct NoisePath {
  std::uint64_t seed = 0;
  std::uint64_t path_id = 0;
  std::vector<Vec<double, D>> increments;  // Delta W_k, k = 0..N-1
};

template <int D>
struct EulerChain {
  double dt = 0.0;
  double level = std::numeric_limits<double>::infinity();
  std::vector<Vec<double, D>> states;  // X_0..X_N
  std::vector<Vec<double, D>> increments;

  const Vec<double, D>& terminal() const { return states.back(); }
};

/// N*d normals of variance dt from the stream keyed by (seed, path_id);
/// component l of step k is stream index k*d + l.
template <int D>
NoisePath<D> sample_noise(const TimeGrid& grid, std::uint64_t seed, std::uint64_t path_id) {
  NoisePath<D> path;
  path.seed = seed;
  path.path_id = path_id;
  path.increments.resize(grid.steps());
  const double sq = std::sqrt(grid.dt());
  const NormalStream stream(seed, path_id);
  const std::uint64_t total = std::uint64_t(grid.steps()) * D;
  for (std::uint64_t j = 0; j < total; j += 2) {
    const auto z = stream.pair(j / 2);
    path.increments[j / D][j % D] = sq * z[0];
    if (j + 1 < total) path.increments[(j + 1) / D][(j + 1) % D] = sq * z[1];
  }
  return path;
}

/// X_{k+1} = X_k + b_n(X_k) dt + sigma(X_k) dW_k, in a fixed operation order
/// so a stored chain can be replayed bitwise.
template <class Fam, class S, int D = Fam::dim>
Vec<S, D> euler_step(const Fam& fam, const Vec<S, D>& x, double dt, const Vec<S, D>& dw) {
  const auto b = fam.template drift<S>(x);
  const auto s = fam.template diffusion<S>(x);
  Vec<S, D> next;
  for (int i = 0; i < D; ++i) {
    S noise(0.0);
    for (int l = 0; l < D; ++l) noise += s[i][l] * dw[l];
    next[i] = x[i] + b[i] * dt + noise;
  }
  return next;
}

/// Terminal state only (no allocation of the full chain).
template <class Fam, class S, int D = Fam::dim>
Vec<S, D> euler_terminal(const Fam& fam, double dt, std::type_identity_t<std::span<const Vec<S, D>>> incs) {
  Vec<S, D> x;
  for (int i = 0; i < D; ++i) x[i] = S(fam.x0()[i]);
  for (const auto& dw : incs) x = euler_step<Fam, S, D>(fam, x, dt, dw);
  return x;
}

template <class Fam, int D = Fam::dim>
EulerChain<D> simulate_chain(const Fam& fam, const TimeGrid& grid, const NoisePath<D>& noise) {
  if (static_cast<int>(noise.increments.size()) != grid.steps())
    throw std::invalid_argument("noise path length does not match the grid");
  EulerChain<D> chain;
  chain.dt = grid.dt();
  chain.level = fam.level;
  chain.increments = noise.increments;
  chain.states.resize(grid.steps() + 1);
  chain.states[0] = fam.x0();
  for (int k = 0; k < grid.steps(); ++k) {
    chain.states[k + 1] = euler_step<Fam, double, D>(fam, chain.states[k], grid.dt(), noise.increments[k]);
    for (double e : chain.states[k + 1])
      if (!std::isfinite(e)) throw NumericalError("non-finite Euler state at step " + std::to_string(k + 1));
  }
  return chain;
}

template <int D>
double sup_distance(const EulerChain<D>& a, const EulerChain<D>& b) {
  double d = 0.0;
  for (std::size_t k = 0; k < a.states.size(); ++k) d = std::max(d, std::sqrt(norm2(a.states[k] - b.states[k])));
  return d;
}

template <int D>
struct CoupledPair {
  EulerChain<D> coarse;
  EulerChain<D> fine;
  double distance = 0.0;  // max_k |X_k^{n1} - X_k^{n2}|
};

/// Two truncation levels driven by the same noise path.
template <SdeModel M>
CoupledPair<M::dim> coupled_truncation_pair(const M& base, double n1, double n2, const TimeGrid& grid,
                                            const NoisePath<M::dim>& noise) {
  if (n1 > n2) throw std::invalid_argument("coupled_truncation_pair needs n1 <= n2");
  CoupledPair<M::dim> pair;
  pair.coarse = simulate_chain(TruncationFamily<M>(base, n1), grid, noise);
  pair.fine = simulate_chain(TruncationFamily<M>(base, n2), grid, noise);
  pair.distance = sup_distance(pair.coarse, pair.fine);
  return pair;
}

struct MomentEstimate {
  std::vector<double> mean;  // E|X_k|^p per grid time
  std::vector<double> se;
  double sup = 0.0;          // max over k of mean
  double sup_se = 0.0;
  int argmax = 0;
  bool overflow = false;
};

/// sup_k E|X_k^n|^p over the grid, with per-time standard errors. If any
/// |X|^p overflows, the moments are recomputed from log-space accumulators
/// and the estimate is flagged.
template <class Fam>
MomentEstimate moment_estimate(const Fam& fam, const TimeGrid& grid, int p, std::size_t paths,
                               std::uint64_t seed, int workers = 0) {
  constexpr int D = Fam::dim;
  if (p < 1) throw std::invalid_argument("moment order must be >= 1");
  if (paths < 100) throw std::invalid_argument("moment_estimate needs >= 100 paths");
  const int n1 = grid.steps() + 1;
  struct Acc {
    std::vector<RunningStats> linear;
    std::vector<LogSumExp> first, second;
    bool overflow = false;
  };
  auto make = [&] { return Acc{std::vector<RunningStats>(n1), std::vector<LogSumExp>(n1), std::vector<LogSumExp>(n1)}; };
  auto add = [&](Acc& acc, std::size_t path) {
    const auto chain = simulate_chain(fam, grid, sample_noise<D>(grid, seed, path));
    for (int k = 0; k < n1; ++k) {
      const double r2 = norm2(chain.states[k]);
      const double v = p == 2 ? r2 : std::pow(r2, 0.5 * p);
      if (!std::isfinite(v)) acc.overflow = true;
      acc.linear[k].add(v);
      const double l = 0.5 * p * std::log(r2);
      acc.first[k].add(l);
      acc.second[k].add(2.0 * l);
    }
  };
  auto merge = [&](Acc& total, const Acc& part) {
    for (int k = 0; k < n1; ++k) {
      total.linear[k].merge(part.linear[k]);
      total.first[k].merge(part.first[k]);
      total.second[k].merge(part.second[k]);
    }
    total.overflow = total.overflow || part.overflow;
  };
  const Acc acc = parallel_reduce<Acc>(paths, workers, make, add, merge);
  MomentEstimate est;
  est.overflow = acc.overflow;
  est.mean.resize(n1);
  est.se.resize(n1);
  const double logm = std::log(static_cast<double>(paths));
  for (int k = 0; k < n1; ++k) {
    if (!acc.overflow) {
      est.mean[k] = acc.linear[k].mean;
      est.se[k] = acc.linear[k].se();
    } else {
      // Stays finite as long as the mean itself is representable.
      const double m1 = std::exp(acc.first[k].log_sum() - logm);
      const double m2 = std::exp(acc.second[k].log_sum() - logm);
      est.mean[k] = m1;
      est.se[k] = std::sqrt(std::max(0.0, m2 - m1 * m1) / static_cast<double>(paths - 1));
    }
    if (k == 0 || est.mean[k] > est.sup) {
      est.sup = est.mean[k];
      est.argmax = k;
    }
  }
  est.sup_se = est.se[est.argmax];
  return est;
}

}  // namespace malsde
