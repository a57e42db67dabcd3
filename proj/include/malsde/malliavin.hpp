#pragma once

// Exact Malliavin calculus on the Euler chain. The chain is a smooth function
// X_N(dW_0, ..., dW_{N-1}) of finitely many Gaussian increments of variance
// dt, so
//   D_k F      = dF / d(dW_k)                       (a d-vector per step)
//   <DF, DG>   = sum_k dt <D_k F, D_k G>
//   delta(u)   = sum_k <u_k, dW_k> - dt sum_k tr(d u_k / d(dW_k))
// satisfy E[<DF, u>] = E[F delta(u)] exactly at every N.
//
// Integration-by-parts weight for a coordinate i and a functional G:
//   H_i(G) = sum_j delta(G P_ij D X^j),  P = Q^{-1},  Q = <DX, DX^T>.
// Using delta(A h) = A delta(h) - <DA, h> and dP = -P dQ P:
//   H_i(G) = sum_j [ G P_ij delta(DX^j) - P_ij <DG, DX^j> + G (P Qdot_j P)_ij ]
// where delta(DX^j) = sum_k <D_k X^j, dW_k> - dt Lap(X^j), Lap is the sum of
// the pure second derivatives over all increments, and Qdot_j = <DQ, DX^j>
// is the derivative of Q along the direction (dt D_k X^j)_k. All three pieces
// cost O(N) per path: a forward sweep carries X, the step Jacobians, the Gram
// matrix Gamma (Q = dt Gamma_N) and Lap; a backward sweep gives D_k X_N; the
// directional derivatives come from one more forward sweep in dual numbers.

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "malsde/dual.hpp"
#include "malsde/jets.hpp"
#include "malsde/linalg.hpp"
#include "malsde/sde_model.hpp"
#include "malsde/simulator.hpp"

namespace malsde {

struct DegenerateCovariance : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct UnsupportedOrder : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

constexpr double kDegenerateDet = 1e-30;

// ---------------------------------------------------------------------------
// Sweeps

template <class S, int D>
struct ForwardSweep {
  std::vector<Vec<S, D>> states;       // X_0..X_N
  std::vector<Mat<S, D>> step_jacobian;  // A_m = dX_{m+1} / dX_m
  std::vector<Mat<S, D>> sigma;        // sigma(X_m)
  Vec<S, D> terminal;
  Mat<S, D> gram;                      // Gamma_N, so Q = dt * Gamma_N
  Vec<S, D> laplacian;                 // sum over increments of d^2 X_N / d(dW)^2
};

template <class S, int D>
Mat<S, D> step_jacobian(const Mat<S, D>& jb, const Tensor3<S, D>& jsigma, double dt, const Vec<S, D>& dw) {
  Mat<S, D> a;
  for (int i = 0; i < D; ++i)
    for (int p = 0; p < D; ++p) {
      S v = jb[i][p] * dt;
      for (int l = 0; l < D; ++l) v += jsigma[i][l][p] * dw[l];
      a[i][p] = v + (i == p ? 1.0 : 0.0);
    }
  return a;
}

/// One forward pass. With `laplacian` the second-order jets are evaluated and
/// Lap X_N is accumulated; with `store` the per-step quantities needed by the
/// backward sweep are kept.
template <class S, class Fam, int D = Fam::dim>
ForwardSweep<S, D> forward_sweep(const Fam& fam, double dt, std::type_identity_t<std::span<const Vec<S, D>>> incs, bool laplacian,
                                 bool store) {
  ForwardSweep<S, D> sw;
  const std::size_t n = incs.size();
  if (store) {
    sw.states.reserve(n + 1);
    sw.step_jacobian.reserve(n);
    sw.sigma.reserve(n);
  }
  Vec<S, D> x;
  for (int i = 0; i < D; ++i) x[i] = S(fam.x0()[i]);
  auto gram = zero_mat<S, D>();
  auto lap = zero_vec<S, D>();
  for (std::size_t m = 0; m < n; ++m) {
    const auto& dw = incs[m];
    if (store) sw.states.push_back(x);
    Vec<S, D> b;
    Mat<S, D> s, a;
    if (laplacian) {
      const auto bj = fam.template drift_jet<S>(x);
      const auto sj = fam.template diffusion_jet<S>(x);
      b = bj.value;
      s = sj.value;
      a = step_jacobian<S, D>(bj.jacobian, sj.jacobian, dt, dw);
      Vec<S, D> next_lap;
      for (int i = 0; i < D; ++i) {
        S v(0.0);
        for (int p = 0; p < D; ++p) v += a[i][p] * lap[p];
        for (int p = 0; p < D; ++p)
          for (int q = 0; q < D; ++q) {
            S h = bj.hessian[i][p][q] * dt;
            for (int l = 0; l < D; ++l) h += sj.hessian[i][l][p][q] * dw[l];
            v += h * gram[p][q];
          }
        next_lap[i] = v;
      }
      lap = next_lap;
    } else {
      const auto bj = fam.template drift_jet1<S>(x);
      const auto sj = fam.template diffusion_jet1<S>(x);
      b = bj.value;
      s = sj.value;
      a = step_jacobian<S, D>(bj.jacobian, sj.jacobian, dt, dw);
    }
    gram = matmul_bt<S, D>(matmul<S, D>(a, gram), a) + matmul_bt<S, D>(s, s);
    if (store) {
      sw.step_jacobian.push_back(a);
      sw.sigma.push_back(s);
    }
    Vec<S, D> next;
    for (int i = 0; i < D; ++i) {
      S noise(0.0);
      for (int l = 0; l < D; ++l) noise += s[i][l] * dw[l];
      next[i] = x[i] + b[i] * dt + noise;
    }
    x = next;
  }
  if (store) sw.states.push_back(x);
  sw.terminal = x;
  sw.gram = gram;
  sw.laplacian = lap;
  return sw;
}

/// G_k = dX_N / d(dW_k) = R_{k+1} sigma(X_k), with R_k = dX_N / dX_k from the
/// backward recursion R_k = R_{k+1} A_k. Optionally returns R_{k+1} too.
template <class S, int D>
std::vector<Mat<S, D>> backward_sweep(const ForwardSweep<S, D>& sw,
                                      std::type_identity_t<std::vector<Mat<S, D>>>* flows = nullptr) {
  const std::size_t n = sw.step_jacobian.size();
  std::vector<Mat<S, D>> g(n);
  if (flows) flows->resize(n);
  auto r = identity<S, D>();
  for (std::size_t k = n; k-- > 0;) {
    if (flows) (*flows)[k] = r;
    g[k] = matmul<S, D>(r, sw.sigma[k]);
    r = matmul<S, D>(r, sw.step_jacobian[k]);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Derivative chains and covariance

template <int D>
struct DerivativeChain {
  std::vector<Mat<double, D>> first;  // G_k[j][l] = dX_N^j / d(dW_k^l)
  std::vector<Mat<double, D>> flow;   // R_{k+1} = dX_N / dX_{k+1}
};

/// First Malliavin derivative of X_N by the flow factorization.
template <class Fam, int D = Fam::dim>
DerivativeChain<D> derivative_chain(const EulerChain<D>& chain, const Fam& fam) {
  const auto sw = forward_sweep<double>(fam, chain.dt, std::span<const Vec<double, D>>(chain.increments), false, true);
  DerivativeChain<D> dc;
  dc.first = backward_sweep(sw, &dc.flow);
  for (std::size_t k = 0; k < dc.first.size(); ++k)
    for (const auto& row : dc.first[k])
      for (double e : row)
        if (!std::isfinite(e)) throw NumericalError("non-finite derivative chain at k=" + std::to_string(k));
  return dc;
}

/// Same quantity by the direct forward recursion: M = sigma(X_k), then
/// M <- A_m M for m = k+1..N-1. O(N^2); used as a cross-check.
template <class Fam, int D = Fam::dim>
std::vector<Mat<double, D>> derivative_chain_direct(const EulerChain<D>& chain, const Fam& fam) {
  const std::size_t n = chain.increments.size();
  std::vector<Mat<double, D>> a(n), s(n);
  for (std::size_t m = 0; m < n; ++m) {
    const auto bj = fam.template drift_jet1<double>(chain.states[m]);
    const auto sj = fam.template diffusion_jet1<double>(chain.states[m]);
    a[m] = step_jacobian<double, D>(bj.jacobian, sj.jacobian, chain.dt, chain.increments[m]);
    s[m] = sj.value;
  }
  std::vector<Mat<double, D>> g(n);
  for (std::size_t k = 0; k < n; ++k) {
    auto m = s[k];
    for (std::size_t j = k + 1; j < n; ++j) {
      m = matmul<double, D>(a[j], m);
      for (const auto& row : m)
        for (double e : row)
          if (!std::isfinite(e))
            throw NumericalError("non-finite derivative propagation at (k, m) = (" + std::to_string(k) + ", " +
                                 std::to_string(j) + ")");
    }
    g[k] = m;
  }
  return g;
}

template <int D>
struct CovMatrix {
  Mat<double, D> q;
  double det = 0.0;
  Mat<double, D> inverse;
};

template <int D>
CovMatrix<D> make_cov(const Mat<double, D>& q) {
  CovMatrix<D> cov;
  cov.q = q;
  cov.det = determinant<double, D>(q);
  const auto ev = symmetric_eigenvalues<D>(q);
  const double scale = std::max(1.0, std::abs(ev.back()));
  if (ev.front() < -1e-12 * scale) throw std::logic_error("Malliavin covariance is not positive semidefinite");
  if (!(cov.det > kDegenerateDet))
    throw DegenerateCovariance("degenerate Malliavin covariance (det = " + std::to_string(cov.det) + ")");
  cov.inverse = inverse<double, D>(q);
  return cov;
}

/// Q = sum_k dt G_k G_k^*.
template <int D>
CovMatrix<D> malliavin_cov(const DerivativeChain<D>& deriv, double dt) {
  if (deriv.first.empty()) throw std::invalid_argument("malliavin_cov needs a non-empty chain");
  auto q = zero_mat<double, D>();
  for (const auto& g : deriv.first) q = q + scaled<double, D>(matmul_bt<double, D>(g, g), dt);
  return make_cov<D>(q);
}

/// Second derivatives T_{m,k}[i][l1][l2] = d^2 X_N^i / d(dW_m^l1) d(dW_k^l2),
/// stored for m <= k.
template <int D>
struct SecondDerivativeChain {
  std::size_t steps = 0;
  std::vector<Tensor3<double, D>> lower;  // packed (m, k) with m <= k

  static std::size_t index(std::size_t m, std::size_t k, std::size_t n) { return m * n - m * (m - 1) / 2 + (k - m); }

  Tensor3<double, D> at(std::size_t m, std::size_t k) const {
    if (m <= k) return lower[index(m, k, steps)];
    Tensor3<double, D> t = lower[index(k, m, steps)];
    for (auto& slice : t) slice = transpose<double, D>(slice);
    return t;
  }
};

template <class Fam, int D = Fam::dim>
SecondDerivativeChain<D> second_derivative_chain(const EulerChain<D>& chain, const Fam& fam) {
  const std::size_t n = chain.increments.size();
  const double dt = chain.dt;
  std::vector<VectorJet<double, D>> bj(n);
  std::vector<MatrixJet<double, D>> sj(n);
  std::vector<Mat<double, D>> a(n);
  for (std::size_t m = 0; m < n; ++m) {
    bj[m] = fam.template drift_jet<double>(chain.states[m]);
    sj[m] = fam.template diffusion_jet<double>(chain.states[m]);
    a[m] = step_jacobian<double, D>(bj[m].jacobian, sj[m].jacobian, dt, chain.increments[m]);
  }
  // flow[s] = dX_N / dX_s, s = 0..N
  std::vector<Mat<double, D>> flow(n + 1);
  flow[n] = identity<double, D>();
  for (std::size_t s = n; s-- > 0;) flow[s] = matmul<double, D>(flow[s + 1], a[s]);
  // y[m][s] = dX_s / d(dW_m) for s = 0..N (zero for s <= m)
  std::vector<std::vector<Mat<double, D>>> y(n, std::vector<Mat<double, D>>(n + 1, zero_mat<double, D>()));
  for (std::size_t m = 0; m < n; ++m) {
    y[m][m + 1] = sj[m].value;
    for (std::size_t s = m + 1; s < n; ++s) y[m][s + 1] = matmul<double, D>(a[s], y[m][s]);
  }
  // D^2 Phi_s [u, v] where Phi_s(x) = x + b(x) dt + sigma(x) dW_s
  auto curvature = [&](std::size_t s, const Vec<double, D>& u, const Vec<double, D>& v) {
    Vec<double, D> out{};
    for (int i = 0; i < D; ++i)
      for (int p = 0; p < D; ++p)
        for (int q = 0; q < D; ++q) {
          double h = bj[s].hessian[i][p][q] * dt;
          for (int l = 0; l < D; ++l) h += sj[s].hessian[i][l][p][q] * chain.increments[s][l];
          out[i] += h * u[p] * v[q];
        }
    return out;
  };
  SecondDerivativeChain<D> sd;
  sd.steps = n;
  sd.lower.resize(n * (n + 1) / 2);
  for (std::size_t m = 0; m < n; ++m)
    for (std::size_t k = m; k < n; ++k) {
      Tensor3<double, D> t{};
      for (int l1 = 0; l1 < D; ++l1)
        for (int l2 = 0; l2 < D; ++l2) {
          Vec<double, D> acc{};
          if (m < k) {
            // d/d(dW_m) of sigma(X_k)[:, l2], pushed to X_N by the flow.
            Vec<double, D> ds{};
            for (int i = 0; i < D; ++i)
              for (int p = 0; p < D; ++p) ds[i] += sj[k].jacobian[i][l2][p] * y[m][k][p][l1];
            acc = matvec<double, D>(flow[k + 1], ds);
          }
          for (std::size_t s = k + 1; s < n; ++s) {
            Vec<double, D> u, v;
            for (int p = 0; p < D; ++p) {
              u[p] = y[m][s][p][l1];
              v[p] = y[k][s][p][l2];
            }
            acc = acc + matvec<double, D>(flow[s + 1], curvature(s, u, v));
          }
          for (int i = 0; i < D; ++i) t[i][l1][l2] = acc[i];
        }
      sd.lower[SecondDerivativeChain<D>::index(m, k, n)] = t;
    }
  return sd;
}

// ---------------------------------------------------------------------------
// Divergence

/// delta(u) = sum_k <u_k, dW_k> - dt sum_k tr(d u_k / d(dW_k)); the caller
/// supplies the diagonal traces tr_k.
template <int D, class Trace>
double skorokhod(std::span<const Vec<double, D>> u, Trace&& diagonal_trace,
                 std::span<const Vec<double, D>> increments, double dt) {
  if (u.size() != increments.size()) throw std::invalid_argument("skorokhod: integrand length mismatch");
  double ito = 0.0, correction = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    ito += dot(u[k], increments[k]);
    correction += diagonal_trace(k);
  }
  return ito - dt * correction;
}

// ---------------------------------------------------------------------------
// Integration-by-parts weights

/// The functional G = 1.
struct UnitFunctional {
  static constexpr bool constant = true;
  template <class S, std::size_t D>
  S operator()(std::span<const std::array<S, D>>) const {
    return S(1.0);
  }
};

template <class S, int D>
struct WeightParts {
  Vec<S, D> terminal;
  S value;
};

/// H_i(G) evaluated at the increments `incs` (any scalar type, so the result
/// can itself be differentiated by a caller running on dual numbers).
template <class S, class Fam, class Functional, int D = Fam::dim>
WeightParts<S, D> first_order_weight(const Fam& fam, double dt, std::type_identity_t<std::span<const Vec<S, D>>> incs, int coord,
                                     const Functional& g) {
  if (coord < 0 || coord >= D) throw std::invalid_argument("weight coordinate out of range");
  const auto sw = forward_sweep<S>(fam, dt, incs, true, true);
  const auto gk = backward_sweep(sw);
  const auto q = scaled<S, D>(sw.gram, S(dt));
  const S det = determinant<S, D>(q);
  if (!(primal(det) > kDegenerateDet))
    throw DegenerateCovariance("degenerate Malliavin covariance (det = " + std::to_string(primal(det)) + ")");
  const auto p = inverse<S, D>(q);

  // delta(D X^j)
  Vec<S, D> div;
  for (int j = 0; j < D; ++j) {
    S ito(0.0);
    for (std::size_t k = 0; k < incs.size(); ++k)
      for (int l = 0; l < D; ++l) ito += gk[k][j][l] * incs[k][l];
    div[j] = ito - sw.laplacian[j] * dt;
  }

  // Directional derivatives along (dt D_k X^j)_k, all j at once.
  using T = Dual<S, D>;
  std::vector<Vec<T, D>> lifted(incs.size());
  for (std::size_t k = 0; k < incs.size(); ++k)
    for (int l = 0; l < D; ++l) {
      lifted[k][l] = T(incs[k][l]);
      for (int j = 0; j < D; ++j) lifted[k][l].d[j] = gk[k][j][l] * dt;
    }
  const std::span<const Vec<T, D>> lifted_span(lifted);
  const auto tangent = forward_sweep<T>(fam, dt, lifted_span, false, false);

  S g_value(1.0);
  Vec<S, D> g_dir = zero_vec<S, D>();
  if constexpr (!Functional::constant) {
    const T gl = g(lifted_span);
    g_value = gl.v;
    for (int j = 0; j < D; ++j) g_dir[j] = gl.d[j];
  }

  S h(0.0);
  for (int j = 0; j < D; ++j) {
    Mat<S, D> qdot;
    for (int a = 0; a < D; ++a)
      for (int b = 0; b < D; ++b) qdot[a][b] = tangent.gram[a][b].d[j] * dt;
    const auto pqp = matmul<S, D>(matmul<S, D>(p, qdot), p);
    h += g_value * p[coord][j] * div[j] - p[coord][j] * g_dir[j] + g_value * pqp[coord][j];
  }
  return {sw.terminal, h};
}

/// G -> H_i(G) as a functional, so weights can be nested.
template <class Fam, class Inner>
struct WeightFunctional {
  static constexpr bool constant = false;
  const Fam* fam;
  double dt;
  int coord;
  Inner inner;

  template <class S, std::size_t D>
  S operator()(std::span<const std::array<S, D>> incs) const {
    return first_order_weight<S>(*fam, dt, incs, coord, inner).value;
  }
};

template <int D>
struct WeightValue {
  double value = 0.0;
  Vec<double, D> terminal{};
  // <DH, DX^j>, populated on request; this is what a further IBP round
  // consumes from its functional G.
  bool has_directional = false;
  Vec<double, D> along_dx{};
};

using Multiindex = std::vector<int>;  // 0-based coordinates

/// H_alpha(G) for |alpha| in {1, 2}, with H_(a1, a2) = H_a2(H_a1(G)).
template <class Fam, class Functional = UnitFunctional, int D = Fam::dim>
WeightParts<double, D> ibp_weight_on(const Fam& fam, double dt, std::type_identity_t<std::span<const Vec<double, D>>> incs,
                                     const Multiindex& alpha, const Functional& g = {}) {
  if (alpha.empty() || alpha.size() > 2)
    throw UnsupportedOrder("IBP weights are implemented for 1 <= |alpha| <= 2, got |alpha| = " +
                           std::to_string(alpha.size()));
  for (int a : alpha)
    if (a < 0 || a >= D) throw std::invalid_argument("multiindex coordinate out of range");
  if (alpha.size() == 1) return first_order_weight<double>(fam, dt, incs, alpha[0], g);
  const WeightFunctional<Fam, Functional> inner{&fam, dt, alpha[0], g};
  return first_order_weight<double>(fam, dt, incs, alpha[1], inner);
}

template <class Fam, class Functional = UnitFunctional, int D = Fam::dim>
WeightValue<D> ibp_weight_iterated(const Fam& fam, const EulerChain<D>& chain, const Multiindex& alpha,
                                   const Functional& g = {}, bool with_directional = false) {
  const std::span<const Vec<double, D>> incs(chain.increments);
  const auto parts = ibp_weight_on(fam, chain.dt, incs, alpha, g);
  WeightValue<D> w;
  w.value = parts.value;
  w.terminal = parts.terminal;
  if (with_directional) {
    if (alpha.size() != 1) throw UnsupportedOrder("directional derivatives are provided for |alpha| = 1 only");
    const auto sw = forward_sweep<double>(fam, chain.dt, incs, false, true);
    const auto gk = backward_sweep(sw);
    using T = Dual<double, D>;
    std::vector<Vec<T, D>> lifted(incs.size());
    for (std::size_t k = 0; k < incs.size(); ++k)
      for (int l = 0; l < D; ++l) {
        lifted[k][l] = T(incs[k][l]);
        for (int j = 0; j < D; ++j) lifted[k][l].d[j] = gk[k][j][l] * chain.dt;
      }
    const auto hl = first_order_weight<T>(fam, chain.dt, std::span<const Vec<T, D>>(lifted), alpha[0], g).value;
    for (int j = 0; j < D; ++j) w.along_dx[j] = hl.d[j];
    w.has_directional = true;
  }
  return w;
}

template <class Fam, class Functional = UnitFunctional, int D = Fam::dim>
WeightValue<D> ibp_weight_first(const Fam& fam, const EulerChain<D>& chain, int coord, const Functional& g = {},
                                bool with_directional = false) {
  return ibp_weight_iterated(fam, chain, Multiindex{coord}, g, with_directional);
}

/// H_i(1) from the explicit integrand u_k = G_k^T P e_i and its diagonal
/// derivative, built from the first and second derivative chains. O(N^3);
/// a cross-check of the O(N) product-rule path.
template <class Fam, int D = Fam::dim>
double ibp_weight_direct(const Fam& fam, const EulerChain<D>& chain, int coord) {
  const auto dc = derivative_chain(chain, fam);
  const auto sd = second_derivative_chain(chain, fam);
  const auto cov = malliavin_cov(dc, chain.dt);
  const auto& p = cov.inverse;
  const std::size_t n = dc.first.size();
  const double dt = chain.dt;
  std::vector<Vec<double, D>> u(n);
  for (std::size_t k = 0; k < n; ++k)
    for (int l = 0; l < D; ++l) {
      u[k][l] = 0.0;
      for (int j = 0; j < D; ++j) u[k][l] += dc.first[k][j][l] * p[coord][j];
    }
  auto trace = [&](std::size_t k) {
    double tr = 0.0;
    for (int l = 0; l < D; ++l) {
      // dQ / d(dW_k^l)
      auto dq = zero_mat<double, D>();
      for (std::size_t m = 0; m < n; ++m) {
        const auto t = sd.at(m, k);
        for (int a = 0; a < D; ++a)
          for (int b = 0; b < D; ++b)
            for (int lp = 0; lp < D; ++lp)
              dq[a][b] += dt * (t[a][lp][l] * dc.first[m][b][lp] + dc.first[m][a][lp] * t[b][lp][l]);
      }
      const auto dp = scaled<double, D>(matmul<double, D>(matmul<double, D>(p, dq), p), -1.0);
      const auto tkk = sd.at(k, k);
      for (int j = 0; j < D; ++j) tr += tkk[j][l][l] * p[coord][j] + dc.first[k][j][l] * dp[coord][j];
    }
    return tr;
  };
  return skorokhod<D>(std::span<const Vec<double, D>>(u), trace, std::span<const Vec<double, D>>(chain.increments),
                      dt);
}

}  // namespace malsde
