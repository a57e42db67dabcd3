#pragma once

// SDE problems dX = b(X) dt + sigma(X) dW, the built-in model zoo, the radial
// clamp that defines the truncated drifts b_n, and sampling checks of the
// structural conditions (one-sided Lipschitz drift, uniform ellipticity) and
// of the generator domination L|x - x0|^p <= alpha_p |x - x0|^p + gamma_p.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>

#include "malsde/jets.hpp"
#include "malsde/linalg.hpp"

namespace malsde {

struct ModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Declared structural constants of a model. They are verified by sampling,
/// never inferred.
struct EllipticityConstants {
  double lambda_min = 1.0;       // lambda:  lambda |u|^2 <= <sigma sigma^* u, u>
  double lambda_max = 1.0;       // lambda~: <sigma sigma^* u, u> <= lambda~ |u|^2
  double c2 = 1.0;               // |sigma^* u|^2 <= C2 |u|^2
  double sigma_lipschitz = 0.0;  // k1
  double semi_monotone = 0.0;    // K: <b(x) - b(y), x - y> <= K |x - y|^2

  void validate() const {
    if (!(lambda_min >= 0.0) || !(lambda_max >= lambda_min))
      throw ModelError("ellipticity constants must satisfy 0 <= lambda <= lambda~");
    if (!(c2 >= lambda_max)) throw ModelError("C2 must dominate lambda~");
    if (!(sigma_lipschitz >= 0.0)) throw ModelError("sigma Lipschitz constant must be >= 0");
  }
};

template <class M>
concept SdeModel = requires(const M& m, const Vec<double, M::dim>& x) {
  { M::dim } -> std::convertible_to<int>;
  { m.x0 } -> std::convertible_to<Vec<double, M::dim>>;
  { m.horizon } -> std::convertible_to<double>;
  { m.template drift<double>(x) } -> std::same_as<Vec<double, M::dim>>;
  { m.template diffusion<double>(x) } -> std::same_as<Mat<double, M::dim>>;
  { m.constants() } -> std::same_as<EllipticityConstants>;
  { m.id() } -> std::convertible_to<std::string>;
};

// ---------------------------------------------------------------------------
// Model zoo

/// b = 0, sigma = diag(sigma_1, ..., sigma_d) constant. sigma = 0 is allowed
/// (a point mass) but fails the ellipticity check.
template <int D>
struct BrownianModel {
  static constexpr int dim = D;
  static constexpr bool linear = true;
  Vec<double, D> sigma{};
  Vec<double, D> x0{};
  double horizon = 1.0;

  template <class S>
  Vec<S, D> drift(const Vec<S, D>&) const {
    return zero_vec<S, D>();
  }
  template <class S>
  Mat<S, D> diffusion(const Vec<S, D>&) const {
    auto m = zero_mat<S, D>();
    for (int i = 0; i < D; ++i) m[i][i] = S(sigma[i]);
    return m;
  }
  EllipticityConstants constants() const {
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (double s : sigma) {
      lo = std::min(lo, s * s);
      hi = std::max(hi, s * s);
    }
    return {lo, hi, hi, 0.0, 0.0};
  }
  std::string id() const { return "bm"; }
};

/// b(x) = -kappa (x - mu), sigma = diag(sigma_i) constant.
template <int D>
struct OrnsteinUhlenbeck {
  static constexpr int dim = D;
  static constexpr bool linear = true;
  double kappa = 1.0;
  Vec<double, D> mu{};
  Vec<double, D> sigma{};
  Vec<double, D> x0{};
  double horizon = 1.0;

  template <class S>
  Vec<S, D> drift(const Vec<S, D>& x) const {
    Vec<S, D> r;
    for (int i = 0; i < D; ++i) r[i] = (x[i] - mu[i]) * (-kappa);
    return r;
  }
  template <class S>
  Mat<S, D> diffusion(const Vec<S, D>&) const {
    auto m = zero_mat<S, D>();
    for (int i = 0; i < D; ++i) m[i][i] = S(sigma[i]);
    return m;
  }
  EllipticityConstants constants() const {
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (double s : sigma) {
      lo = std::min(lo, s * s);
      hi = std::max(hi, s * s);
    }
    return {lo, hi, hi, 0.0, -kappa};
  }
  std::string id() const { return "ou"; }
};

/// b(x) = x - x^3, sigma constant.
struct DoubleWell1d {
  static constexpr int dim = 1;
  static constexpr bool linear = false;
  double sigma = 1.0;
  Vec<double, 1> x0{};
  double horizon = 1.0;

  template <class S>
  Vec<S, 1> drift(const Vec<S, 1>& x) const {
    return {x[0] - x[0] * x[0] * x[0]};
  }
  template <class S>
  Mat<S, 1> diffusion(const Vec<S, 1>&) const {
    return {{{S(sigma)}}};
  }
  EllipticityConstants constants() const {
    const double s2 = sigma * sigma;
    return {s2, s2, s2, 0.0, 1.0};
  }
  std::string id() const { return "double-well-1d"; }
};

/// b_i(x) = x_i - x_i^3, sigma(x) = I + eps diag(sin x_1, cos x_2).
struct DoubleWell2d {
  static constexpr int dim = 2;
  static constexpr bool linear = false;
  double eps = 0.1;
  Vec<double, 2> x0{};
  double horizon = 1.0;

  template <class S>
  Vec<S, 2> drift(const Vec<S, 2>& x) const {
    return {x[0] - x[0] * x[0] * x[0], x[1] - x[1] * x[1] * x[1]};
  }
  template <class S>
  Mat<S, 2> diffusion(const Vec<S, 2>& x) const {
    using std::cos;
    using std::sin;
    Mat<S, 2> m = zero_mat<S, 2>();
    m[0][0] = 1.0 + eps * sin(x[0]);
    m[1][1] = 1.0 + eps * cos(x[1]);
    return m;
  }
  EllipticityConstants constants() const {
    const double lo = (1.0 - eps) * (1.0 - eps), hi = (1.0 + eps) * (1.0 + eps);
    return {lo, hi, hi, eps, 1.0};
  }
  std::string id() const { return "double-well-2d"; }
};

using AnyModel = std::variant<BrownianModel<1>, BrownianModel<2>, OrnsteinUhlenbeck<1>,
                              OrnsteinUhlenbeck<2>, DoubleWell1d, DoubleWell2d>;

// ---------------------------------------------------------------------------
// Truncation

/// Radial C^2 clamp: identity on the closed ball of radius n, and
/// (n + tanh(|x| - n)) x / |x| outside. Value, slope and curvature of the
/// radial profile agree at |x| = n; the range is the open ball of radius n+1.
/// level = +inf disables the clamp.
template <class S, int D>
Vec<S, D> radial_clamp(const Vec<S, D>& x, double level) {
  using std::sqrt;
  using std::tanh;
  if (std::isinf(level)) return x;
  const S r2 = norm2(x);
  if (primal(r2) <= level * level) return x;
  const S r = sqrt(r2);
  const S scale = (level + tanh(r - level)) / r;
  Vec<S, D> out;
  for (int i = 0; i < D; ++i) out[i] = x[i] * scale;
  return out;
}

/// The approximating SDE dX^n = b_n(X^n) dt + sigma(X^n) dW with
/// b_n = b o clamp_n. b_n equals b exactly on the ball of radius n.
template <SdeModel M>
struct TruncationFamily {
  static constexpr int dim = M::dim;
  M base;
  double level = std::numeric_limits<double>::infinity();

  TruncationFamily() = default;
  TruncationFamily(M model, double n) : base(std::move(model)), level(n) {
    if (!(level > 0.0)) throw ModelError("truncation level must be positive");
  }

  const Vec<double, dim>& x0() const { return base.x0; }
  double horizon() const { return base.horizon; }

  template <class S>
  Vec<S, dim> drift(const Vec<S, dim>& x) const {
    return base.template drift<S>(radial_clamp<S, dim>(x, level));
  }
  template <class S>
  Mat<S, dim> diffusion(const Vec<S, dim>& x) const {
    return base.template diffusion<S>(x);
  }

  template <class S>
  VectorJet<S, dim> drift_jet(const Vec<S, dim>& x) const {
    return vector_jet<dim>([this](const auto& y) { return drift(y); }, x);
  }
  template <class S>
  VectorJet1<S, dim> drift_jet1(const Vec<S, dim>& x) const {
    return vector_jet1<dim>([this](const auto& y) { return drift(y); }, x);
  }
  template <class S>
  MatrixJet<S, dim> diffusion_jet(const Vec<S, dim>& x) const {
    return matrix_jet<dim>([this](const auto& y) { return diffusion(y); }, x);
  }
  template <class S>
  MatrixJet1<S, dim> diffusion_jet1(const Vec<S, dim>& x) const {
    return matrix_jet1<dim>([this](const auto& y) { return diffusion(y); }, x);
  }
};

template <SdeModel M>
TruncationFamily<M> untruncated(const M& model) {
  TruncationFamily<M> fam;
  fam.base = model;
  return fam;
}

// ---------------------------------------------------------------------------
// Evaluation

template <int D>
void require_finite(const Vec<double, D>& v, const char* what) {
  for (double e : v)
    if (!std::isfinite(e)) throw ModelError(std::string(what) + " is not finite");
}

template <SdeModel M>
Vec<double, M::dim> eval_drift(const M& model, const Vec<double, M::dim>& x) {
  require_finite<M::dim>(x, "drift argument");
  auto b = model.template drift<double>(x);
  require_finite<M::dim>(b, "drift value");
  return b;
}

template <SdeModel M>
Vec<double, M::dim> eval_truncated_drift(const TruncationFamily<M>& fam,
                                         const Vec<double, M::dim>& x) {
  require_finite<M::dim>(x, "drift argument");
  auto b = fam.template drift<double>(x);
  require_finite<M::dim>(b, "truncated drift value");
  return b;
}

// ---------------------------------------------------------------------------
// Structural checks

struct SemiMonotoneReport {
  double k_hat = -std::numeric_limits<double>::infinity();
  double declared = 0.0;
  std::size_t pairs_used = 0;
  bool pass = false;
};

/// K-hat = max over pairs of <b(x) - b(y), x - y> / |x - y|^2. Coincident
/// pairs are skipped. Works for any type exposing drift<double>.
template <class Drifted, int D>
SemiMonotoneReport check_semi_monotone(const Drifted& model,
                                       std::span<const std::pair<Vec<double, D>, Vec<double, D>>> pairs,
                                       double declared, double tolerance = 1e-9) {
  if (pairs.size() < 100) throw std::invalid_argument("check_semi_monotone needs >= 100 pairs");
  SemiMonotoneReport rep;
  rep.declared = declared;
  for (const auto& [x, y] : pairs) {
    const auto dx = x - y;
    const double n2 = norm2(dx);
    if (n2 == 0.0) continue;
    const auto db = model.template drift<double>(x) - model.template drift<double>(y);
    rep.k_hat = std::max(rep.k_hat, dot(db, dx) / n2);
    ++rep.pairs_used;
  }
  rep.pass = rep.pairs_used > 0 && rep.k_hat <= declared + tolerance;
  return rep;
}

struct EllipticityReport {
  double min_eig = std::numeric_limits<double>::infinity();
  double max_eig = -std::numeric_limits<double>::infinity();
  bool pass = false;
};

/// Extreme eigenvalues of sigma sigma^* over the sample, compared with the
/// declared [lambda, lambda~] at tolerance 1e-12.
template <SdeModel M>
EllipticityReport check_ellipticity(const M& model, std::span<const Vec<double, M::dim>> xs) {
  constexpr int D = M::dim;
  if (xs.size() < 100) throw std::invalid_argument("check_ellipticity needs >= 100 points");
  EllipticityReport rep;
  for (const auto& x : xs) {
    const auto s = model.template diffusion<double>(x);
    const auto a = matmul_bt<double, D>(s, s);
    for (int i = 0; i < D; ++i)
      for (int j = 0; j < i; ++j)
        if (std::abs(a[i][j] - a[j][i]) > 1e-12 * (1.0 + std::abs(a[i][j])))
          throw std::logic_error("sigma sigma^* is not symmetric");
    const auto ev = symmetric_eigenvalues<D>(a);
    rep.min_eig = std::min(rep.min_eig, ev.front());
    rep.max_eig = std::max(rep.max_eig, ev.back());
  }
  const auto c = model.constants();
  constexpr double tol = 1e-12;
  rep.pass = c.lambda_min > 0.0 && rep.min_eig >= c.lambda_min - tol &&
             rep.max_eig <= c.lambda_max + tol;
  return rep;
}

/// Exact L f(x) for f(x) = |x - x0|^p with p even, where
/// L = 1/2 sum (sigma sigma^*)_ij d_i d_j + sum b_i d_i. Works for a model or a
/// truncation family (pass the family to apply L_n).
template <class Coeffs, int D>
double generator_apply(const Coeffs& coeffs, const Vec<double, D>& x0, int p,
                       const Vec<double, D>& x) {
  if (p < 2 || p % 2 != 0) throw std::invalid_argument("generator_apply needs an even p >= 2");
  const auto z = x - x0;
  const double r2 = norm2(z);
  const int half = p / 2;
  // r^(p-2) and r^(p-4) as integer powers of r^2 so r = 0 is exact.
  const double rp2 = std::pow(r2, half - 1);
  const double rp4 = half >= 2 ? std::pow(r2, half - 2) : 0.0;
  const auto b = coeffs.template drift<double>(x);
  const auto s = coeffs.template diffusion<double>(x);
  const auto a = matmul_bt<double, D>(s, s);
  double first = 0.0, second = 0.0;
  for (int i = 0; i < D; ++i) {
    first += b[i] * p * rp2 * z[i];
    for (int j = 0; j < D; ++j) {
      double dij = p * (p - 2) * rp4 * z[i] * z[j];
      if (i == j) dij += p * rp2;
      second += a[i][j] * dij;
    }
  }
  return 0.5 * second + first;
}

}  // namespace malsde
