#pragma once

// Tensor Gauss-Hermite quadrature over the Brownian increments of a short
// chain. For N <= 3 steps in d = 1 both sides of
//   E[d_alpha g(X_N) G] = E[g(X_N) H_alpha(G)]
// are computed to quadrature precision, which checks the weights without any
// Monte Carlo error.

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "malsde/malliavin.hpp"

namespace malsde {

struct GaussRule {
  std::vector<double> nodes;
  std::vector<double> weights;  // sum to 1
};

/// Nodes and weights for E[f(Z)], Z ~ N(0, 1) (probabilists' Hermite),
/// by Golub-Welsch on the Jacobi matrix with off-diagonal sqrt(k).
inline GaussRule gauss_hermite(int n) {
  if (n < 1) throw std::invalid_argument("gauss_hermite needs n >= 1");
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(static_cast<double>(k));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jacobi);
  GaussRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    rule.nodes[i] = es.eigenvalues()(i);
    const double v0 = es.eigenvectors()(0, i);
    rule.weights[i] = v0 * v0;
  }
  return rule;
}

/// Smooth scalar test function with its first two derivatives.
struct TestFunction {
  std::string name;
  std::function<double(double)> value, first, second;

  double derivative(int order, double x) const {
    switch (order) {
      case 0: return value(x);
      case 1: return first(x);
      case 2: return second(x);
      default: throw UnsupportedOrder("test functions carry derivatives up to order 2");
    }
  }
};

inline TestFunction cosine_test_function() {
  return {"cos", [](double x) { return std::cos(x); }, [](double x) { return -std::sin(x); },
          [](double x) { return -std::cos(x); }};
}

/// exp(-x^2): smooth, bounded, rapidly decaying.
inline TestFunction bump_test_function() {
  return {"bump", [](double x) { return std::exp(-x * x); }, [](double x) { return -2.0 * x * std::exp(-x * x); },
          [](double x) { return (4.0 * x * x - 2.0) * std::exp(-x * x); }};
}

struct OracleResult {
  double lhs = 0.0;  // E[d_alpha g(X_N)]
  double rhs = 0.0;  // E[g(X_N) H_alpha]
  double gap = 0.0;
};

/// Both sides of the IBP identity with G = 1 for a scalar chain with
/// N <= 3 steps, by tensor Gauss-Hermite quadrature with `nodes` points per
/// increment.
template <class Fam>
OracleResult quadrature_oracle(const Fam& fam, const TimeGrid& grid, const TestFunction& g, const Multiindex& alpha,
                               int nodes = 48) {
  static_assert(Fam::dim == 1, "the quadrature oracle integrates scalar chains");
  const int n = grid.steps();
  if (n > 3) throw std::invalid_argument("quadrature_oracle needs N <= 3");
  if (nodes < 40) throw std::invalid_argument("quadrature_oracle needs >= 40 nodes per dimension");
  const auto rule = gauss_hermite(nodes);
  const double sq = std::sqrt(grid.dt());
  std::vector<int> idx(n, 0);
  std::vector<Vec<double, 1>> incs(n);
  double lhs = 0.0, rhs = 0.0;
  for (;;) {
    double w = 1.0;
    for (int k = 0; k < n; ++k) {
      incs[k][0] = sq * rule.nodes[idx[k]];
      w *= rule.weights[idx[k]];
    }
    const auto parts = ibp_weight_on(fam, grid.dt(), std::span<const Vec<double, 1>>(incs), alpha);
    const double x = parts.terminal[0];
    lhs += w * g.derivative(static_cast<int>(alpha.size()), x);
    rhs += w * g.value(x) * parts.value;
    int k = 0;
    while (k < n && ++idx[k] == nodes) idx[k++] = 0;
    if (k == n) break;
  }
  return {lhs, rhs, std::abs(lhs - rhs)};
}

}  // namespace malsde
