#pragma once

// Fixed-size vector/matrix helpers for the low-dimensional state spaces used
// here (d = 1 or 2). Everything is templated on the scalar so the same code
// runs on doubles and on dual numbers.

#include <array>
#include <cmath>
#include <cstddef>

namespace malsde {

template <class S, int D>
using Vec = std::array<S, D>;

// Row-major: m[i][j] is row i, column j.
template <class S, int D>
using Mat = std::array<std::array<S, D>, D>;

// t[i][p][q]
template <class S, int D>
using Tensor3 = std::array<Mat<S, D>, D>;

// t[i][l][p][q]
template <class S, int D>
using Tensor4 = std::array<Tensor3<S, D>, D>;

template <class S, std::size_t D>
constexpr Vec<S, D> zero_vec() {
  Vec<S, D> v;
  for (auto& e : v) e = S(0.0);
  return v;
}

template <class S, std::size_t D>
constexpr Mat<S, D> zero_mat() {
  Mat<S, D> m;
  for (auto& row : m)
    for (auto& e : row) e = S(0.0);
  return m;
}

template <class S, std::size_t D>
constexpr Mat<S, D> identity() {
  auto m = zero_mat<S, D>();
  for (std::size_t i = 0; i < D; ++i) m[i][i] = S(1.0);
  return m;
}

template <class S, std::size_t D>
Vec<S, D> operator+(const Vec<S, D>& a, const Vec<S, D>& b) {
  Vec<S, D> r;
  for (std::size_t i = 0; i < D; ++i) r[i] = a[i] + b[i];
  return r;
}

template <class S, std::size_t D>
Vec<S, D> operator-(const Vec<S, D>& a, const Vec<S, D>& b) {
  Vec<S, D> r;
  for (std::size_t i = 0; i < D; ++i) r[i] = a[i] - b[i];
  return r;
}

template <class S, std::size_t D>
S dot(const Vec<S, D>& a, const Vec<S, D>& b) {
  S r(0.0);
  for (std::size_t i = 0; i < D; ++i) r += a[i] * b[i];
  return r;
}

template <class S, std::size_t D>
S norm2(const Vec<S, D>& a) {
  return dot(a, a);
}

template <class S, std::size_t D>
Vec<S, D> matvec(const Mat<S, D>& m, const Vec<S, D>& v) {
  Vec<S, D> r;
  for (std::size_t i = 0; i < D; ++i) {
    r[i] = S(0.0);
    for (std::size_t j = 0; j < D; ++j) r[i] += m[i][j] * v[j];
  }
  return r;
}

template <class S, std::size_t D>
Mat<S, D> matmul(const Mat<S, D>& a, const Mat<S, D>& b) {
  Mat<S, D> r;
  for (std::size_t i = 0; i < D; ++i)
    for (std::size_t j = 0; j < D; ++j) {
      r[i][j] = S(0.0);
      for (std::size_t k = 0; k < D; ++k) r[i][j] += a[i][k] * b[k][j];
    }
  return r;
}

// a * b^T
template <class S, std::size_t D>
Mat<S, D> matmul_bt(const Mat<S, D>& a, const Mat<S, D>& b) {
  Mat<S, D> r;
  for (std::size_t i = 0; i < D; ++i)
    for (std::size_t j = 0; j < D; ++j) {
      r[i][j] = S(0.0);
      for (std::size_t k = 0; k < D; ++k) r[i][j] += a[i][k] * b[j][k];
    }
  return r;
}

template <class S, std::size_t D>
Mat<S, D> transpose(const Mat<S, D>& a) {
  Mat<S, D> r;
  for (std::size_t i = 0; i < D; ++i)
    for (std::size_t j = 0; j < D; ++j) r[i][j] = a[j][i];
  return r;
}

template <class S, std::size_t D>
Mat<S, D> operator+(const Mat<S, D>& a, const Mat<S, D>& b) {
  Mat<S, D> r;
  for (std::size_t i = 0; i < D; ++i)
    for (std::size_t j = 0; j < D; ++j) r[i][j] = a[i][j] + b[i][j];
  return r;
}

template <class S, std::size_t D>
Mat<S, D> scaled(const Mat<S, D>& a, const S& s) {
  Mat<S, D> r;
  for (std::size_t i = 0; i < D; ++i)
    for (std::size_t j = 0; j < D; ++j) r[i][j] = a[i][j] * s;
  return r;
}

template <class S, std::size_t D>
S trace(const Mat<S, D>& a) {
  S r(0.0);
  for (std::size_t i = 0; i < D; ++i) r += a[i][i];
  return r;
}

template <class S, std::size_t D>
S frobenius2(const Mat<S, D>& a) {
  S r(0.0);
  for (std::size_t i = 0; i < D; ++i)
    for (std::size_t j = 0; j < D; ++j) r += a[i][j] * a[i][j];
  return r;
}

template <class S, std::size_t D>
S determinant(const Mat<S, D>& a) {
  static_assert(D == 1 || D == 2, "only d <= 2 is supported");
  if constexpr (D == 1) {
    return a[0][0];
  } else {
    return a[0][0] * a[1][1] - a[0][1] * a[1][0];
  }
}

// Caller checks the determinant first.
template <class S, std::size_t D>
Mat<S, D> inverse(const Mat<S, D>& a) {
  static_assert(D == 1 || D == 2, "only d <= 2 is supported");
  Mat<S, D> r;
  if constexpr (D == 1) {
    r[0][0] = S(1.0) / a[0][0];
  } else {
    S inv_det = S(1.0) / determinant(a);
    r[0][0] = a[1][1] * inv_det;
    r[0][1] = -(a[0][1] * inv_det);
    r[1][0] = -(a[1][0] * inv_det);
    r[1][1] = a[0][0] * inv_det;
  }
  return r;
}

// Eigenvalues of a symmetric matrix, ascending.
template <int D>
Vec<double, D> symmetric_eigenvalues(const Mat<double, D>& a) {
  static_assert(D == 1 || D == 2, "only d <= 2 is supported");
  if constexpr (D == 1) {
    return {a[0][0]};
  } else {
    const double m = 0.5 * (a[0][0] + a[1][1]);
    const double h = 0.5 * (a[0][0] - a[1][1]);
    const double r = std::hypot(h, 0.5 * (a[0][1] + a[1][0]));
    return {m - r, m + r};
  }
}

}  // namespace malsde
