#pragma once

// Exact first and second derivatives of the model coefficients by
// forward-mode differentiation. A coefficient is any callable templated on the
// scalar type; one nested-dual evaluation returns value, Jacobian and Hessian.

#include "malsde/dual.hpp"
#include "malsde/linalg.hpp"

namespace malsde {

template <class S, int D>
struct VectorJet {
  Vec<S, D> value;
  Mat<S, D> jacobian;   // [i][p] = d f_i / d x_p
  Tensor3<S, D> hessian;  // [i][p][q]
};

template <class S, int D>
struct MatrixJet {
  Mat<S, D> value;        // [i][l]
  Tensor3<S, D> jacobian;   // [i][l][p]
  Tensor4<S, D> hessian;    // [i][l][p][q]
};

template <class S, int D>
struct VectorJet1 {
  Vec<S, D> value;
  Mat<S, D> jacobian;
};

template <class S, int D>
struct MatrixJet1 {
  Mat<S, D> value;
  Tensor3<S, D> jacobian;
};

namespace detail {

template <class S, int D>
Vec<Dual<S, D>, D> seed_first(const Vec<S, D>& x) {
  Vec<Dual<S, D>, D> out;
  for (int p = 0; p < D; ++p) out[p] = Dual<S, D>::variable(x[p], p);
  return out;
}

template <class S, int D>
Vec<Dual<Dual<S, D>, D>, D> seed_second(const Vec<S, D>& x) {
  using Inner = Dual<S, D>;
  Vec<Dual<Inner, D>, D> out;
  for (int p = 0; p < D; ++p) {
    out[p] = Dual<Inner, D>(Inner::variable(x[p], p));
    out[p].d[p] = Inner(1.0);
  }
  return out;
}

}  // namespace detail

template <int D, class S, class F>
VectorJet1<S, D> vector_jet1(const F& f, const Vec<S, D>& x) {
  const auto y = f(detail::seed_first<S, D>(x));
  VectorJet1<S, D> jet;
  for (int i = 0; i < D; ++i) {
    jet.value[i] = y[i].v;
    for (int p = 0; p < D; ++p) jet.jacobian[i][p] = y[i].d[p];
  }
  return jet;
}

template <int D, class S, class F>
VectorJet<S, D> vector_jet(const F& f, const Vec<S, D>& x) {
  const auto y = f(detail::seed_second<S, D>(x));
  VectorJet<S, D> jet;
  for (int i = 0; i < D; ++i) {
    jet.value[i] = y[i].v.v;
    for (int p = 0; p < D; ++p) {
      jet.jacobian[i][p] = y[i].v.d[p];
      for (int q = 0; q < D; ++q) jet.hessian[i][p][q] = y[i].d[q].d[p];
    }
  }
  return jet;
}

template <int D, class S, class F>
MatrixJet1<S, D> matrix_jet1(const F& f, const Vec<S, D>& x) {
  const auto y = f(detail::seed_first<S, D>(x));
  MatrixJet1<S, D> jet;
  for (int i = 0; i < D; ++i)
    for (int l = 0; l < D; ++l) {
      jet.value[i][l] = y[i][l].v;
      for (int p = 0; p < D; ++p) jet.jacobian[i][l][p] = y[i][l].d[p];
    }
  return jet;
}

template <int D, class S, class F>
MatrixJet<S, D> matrix_jet(const F& f, const Vec<S, D>& x) {
  const auto y = f(detail::seed_second<S, D>(x));
  MatrixJet<S, D> jet;
  for (int i = 0; i < D; ++i)
    for (int l = 0; l < D; ++l) {
      jet.value[i][l] = y[i][l].v.v;
      for (int p = 0; p < D; ++p) {
        jet.jacobian[i][l][p] = y[i][l].v.d[p];
        for (int q = 0; q < D; ++q) jet.hessian[i][l][p][q] = y[i][l].d[q].d[p];
      }
    }
  return jet;
}

}  // namespace malsde
