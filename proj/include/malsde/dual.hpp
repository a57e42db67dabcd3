#pragma once

// Forward-mode dual numbers with K tangent directions. Nesting
// (Dual<Dual<double, K>, K>) gives exact higher-order directional
// derivatives; the Malliavin weights use this to differentiate a weight along
// the directions D X^j without finite differences.

#include <array>
#include <cmath>
#include <type_traits>

namespace malsde {

template <class T, int K>
struct Dual {
  T v{};
  std::array<T, K> d{};

  constexpr Dual() = default;
  constexpr Dual(double x) : v(x) {  // NOLINT: implicit on purpose
    for (auto& e : d) e = T(0.0);
  }
  constexpr Dual(const T& x, const std::array<T, K>& tangent) : v(x), d(tangent) {}

  template <class U = T, class = std::enable_if_t<!std::is_same_v<U, double>>>
  constexpr Dual(const T& x) : v(x) {  // NOLINT
    for (auto& e : d) e = T(0.0);
  }

  static Dual variable(const T& x, int direction) {
    Dual r(x);
    r.d[direction] = T(1.0);
    return r;
  }

  Dual& operator+=(const Dual& o) {
    v += o.v;
    for (int k = 0; k < K; ++k) d[k] += o.d[k];
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    v -= o.v;
    for (int k = 0; k < K; ++k) d[k] -= o.d[k];
    return *this;
  }
  Dual& operator*=(const Dual& o) {
    for (int k = 0; k < K; ++k) d[k] = d[k] * o.v + v * o.d[k];
    v *= o.v;
    return *this;
  }
  Dual& operator/=(const Dual& o) { return *this = *this / o; }
};

template <class T>
struct is_dual : std::false_type {};
template <class T, int K>
struct is_dual<Dual<T, K>> : std::true_type {};

inline double primal(double x) { return x; }
template <class T, int K>
double primal(const Dual<T, K>& x) {
  return primal(x.v);
}

template <class T, int K>
Dual<T, K> operator-(const Dual<T, K>& a) {
  Dual<T, K> r;
  r.v = -a.v;
  for (int k = 0; k < K; ++k) r.d[k] = -a.d[k];
  return r;
}

template <class T, int K>
Dual<T, K> operator+(Dual<T, K> a, const Dual<T, K>& b) {
  return a += b;
}
template <class T, int K>
Dual<T, K> operator-(Dual<T, K> a, const Dual<T, K>& b) {
  return a -= b;
}
template <class T, int K>
Dual<T, K> operator*(Dual<T, K> a, const Dual<T, K>& b) {
  return a *= b;
}
template <class T, int K>
Dual<T, K> operator/(const Dual<T, K>& a, const Dual<T, K>& b) {
  Dual<T, K> r;
  r.v = a.v / b.v;
  for (int k = 0; k < K; ++k) r.d[k] = (a.d[k] - r.v * b.d[k]) / b.v;
  return r;
}

template <class T, int K>
Dual<T, K> operator+(Dual<T, K> a, double b) {
  a.v += b;
  return a;
}
template <class T, int K>
Dual<T, K> operator+(double b, Dual<T, K> a) {
  a.v += b;
  return a;
}
template <class T, int K>
Dual<T, K> operator-(Dual<T, K> a, double b) {
  a.v -= b;
  return a;
}
template <class T, int K>
Dual<T, K> operator-(double b, const Dual<T, K>& a) {
  return -a + b;
}
template <class T, int K>
Dual<T, K> operator*(Dual<T, K> a, double b) {
  a.v *= b;
  for (auto& e : a.d) e *= b;
  return a;
}
template <class T, int K>
Dual<T, K> operator*(double b, Dual<T, K> a) {
  return a * b;
}
template <class T, int K>
Dual<T, K> operator/(Dual<T, K> a, double b) {
  return a * (1.0 / b);
}
template <class T, int K>
Dual<T, K> operator/(double a, const Dual<T, K>& b) {
  return Dual<T, K>(a) / b;
}

template <class T, int K>
bool operator<(const Dual<T, K>& a, const Dual<T, K>& b) {
  return primal(a) < primal(b);
}
template <class T, int K>
bool operator>(const Dual<T, K>& a, const Dual<T, K>& b) {
  return primal(a) > primal(b);
}
template <class T, int K>
bool operator<=(const Dual<T, K>& a, const Dual<T, K>& b) {
  return primal(a) <= primal(b);
}

namespace detail {
// Chain rule: f(a) with f(a.v) = fv and f'(a.v) = dv.
template <class T, int K>
Dual<T, K> chain(const Dual<T, K>& a, const T& fv, const T& dv) {
  Dual<T, K> r;
  r.v = fv;
  for (int k = 0; k < K; ++k) r.d[k] = dv * a.d[k];
  return r;
}
}  // namespace detail

template <class T, int K>
Dual<T, K> sin(const Dual<T, K>& a) {
  using std::cos;
  using std::sin;
  return detail::chain(a, T(sin(a.v)), T(cos(a.v)));
}
template <class T, int K>
Dual<T, K> cos(const Dual<T, K>& a) {
  using std::cos;
  using std::sin;
  return detail::chain(a, T(cos(a.v)), T(-sin(a.v)));
}
template <class T, int K>
Dual<T, K> exp(const Dual<T, K>& a) {
  using std::exp;
  T e = exp(a.v);
  return detail::chain(a, e, e);
}
template <class T, int K>
Dual<T, K> log(const Dual<T, K>& a) {
  using std::log;
  return detail::chain(a, T(log(a.v)), T(1.0 / a.v));
}
template <class T, int K>
Dual<T, K> sqrt(const Dual<T, K>& a) {
  using std::sqrt;
  T s = sqrt(a.v);
  return detail::chain(a, s, T(0.5 / s));
}
template <class T, int K>
Dual<T, K> tanh(const Dual<T, K>& a) {
  using std::tanh;
  T t = tanh(a.v);
  return detail::chain(a, t, T(1.0 - t * t));
}

}  // namespace malsde
