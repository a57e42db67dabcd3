#pragma once

// Counter-based randomness. Every variate is a pure function of
// (seed, stream, index), so path-level parallelism cannot change results.
// Philox4x32-10 (Salmon et al., SC'11) supplies the bits; Gaussians come from
// the inverse normal CDF so a given stream maps to the same values on every
// platform.

#include <array>
#include <cmath>
#include <cstdint>

#include <boost/math/special_functions/erf.hpp>

namespace malsde {

using Philox4x32Counter = std::array<std::uint32_t, 4>;
using Philox4x32Key = std::array<std::uint32_t, 2>;

inline Philox4x32Counter philox4x32_10(Philox4x32Counter ctr, Philox4x32Key key) {
  constexpr std::uint32_t kM0 = 0xD2511F53u, kM1 = 0xCD9E8D57u;
  constexpr std::uint32_t kW0 = 0x9E3779B9u, kW1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = std::uint64_t{kM0} * ctr[0];
    const std::uint64_t p1 = std::uint64_t{kM1} * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kW0;
    key[1] += kW1;
  }
  return ctr;
}

/// Uniform in the open interval (0, 1) with 52 random bits; both endpoints
/// stay representable so the inverse CDF never sees 0 or 1.
inline double uniform_open(std::uint32_t hi_word, std::uint32_t lo_word) {
  const std::uint64_t bits = (std::uint64_t{hi_word >> 6} << 26) | (lo_word >> 6);
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-52;
}

inline double inverse_normal_cdf(double u) {
  return -1.4142135623730951 * boost::math::erfc_inv(2.0 * u);
}

/// A stream of standard normals addressed by index. One Philox block gives
/// two normals, so normal(2j) and normal(2j+1) share a block.
class NormalStream {
 public:
  NormalStream(std::uint64_t seed, std::uint64_t stream)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        stream_lo_(static_cast<std::uint32_t>(stream)),
        stream_hi_(static_cast<std::uint32_t>(stream >> 32)) {}

  std::array<double, 2> pair(std::uint64_t block) const {
    const auto r = philox4x32_10(
        {static_cast<std::uint32_t>(block), static_cast<std::uint32_t>(block >> 32), stream_lo_, stream_hi_},
        key_);
    return {inverse_normal_cdf(uniform_open(r[0], r[1])), inverse_normal_cdf(uniform_open(r[2], r[3]))};
  }

  double normal(std::uint64_t index) const { return pair(index / 2)[index % 2]; }

  double uniform(std::uint64_t index) const {
    const auto r = philox4x32_10(
        {static_cast<std::uint32_t>(index / 2), static_cast<std::uint32_t>(index >> 33), stream_lo_, stream_hi_},
        key_);
    return index % 2 == 0 ? uniform_open(r[0], r[1]) : uniform_open(r[2], r[3]);
  }

 private:
  Philox4x32Key key_;
  std::uint32_t stream_lo_, stream_hi_;
};

/// Stream ids reserved for non-path sampling (sample points for checks).
/// Path ids are small, so the top bit keeps these disjoint.
constexpr std::uint64_t kAuxStreamBase = std::uint64_t{1} << 63;

}  // namespace malsde
