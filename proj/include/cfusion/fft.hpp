#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "cfusion/common.hpp"

namespace cfusion::fft {

using cplx = std::complex<double>;

constexpr bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

constexpr std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// In-place iterative radix-2 transform. Forward uses exp(-i...), inverse is
// unnormalized.
inline void radix2(std::vector<cplx>& a, bool inverse) {
  const std::size_t n = a.size();
  if (!is_pow2(n)) throw InvalidInput("radix-2 FFT needs a power-of-two length");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        // Twiddles from the angle directly rather than by repeated
        // multiplication, which drifts for long transforms.
        const cplx w = std::polar(1.0, ang * static_cast<double>(k));
        const cplx u = a[i + k];
        const cplx v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
}

// Arbitrary-length DFT through Bluestein's chirp-z reduction to radix-2.
inline std::vector<cplx> bluestein(const std::vector<cplx>& x, bool inverse) {
  const std::size_t n = x.size();
  const std::size_t m = next_pow2(2 * n - 1);
  const double sign = inverse ? 1.0 : -1.0;
  std::vector<cplx> chirp(n);
  for (std::size_t k = 0; k < n; ++k) {
    // k^2 mod 2n keeps the angle argument small for large k.
    const auto k2 = static_cast<double>((k * k) % (2 * n));
    chirp[k] = std::polar(1.0, sign * std::numbers::pi * k2 / static_cast<double>(n));
  }
  std::vector<cplx> a(m), b(m);
  for (std::size_t k = 0; k < n; ++k) a[k] = x[k] * chirp[k];
  b[0] = std::conj(chirp[0]);
  for (std::size_t k = 1; k < n; ++k) b[k] = b[m - k] = std::conj(chirp[k]);
  radix2(a, false);
  radix2(b, false);
  for (std::size_t i = 0; i < m; ++i) a[i] *= b[i];
  radix2(a, true);
  std::vector<cplx> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = a[k] / static_cast<double>(m) * chirp[k];
  return out;
}

// Forward DFT of any length.
inline std::vector<cplx> transform(std::vector<cplx> x) {
  if (x.empty()) return x;
  if (is_pow2(x.size())) {
    radix2(x, false);
    return x;
  }
  return bluestein(x, false);
}

// Inverse DFT of any length, normalized by 1/n.
inline std::vector<cplx> inverse(std::vector<cplx> x) {
  if (x.empty()) return x;
  const auto n = static_cast<double>(x.size());
  if (is_pow2(x.size())) {
    radix2(x, true);
  } else {
    x = bluestein(x, true);
  }
  for (auto& v : x) v /= n;
  return x;
}

inline std::vector<cplx> real_transform(const std::vector<double>& x, std::size_t n) {
  std::vector<cplx> buf(n);
  for (std::size_t i = 0; i < std::min(n, x.size()); ++i) buf[i] = x[i];
  return transform(std::move(buf));
}

}  // namespace cfusion::fft
