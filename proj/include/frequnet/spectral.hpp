#pragma once

#include <bit>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "frequnet/error.hpp"
#include "frequnet/ops.hpp"
#include "frequnet/tape.hpp"
#include "frequnet/tensor.hpp"
#include "frequnet/wavelet.hpp"

namespace frequnet {

using cplx = std::complex<double>;

/// 2D spectrum per (b, c) slice, zero frequency at (floor(H/2), floor(W/2)).
struct ComplexSpectrum {
  Tensor re;
  Tensor im;

  const Shape& shape() const { return re.shape(); }
  cplx at(std::size_t b, std::size_t c, std::size_t u, std::size_t v) const {
    return {re.at(b, c, u, v), im.at(b, c, u, v)};
  }
};

/// Binary rectangular low-pass mask over centred frequency coordinates.
struct FreqMask {
  double tau = 0.0;
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<std::uint8_t> values;

  bool pass(std::size_t u, std::size_t v) const { return values[u * w + v] != 0; }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto m : values) n += m;
    return n;
  }
};

inline FreqMask build_mask(std::size_t h, std::size_t w, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) {
    throw ConfigError("tau must lie in (0, 1), got " + std::to_string(tau));
  }
  FreqMask m{tau, h, w, std::vector<std::uint8_t>(h * w, 0)};
  const double uc = static_cast<double>(h / 2), vc = static_cast<double>(w / 2);
  const double ru = tau * static_cast<double>(h), rv = tau * static_cast<double>(w);
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < w; ++v)
      m.values[u * w + v] = (std::abs(static_cast<double>(u) - uc) <= ru && std::abs(static_cast<double>(v) - vc) <= rv);
  return m;
}

namespace detail {

inline bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// In-place 1D DFT, sign = -1 forward, +1 inverse (unnormalised).
inline void dft_1d(std::vector<cplx>& a, int sign) {
  const std::size_t n = a.size();
  if (n <= 1) return;
  if (is_pow2(n)) {
    for (std::size_t i = 1, j = 0; i < n; ++i) {
      std::size_t bit = n >> 1;
      for (; j & bit; bit >>= 1) j ^= bit;
      j ^= bit;
      if (i < j) std::swap(a[i], a[j]);
    }
    // twiddles exp(-2*pi*i*k/n) for k < n/2, cached per size
    thread_local std::vector<std::vector<cplx>> cache;
    const std::size_t log2n = static_cast<std::size_t>(std::countr_zero(n));
    if (cache.size() <= log2n) cache.resize(log2n + 1);
    std::vector<cplx>& tw = cache[log2n];
    if (tw.empty()) {
      tw.resize(n / 2);
      for (std::size_t k = 0; k < n / 2; ++k) {
        tw[k] = std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n));
      }
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
      const std::size_t step = n / len;
      for (std::size_t i = 0; i < n; i += len) {
        for (std::size_t k = 0; k < len / 2; ++k) {
          // explicit product avoids the NaN-recovery path of std::complex operator*
          const double wr = tw[k * step].real(), wi = sign < 0 ? tw[k * step].imag() : -tw[k * step].imag();
          const cplx u = a[i + k], b = a[i + k + len / 2];
          const cplx v{b.real() * wr - b.imag() * wi, b.real() * wi + b.imag() * wr};
          a[i + k] = u + v;
          a[i + k + len / 2] = u - v;
        }
      }
    }
    return;
  }
  std::vector<cplx> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    cplx s = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      s += a[t] * std::polar(1.0, sign * 2.0 * std::numbers::pi * static_cast<double>((k * t) % n) /
                                       static_cast<double>(n));
    }
    out[k] = s;
  }
  a.swap(out);
}

// 2D transform of one plane stored row-major, natural layout.
inline void dft_2d(std::vector<cplx>& p, std::size_t h, std::size_t w, int sign) {
  std::vector<cplx> line(w);
  for (std::size_t y = 0; y < h; ++y) {
    std::copy_n(p.begin() + static_cast<std::ptrdiff_t>(y * w), w, line.begin());
    dft_1d(line, sign);
    std::copy(line.begin(), line.end(), p.begin() + static_cast<std::ptrdiff_t>(y * w));
  }
  line.resize(h);
  for (std::size_t x = 0; x < w; ++x) {
    for (std::size_t y = 0; y < h; ++y) line[y] = p[y * w + x];
    dft_1d(line, sign);
    for (std::size_t y = 0; y < h; ++y) p[y * w + x] = line[y];
  }
}

}  // namespace detail

/// Unnormalised forward DFT per slice, followed by a centre shift.
inline ComplexSpectrum fft2_centered(const Tensor& x) {
  const Shape s = x.shape();
  ComplexSpectrum out{Tensor(s), Tensor(s)};
  const std::size_t H = s.h, W = s.w, uc = H / 2, vc = W / 2;
  std::vector<cplx> p(H * W);
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* ip = x.plane(b, c);
      for (std::size_t i = 0; i < H * W; ++i) p[i] = ip[i];
      detail::dft_2d(p, H, W, -1);
      double* re = out.re.plane(b, c);
      double* im = out.im.plane(b, c);
      for (std::size_t u = 0; u < H; ++u)
        for (std::size_t v = 0; v < W; ++v) {
          const cplx val = p[((u + H - uc) % H) * W + (v + W - vc) % W];
          re[u * W + v] = val.real();
          im[u * W + v] = val.imag();
        }
    }
  return out;
}

/// Inverse of fft2_centered; returns the complex result as two planes.
inline ComplexSpectrum ifft2_centered(const ComplexSpectrum& spec) {
  const Shape s = spec.shape();
  ComplexSpectrum out{Tensor(s), Tensor(s)};
  const std::size_t H = s.h, W = s.w, uc = H / 2, vc = W / 2;
  const double norm = 1.0 / static_cast<double>(H * W);
  std::vector<cplx> p(H * W);
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* re = spec.re.plane(b, c);
      const double* im = spec.im.plane(b, c);
      for (std::size_t u = 0; u < H; ++u)
        for (std::size_t v = 0; v < W; ++v) p[((u + H - uc) % H) * W + (v + W - vc) % W] = {re[u * W + v], im[u * W + v]};
      detail::dft_2d(p, H, W, +1);
      double* ore = out.re.plane(b, c);
      double* oim = out.im.plane(b, c);
      for (std::size_t i = 0; i < H * W; ++i) {
        ore[i] = p[i].real() * norm;
        oim[i] = p[i].imag() * norm;
      }
    }
  return out;
}

inline void apply_mask(ComplexSpectrum& spec, const FreqMask& mask) {
  const Shape s = spec.shape();
  if (mask.h != s.h || mask.w != s.w) {
    throw DimensionError("mask " + std::to_string(mask.h) + "x" + std::to_string(mask.w) +
                         " does not match spectrum " + s.str());
  }
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t c = 0; c < s.c; ++c) {
      double* re = spec.re.plane(b, c);
      double* im = spec.im.plane(b, c);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        if (!mask.values[i]) re[i] = im[i] = 0.0;
      }
    }
}

/// Real part of IFFT(FFT(x) * M).
inline Tensor lowpass_filter(const Tensor& x, double tau) {
  const FreqMask mask = build_mask(x.shape().h, x.shape().w, tau);
  ComplexSpectrum spec = fft2_centered(x);
  apply_mask(spec, mask);
  return ifft2_centered(spec).re;
}

/// The mask is point-symmetric about the centre, so the filter is a real
/// symmetric projection and its VJP is the filter itself.
inline Var lowpass_filter(const Var& x, double tau) {
  return x.tape().record(lowpass_filter(x.value(), tau), {x.id()}, [tau](const Tensor& g, std::span<Tensor* const> gi) {
    *gi[0] += lowpass_filter(g, tau);
  });
}

enum class SubbandPolicy { all, ll_only };

inline std::string to_string(SubbandPolicy p) { return p == SubbandPolicy::all ? "all" : "ll_only"; }

inline SubbandPolicy parse_subband_policy(const std::string& s) {
  if (s == "all") return SubbandPolicy::all;
  if (s == "ll_only") return SubbandPolicy::ll_only;
  throw ConfigError("subband_policy must be 'all' or 'll_only', got '" + s + "'");
}

/// Keeps channels [begin, begin + count) and zeroes the rest.
inline Tensor mask_channels(const Tensor& x, std::size_t begin, std::size_t count) {
  Tensor out = Tensor::zeros_like(x);
  const Shape s = x.shape();
  for (std::size_t b = 0; b < s.n; ++b) std::copy_n(x.plane(b, begin), count * s.plane(), out.plane(b, begin));
  return out;
}

inline Var mask_channels(const Var& x, std::size_t begin, std::size_t count) {
  return x.tape().record(mask_channels(x.value(), begin, count), {x.id()},
                         [begin, count](const Tensor& g, std::span<Tensor* const> gi) {
                           *gi[0] += mask_channels(g, begin, count);
                         });
}

/// FLC composite: dwt2(lowpass(idwt2(select(dwt2(x))))).
inline SubbandSet<Tensor> flc_block(const Tensor& x, double tau, const WaveletSpec& spec, SubbandPolicy policy) {
  detail::require_even(x.shape(), "flc_block");
  SubbandSet<Tensor> s = dwt2(x, spec);
  if (policy == SubbandPolicy::ll_only) {
    s.LH = Tensor::zeros_like(s.LH);
    s.HL = Tensor::zeros_like(s.HL);
    s.HH = Tensor::zeros_like(s.HH);
  }
  return dwt2(lowpass_filter(idwt2(s, spec), tau), spec);
}

/// Tape version returning the packed (B, 4C, H/2, W/2) subbands.
inline Var flc_block_packed(const Var& x, double tau, const WaveletSpec& spec, SubbandPolicy policy) {
  detail::require_even(x.shape(), "flc_block");
  Var packed = dwt2_packed(x, spec);
  if (policy == SubbandPolicy::ll_only) packed = mask_channels(packed, 0, x.shape().c);
  return dwt2_packed(lowpass_filter(idwt2_packed(packed, spec), tau), spec);
}

inline SubbandSet<Var> flc_block(const Var& x, double tau, const WaveletSpec& spec, SubbandPolicy policy) {
  Var packed = flc_block_packed(x, tau, spec, policy);
  const std::size_t c = x.shape().c;
  return {slice_channels(packed, 0, c), slice_channels(packed, c, c), slice_channels(packed, 2 * c, c),
          slice_channels(packed, 3 * c, c)};
}

}  // namespace frequnet
