#pragma once

// Single-level separable 2D Daubechies wavelet transform with periodic
// extension.
//
// 1D analysis (correlation form, L = signal length):
//   lo[k] = sum_n h[n] x[(2k + n) mod L]
//   hi[k] = sum_n g[n] x[(2k + n) mod L],   g[n] = (-1)^n h[2N-1-n]
//
// 2D: filter along width first, then along height. Subband naming:
//   LL  low along both axes (approximation)
//   LH  low along width, high along height (horizontal detail)
//   HL  high along width, low along height (vertical detail)
//   HH  high along both (diagonal detail)

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "frequnet/error.hpp"
#include "frequnet/ops.hpp"
#include "frequnet/tape.hpp"
#include "frequnet/tensor.hpp"

namespace frequnet {

enum class BoundaryMode { periodic };

/// Orthonormal Daubechies filter pair.
class WaveletSpec {
 public:
  static WaveletSpec daubechies(int order) {
    // Scaling (reconstruction low-pass) coefficients, extremal phase.
    static const std::array<std::vector<double>, 4> table = {{
        {0.70710678118654752, 0.70710678118654752},
        {0.48296291314453414, 0.83651630373780791, 0.22414386804201338, -0.12940952255126038},
        {0.33267055295008262, 0.80689150931109258, 0.45987750211849157, -0.13501102001025459,
         -0.085441273882026662, 0.035226291885709537},
        {0.23037781330889650, 0.71484657055291565, 0.63088076792985891, -0.027983769416859854,
         -0.18703481171909308, 0.030841381835560764, 0.032883011666885200, -0.010597401785069032},
    }};
    if (order < 1 || order > 4) {
      throw ConfigError("wavelet order must be in 1..4 (db1..db4), got " + std::to_string(order));
    }
    return WaveletSpec(order, table[static_cast<std::size_t>(order - 1)]);
  }

  int order() const { return order_; }
  std::size_t length() const { return lowpass_.size(); }
  std::span<const double> lowpass() const { return lowpass_; }
  std::span<const double> highpass() const { return highpass_; }
  BoundaryMode boundary() const { return BoundaryMode::periodic; }

 private:
  WaveletSpec(int order, std::vector<double> lowpass) : order_(order), lowpass_(std::move(lowpass)) {
    const std::size_t n = lowpass_.size();
    highpass_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      highpass_[i] = (i % 2 == 0 ? 1.0 : -1.0) * lowpass_[n - 1 - i];
    }
  }

  int order_;
  std::vector<double> lowpass_;
  std::vector<double> highpass_;
};

template <typename T>
struct SubbandSet {
  T LL;
  T LH;
  T HL;
  T HH;
};

namespace detail {

// Strided 1D kernels. `len` is the full-resolution length (even); the
// half-resolution arrays have len/2 entries.
inline void analysis_1d(const double* x, std::size_t len, std::size_t xs, double* lo, double* hi, std::size_t os,
                        std::span<const double> h, std::span<const double> g) {
  const std::size_t half = len / 2;
  for (std::size_t k = 0; k < half; ++k) {
    double a = 0.0, d = 0.0;
    for (std::size_t n = 0; n < h.size(); ++n) {
      const double v = x[((2 * k + n) % len) * xs];
      a += h[n] * v;
      d += g[n] * v;
    }
    lo[k * os] = a;
    hi[k * os] = d;
  }
}

// Synthesis written as a gather over output samples.
inline void synthesis_1d(const double* lo, const double* hi, std::size_t os, double* x, std::size_t len,
                         std::size_t xs, std::span<const double> h, std::span<const double> g) {
  for (std::size_t n = 0; n < len; ++n) {
    double v = 0.0;
    for (std::size_t m = n % 2; m < h.size(); m += 2) {
      // tap m lands on n when (2k + m) == n (mod len)
      const std::size_t k = ((n + len * (m / len + 1) - m) % len) / 2;
      v += h[m] * lo[k * os] + g[m] * hi[k * os];
    }
    x[n * xs] = v;
  }
}

// Transpose of analysis_1d written as a scatter over coefficients.
inline void adjoint_1d(const double* lo, const double* hi, std::size_t os, double* x, std::size_t len, std::size_t xs,
                       std::span<const double> h, std::span<const double> g) {
  for (std::size_t i = 0; i < len; ++i) x[i * xs] = 0.0;
  const std::size_t half = len / 2;
  for (std::size_t k = 0; k < half; ++k) {
    const double a = lo[k * os], d = hi[k * os];
    for (std::size_t n = 0; n < h.size(); ++n) x[((2 * k + n) % len) * xs] += h[n] * a + g[n] * d;
  }
}

inline void require_even(const Shape& s, const char* op) {
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw DimensionError(std::string(op) + ": height and width must be even, got " + s.str());
  }
}

using Kernel1d = void (*)(const double*, const double*, std::size_t, double*, std::size_t, std::size_t,
                          std::span<const double>, std::span<const double>);

// Shared 2D driver for synthesis and adjoint (they differ only in the 1D kernel).
inline Tensor inverse_2d(const SubbandSet<const Tensor*>& s, const WaveletSpec& spec, Kernel1d kernel,
                         const char* op) {
  const Shape hs = s.LL->shape();
  for (const Tensor* t : {s.LH, s.HL, s.HH}) {
    if (t->shape() != hs) throw DimensionError(std::string(op) + ": subband shapes differ: " + hs.str() + " vs " +
                                               t->shape().str());
  }
  const std::size_t H = hs.h * 2, W = hs.w * 2, hw = hs.w;
  Tensor out(Shape{hs.n, hs.c, H, W});
  std::vector<double> row_lo(H * hw), row_hi(H * hw);
  auto h = spec.lowpass();
  auto g = spec.highpass();
  for (std::size_t b = 0; b < hs.n; ++b) {
    for (std::size_t c = 0; c < hs.c; ++c) {
      const double* ll = s.LL->plane(b, c);
      const double* lh = s.LH->plane(b, c);
      const double* hl = s.HL->plane(b, c);
      const double* hh_ = s.HH->plane(b, c);
      for (std::size_t k = 0; k < hw; ++k) {
        kernel(ll + k, lh + k, hw, row_lo.data() + k, H, hw, h, g);
        kernel(hl + k, hh_ + k, hw, row_hi.data() + k, H, hw, h, g);
      }
      double* op_ = out.plane(b, c);
      for (std::size_t y = 0; y < H; ++y) {
        kernel(row_lo.data() + y * hw, row_hi.data() + y * hw, 1, op_ + y * W, W, 1, h, g);
      }
    }
  }
  return out;
}

}  // namespace detail

/// Forward transform into four half-resolution subbands.
inline SubbandSet<Tensor> dwt2(const Tensor& x, const WaveletSpec& spec) {
  const Shape s = x.shape();
  detail::require_even(s, "dwt2");
  const std::size_t H = s.h, W = s.w, hh = H / 2, hw = W / 2;
  const Shape hs{s.n, s.c, hh, hw};
  SubbandSet<Tensor> out{Tensor(hs), Tensor(hs), Tensor(hs), Tensor(hs)};
  std::vector<double> row_lo(H * hw), row_hi(H * hw);
  auto h = spec.lowpass();
  auto g = spec.highpass();
  for (std::size_t b = 0; b < s.n; ++b) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* ip = x.plane(b, c);
      for (std::size_t y = 0; y < H; ++y) {
        detail::analysis_1d(ip + y * W, W, 1, row_lo.data() + y * hw, row_hi.data() + y * hw, 1, h, g);
      }
      double* ll = out.LL.plane(b, c);
      double* lh = out.LH.plane(b, c);
      double* hl = out.HL.plane(b, c);
      double* hh_ = out.HH.plane(b, c);
      for (std::size_t k = 0; k < hw; ++k) {
        detail::analysis_1d(row_lo.data() + k, H, hw, ll + k, lh + k, hw, h, g);
        detail::analysis_1d(row_hi.data() + k, H, hw, hl + k, hh_ + k, hw, h, g);
      }
    }
  }
  return out;
}

/// Inverse transform (synthesis filter bank).
inline Tensor idwt2(const SubbandSet<Tensor>& s, const WaveletSpec& spec) {
  return detail::inverse_2d({&s.LL, &s.LH, &s.HL, &s.HH}, spec, detail::synthesis_1d, "idwt2");
}

/// Transpose of dwt2. Coincides with idwt2 for orthonormal periodic filters.
inline Tensor adjoint_dwt2(const SubbandSet<Tensor>& s, const WaveletSpec& spec) {
  return detail::inverse_2d({&s.LL, &s.LH, &s.HL, &s.HH}, spec, detail::adjoint_1d, "adjoint_dwt2");
}

// Packed layout: channels [LL(0..C), LH(C..2C), HL(2C..3C), HH(3C..4C)].

inline Tensor pack_subbands(const SubbandSet<Tensor>& s) {
  const Tensor* parts[] = {&s.LL, &s.LH, &s.HL, &s.HH};
  return concat_channel(std::span<const Tensor* const>(parts));
}

inline SubbandSet<Tensor> unpack_subbands(const Tensor& packed) {
  const Shape s = packed.shape();
  if (s.c % 4 != 0) throw DimensionError("unpack_subbands: channel count must be a multiple of 4, got " + s.str());
  const std::size_t c = s.c / 4;
  return {slice_channels(packed, 0, c), slice_channels(packed, c, c), slice_channels(packed, 2 * c, c),
          slice_channels(packed, 3 * c, c)};
}

inline Var dwt2_packed(const Var& x, const WaveletSpec& spec) {
  return x.tape().record(pack_subbands(dwt2(x.value(), spec)), {x.id()},
                         [spec](const Tensor& g, std::span<Tensor* const> gi) {
                           *gi[0] += adjoint_dwt2(unpack_subbands(g), spec);
                         });
}

inline Var idwt2_packed(const Var& packed, const WaveletSpec& spec) {
  return packed.tape().record(idwt2(unpack_subbands(packed.value()), spec), {packed.id()},
                              [spec](const Tensor& g, std::span<Tensor* const> gi) {
                                // synthesis is orthonormal, so its transpose is the analysis
                                *gi[0] += pack_subbands(dwt2(g, spec));
                              });
}

inline SubbandSet<Var> dwt2(const Var& x, const WaveletSpec& spec) {
  Var packed = dwt2_packed(x, spec);
  const std::size_t c = x.shape().c;
  return {slice_channels(packed, 0, c), slice_channels(packed, c, c), slice_channels(packed, 2 * c, c),
          slice_channels(packed, 3 * c, c)};
}

inline Var idwt2(const SubbandSet<Var>& s, const WaveletSpec& spec) {
  const Var parts[] = {s.LL, s.LH, s.HL, s.HH};
  for (const Var& p : parts) {
    if (p.shape() != s.LL.shape()) {
      throw DimensionError("idwt2: subband shapes differ: " + s.LL.shape().str() + " vs " + p.shape().str());
    }
  }
  return idwt2_packed(concat_channel(std::span<const Var>(parts)), spec);
}

}  // namespace frequnet
