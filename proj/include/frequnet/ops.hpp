#pragma once

// Differentiable operator vocabulary. Every op has a plain-Tensor kernel and a
// Var overload that records the result on the tape together with its
// vector-Jacobian product.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "frequnet/error.hpp"
#include "frequnet/tape.hpp"
#include "frequnet/tensor.hpp"

namespace frequnet {

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw DimensionError(msg);
}

inline Tape& same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw StateError("op inputs recorded on different tapes");
  return a.tape();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic and reductions

inline Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  out += b;
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  a.require_same_shape(b, "sub");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  a.require_same_shape(b, "mul");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

inline Tensor scale(const Tensor& a, double s) {
  Tensor out = a;
  out *= s;
  return out;
}

inline Var add(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b);
  return t.record(add(a.value(), b.value()), {a.id(), b.id()},
                  [](const Tensor& g, std::span<Tensor* const> gi) {
                    if (gi[0]) *gi[0] += g;
                    if (gi[1]) *gi[1] += g;
                  });
}

inline Var sub(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b);
  return t.record(sub(a.value(), b.value()), {a.id(), b.id()},
                  [](const Tensor& g, std::span<Tensor* const> gi) {
                    if (gi[0]) *gi[0] += g;
                    if (gi[1]) {
                      for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] -= g[i];
                    }
                  });
}

inline Var mul(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b);
  return t.record(mul(a.value(), b.value()), {a.id(), b.id()},
                  [tp = &t, ai = a.id(), bi = b.id()](const Tensor& g, std::span<Tensor* const> gi) {
                    const Tensor& av = tp->value(ai);
                    const Tensor& bv = tp->value(bi);
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      if (gi[0]) (*gi[0])[i] += g[i] * bv[i];
                      if (gi[1]) (*gi[1])[i] += g[i] * av[i];
                    }
                  });
}

inline Var scale(const Var& a, double s) {
  return a.tape().record(scale(a.value(), s), {a.id()}, [s](const Tensor& g, std::span<Tensor* const> gi) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += s * g[i];
  });
}

/// Sum of all elements as a 1x1x1x1 tensor.
inline Var sum(const Var& a) {
  return a.tape().record(Tensor::scalar(a.value().sum()), {a.id()},
                         [](const Tensor& g, std::span<Tensor* const> gi) {
                           const double s = g[0];
                           for (double& v : gi[0]->data()) v += s;
                         });
}

inline Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return a.tape().record(Tensor::scalar(a.value().sum() / n), {a.id()},
                         [n](const Tensor& g, std::span<Tensor* const> gi) {
                           const double s = g[0] / n;
                           for (double& v : gi[0]->data()) v += s;
                         });
}

/// Mean absolute value. The subgradient at zero is taken as zero.
inline Var mean_abs(const Var& a) {
  const Tensor& x = a.value();
  const double n = static_cast<double>(x.size());
  double s = 0.0;
  for (double v : x.data()) s += std::abs(v);
  return a.tape().record(Tensor::scalar(s / n), {a.id()}, [x, n](const Tensor& g, std::span<Tensor* const> gi) {
    const double k = g[0] / n;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double sgn = x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0);
      (*gi[0])[i] += k * sgn;
    }
  });
}

/// Weighted sum of scalar Vars: sum_i w_i * s_i.
inline Var weighted_sum(std::span<const Var> scalars, std::span<const double> weights) {
  detail::require(!scalars.empty() && scalars.size() == weights.size(), "weighted_sum: size mismatch");
  Tape& t = scalars[0].tape();
  double total = 0.0;
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    total += weights[i] * scalars[i].value().item();
    ids.push_back(scalars[i].id());
  }
  std::vector<double> w(weights.begin(), weights.end());
  return t.record(Tensor::scalar(total), std::move(ids), [w](const Tensor& g, std::span<Tensor* const> gi) {
    for (std::size_t i = 0; i < gi.size(); ++i) {
      if (gi[i]) (*gi[i])[0] += w[i] * g[0];
    }
  });
}

// ---------------------------------------------------------------------------
// Activations

inline Tensor leaky_relu(const Tensor& x, double slope) {
  Tensor out = x;
  for (double& v : out.data()) v = v > 0.0 ? v : slope * v;
  return out;
}

inline Var leaky_relu(const Var& x, double slope) {
  return x.tape().record(leaky_relu(x.value(), slope), {x.id()},
                         [tp = &x.tape(), xi = x.id(), slope](const Tensor& g, std::span<Tensor* const> gi) {
                           const Tensor& xv = tp->value(xi);
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             (*gi[0])[i] += xv[i] > 0.0 ? g[i] : slope * g[i];
                           }
                         });
}

inline Tensor sigmoid(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.data()) v = 1.0 / (1.0 + std::exp(-v));
  return out;
}

inline Var sigmoid(const Var& x) {
  Tensor y = sigmoid(x.value());
  return x.tape().record(y, {x.id()}, [y](const Tensor& g, std::span<Tensor* const> gi) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

inline Tensor tanh(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.data()) v = std::tanh(v);
  return out;
}

inline Var tanh(const Var& x) {
  Tensor y = tanh(x.value());
  return x.tape().record(y, {x.id()}, [y](const Tensor& g, std::span<Tensor* const> gi) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

/// Softmax across the channel axis at every (b, y, x).
inline Tensor softmax_channel(const Tensor& x) {
  const Shape s = x.shape();
  Tensor out(s);
  const std::size_t hw = s.plane();
  for (std::size_t b = 0; b < s.n; ++b) {
    for (std::size_t p = 0; p < hw; ++p) {
      const std::size_t base = b * s.c * hw + p;
      double m = x[base];
      for (std::size_t c = 1; c < s.c; ++c) m = std::max(m, x[base + c * hw]);
      double z = 0.0;
      for (std::size_t c = 0; c < s.c; ++c) {
        const double e = std::exp(x[base + c * hw] - m);
        out[base + c * hw] = e;
        z += e;
      }
      for (std::size_t c = 0; c < s.c; ++c) out[base + c * hw] /= z;
    }
  }
  return out;
}

inline Var softmax_channel(const Var& x) {
  Tensor y = softmax_channel(x.value());
  return x.tape().record(y, {x.id()}, [y](const Tensor& g, std::span<Tensor* const> gi) {
    const Shape s = y.shape();
    const std::size_t hw = s.plane();
    for (std::size_t b = 0; b < s.n; ++b) {
      for (std::size_t p = 0; p < hw; ++p) {
        const std::size_t base = b * s.c * hw + p;
        double dotp = 0.0;
        for (std::size_t c = 0; c < s.c; ++c) dotp += g[base + c * hw] * y[base + c * hw];
        for (std::size_t c = 0; c < s.c; ++c) {
          (*gi[0])[base + c * hw] += y[base + c * hw] * (g[base + c * hw] - dotp);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, no kernel flip)

namespace detail {

inline void check_conv(const Shape& x, const Shape& w, const Shape* b, std::size_t stride) {
  require(w.c == x.c, "conv2d: weight expects " + std::to_string(w.c) + " input channels, input has " +
                          std::to_string(x.c));
  require(w.h == w.w, "conv2d: kernel must be square, got " + w.str());
  require(stride >= 1, "conv2d: stride must be positive");
  if (b) require(b->numel() == w.n, "conv2d: bias length must equal output channels");
}

inline Shape conv_out_shape(const Shape& x, const Shape& w, std::size_t stride, std::size_t pad) {
  const std::size_t k = w.h;
  require(x.h + 2 * pad >= k && x.w + 2 * pad >= k, "conv2d: kernel larger than padded input");
  return Shape{x.n, w.n, (x.h + 2 * pad - k) / stride + 1, (x.w + 2 * pad - k) / stride + 1};
}

// Dot product with eight independent partial sums; fixed summation order.
inline double dot_n(const double* a, const double* b, std::size_t n) {
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
  double s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

// Zero-padded copy of every channel of sample b: (C, H + 2 pad, W + 2 pad).
inline std::vector<double> pad_sample(const Tensor& x, std::size_t b, std::size_t pad) {
  const Shape s = x.shape();
  const std::size_t hp = s.h + 2 * pad, wp = s.w + 2 * pad;
  std::vector<double> out(s.c * hp * wp, 0.0);
  for (std::size_t c = 0; c < s.c; ++c) {
    const double* src = x.plane(b, c);
    for (std::size_t y = 0; y < s.h; ++y)
      std::copy(src + y * s.w, src + (y + 1) * s.w, out.data() + (c * hp + y + pad) * wp + pad);
  }
  return out;
}

inline std::ptrdiff_t in_index(std::size_t o, std::size_t stride, std::size_t k, std::size_t pad) {
  return static_cast<std::ptrdiff_t>(o * stride + k) - static_cast<std::ptrdiff_t>(pad);
}

}  // namespace detail

namespace detail {

// One output row of a stride-1 correlation with a KxK kernel; ip points at the
// first padded input row used by this output row.
template <std::size_t K>
inline void conv_row(double* __restrict orow, const double* __restrict ip, std::size_t wp, const double* wk,
                     std::size_t ow) {
  double wl[K * K];
  for (std::size_t i = 0; i < K * K; ++i) wl[i] = wk[i];
  for (std::size_t ox = 0; ox < ow; ++ox) {
    double a = orow[ox];
#pragma GCC unroll 8
    for (std::size_t ky = 0; ky < K; ++ky)
#pragma GCC unroll 8
      for (std::size_t kx = 0; kx < K; ++kx) a += wl[ky * K + kx] * ip[ky * wp + ox + kx];
    orow[ox] = a;
  }
}

inline void conv_row_any(double* orow, const double* ip, std::size_t wp, const double* wk, std::size_t k,
                         std::size_t ow) {
  for (std::size_t ky = 0; ky < k; ++ky)
    for (std::size_t kx = 0; kx < k; ++kx) {
      const double wv = wk[ky * k + kx];
      const double* row = ip + ky * wp + kx;
      for (std::size_t ox = 0; ox < ow; ++ox) orow[ox] += wv * row[ox];
    }
}

// Accumulates the stride-1 correlation of sample b into out (sample ob).
inline void conv_accumulate(const Tensor& x, std::size_t b, const Tensor& w, std::size_t pad, Tensor& out,
                            std::size_t ob) {
  const Shape xs = x.shape(), ws = w.shape(), os = out.shape();
  const std::size_t k = ws.h, hp = xs.h + 2 * pad, wp = xs.w + 2 * pad;
  const std::vector<double> xp = pad_sample(x, b, pad);
  for (std::size_t co = 0; co < ws.n; ++co) {
    double* op = out.plane(ob, co);
    for (std::size_t ci = 0; ci < xs.c; ++ci) {
      const double* wk = w.plane(co, ci);
      const double* ip = xp.data() + ci * hp * wp;
      for (std::size_t oy = 0; oy < os.h; ++oy) {
        double* orow = op + oy * os.w;
        const double* irow = ip + oy * wp;
        switch (k) {
          case 1: conv_row<1>(orow, irow, wp, wk, os.w); break;
          case 3: conv_row<3>(orow, irow, wp, wk, os.w); break;
          case 5: conv_row<5>(orow, irow, wp, wk, os.w); break;
          default: conv_row_any(orow, irow, wp, wk, k, os.w); break;
        }
      }
    }
  }
}

}  // namespace detail

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, std::size_t stride, std::size_t pad) {
  const Shape xs = x.shape(), ws = w.shape();
  detail::check_conv(xs, ws, bias ? &bias->shape() : nullptr, stride);
  const Shape os = detail::conv_out_shape(xs, ws, stride, pad);
  const std::size_t k = ws.h;
  Tensor out(os);
  for (std::size_t b = 0; b < xs.n; ++b) {
    for (std::size_t co = 0; co < ws.n; ++co) {
      double* op = out.plane(b, co);
      std::fill(op, op + os.plane(), bias ? (*bias)[co] : 0.0);
    }
    if (stride == 1) {
      detail::conv_accumulate(x, b, w, pad, out, b);
      continue;
    }
    for (std::size_t co = 0; co < ws.n; ++co) {
      double* op = out.plane(b, co);
      for (std::size_t ci = 0; ci < xs.c; ++ci) {
        const double* ip = x.plane(b, ci);
        const double* wk = w.plane(co, ci);
        for (std::size_t oy = 0; oy < os.h; ++oy)
          for (std::size_t ox = 0; ox < os.w; ++ox)
            for (std::size_t ky = 0; ky < k; ++ky) {
              const std::ptrdiff_t iy = detail::in_index(oy, stride, ky, pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(xs.h)) continue;
              for (std::size_t kx = 0; kx < k; ++kx) {
                const std::ptrdiff_t ix = detail::in_index(ox, stride, kx, pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(xs.w)) continue;
                op[oy * os.w + ox] += wk[ky * k + kx] * ip[static_cast<std::size_t>(iy) * xs.w + static_cast<std::size_t>(ix)];
              }
            }
      }
    }
  }
  return out;
}

namespace detail {

inline void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& g, std::size_t stride, std::size_t pad,
                            Tensor* gx, Tensor* gw, Tensor* gb) {
  const Shape xs = x.shape(), ws = w.shape(), os = g.shape();
  const std::size_t k = ws.h;
  // input gradient of a stride-1 correlation is a correlation of g with the
  // spatially flipped, channel-transposed kernel
  Tensor flipped(Shape{ws.c, ws.n, k, k});
  if (gx && stride == 1) {
    for (std::size_t co = 0; co < ws.n; ++co)
      for (std::size_t ci = 0; ci < ws.c; ++ci)
        for (std::size_t i = 0; i < k * k; ++i) flipped.plane(ci, co)[k * k - 1 - i] = w.plane(co, ci)[i];
  }
  for (std::size_t b = 0; b < xs.n; ++b) {
    if (gb) {
      for (std::size_t co = 0; co < ws.n; ++co) {
        const double* gp = g.plane(b, co);
        double s = 0.0;
        for (std::size_t i = 0; i < os.plane(); ++i) s += gp[i];
        (*gb)[co] += s;
      }
    }
    if (stride == 1 && pad + 1 <= k) {
      if (gw) {
        const std::size_t hp = xs.h + 2 * pad, wp = xs.w + 2 * pad;
        const std::vector<double> xp = pad_sample(x, b, pad);
        for (std::size_t co = 0; co < ws.n; ++co) {
          const double* gp = g.plane(b, co);
          for (std::size_t ci = 0; ci < xs.c; ++ci) {
            double* gwk = gw->plane(co, ci);
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                double acc = 0.0;
                for (std::size_t oy = 0; oy < os.h; ++oy)
                  acc += dot_n(gp + oy * os.w, xp.data() + (ci * hp + oy + ky) * wp + kx, os.w);
                gwk[ky * k + kx] += acc;
              }
          }
        }
      }
      if (gx) conv_accumulate(g, b, flipped, k - 1 - pad, *gx, b);
      continue;
    }
    for (std::size_t co = 0; co < ws.n; ++co) {
      const double* gp = g.plane(b, co);
      for (std::size_t ci = 0; ci < xs.c; ++ci) {
        const double* ip = x.plane(b, ci);
        const double* wk = w.plane(co, ci);
        for (std::size_t oy = 0; oy < os.h; ++oy)
          for (std::size_t ox = 0; ox < os.w; ++ox)
            for (std::size_t ky = 0; ky < k; ++ky) {
              const std::ptrdiff_t iy = in_index(oy, stride, ky, pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(xs.h)) continue;
              for (std::size_t kx = 0; kx < k; ++kx) {
                const std::ptrdiff_t ix = in_index(ox, stride, kx, pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(xs.w)) continue;
                const std::size_t i = static_cast<std::size_t>(iy) * xs.w + static_cast<std::size_t>(ix);
                const double gv = gp[oy * os.w + ox];
                if (gx) gx->plane(b, ci)[i] += wk[ky * k + kx] * gv;
                if (gw) gw->plane(co, ci)[ky * k + kx] += gv * ip[i];
              }
            }
      }
    }
  }
}

}  // namespace detail

inline Var conv2d(const Var& x, const Var& w, const std::optional<Var>& bias, std::size_t stride, std::size_t pad) {
  Tape& t = detail::same_tape(x, w);
  std::vector<std::size_t> ids{x.id(), w.id()};
  if (bias) ids.push_back(bias->id());
  Tensor out = conv2d(x.value(), w.value(), bias ? &bias->value() : nullptr, stride, pad);
  return t.record(std::move(out), std::move(ids),
                  [tp = &t, xi = x.id(), wi = w.id(), stride, pad](const Tensor& g, std::span<Tensor* const> gi) {
                    const Tensor& xv = tp->value(xi);
                    const Tensor& wv = tp->value(wi);
                    detail::conv2d_backward(xv, wv, g, stride, pad, gi[0], gi[1], gi.size() > 2 ? gi[2] : nullptr);
                  });
}

/// Per-pixel channel map: out[b,o,y,x] = sum_i W[o,i] * in[b,i,y,x] + bias[o].
/// Weight shape (Cout, Cin, 1, 1).
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias) {
  const Shape xs = x.shape(), ws = w.shape();
  detail::require(ws.h == 1 && ws.w == 1, "linear: weight must be (Cout, Cin, 1, 1), got " + ws.str());
  detail::require(ws.c == xs.c, "linear: weight expects " + std::to_string(ws.c) + " input channels, input has " +
                                    std::to_string(xs.c));
  if (bias) detail::require(bias->size() == ws.n, "linear: bias length must equal output channels");
  Tensor out(Shape{xs.n, ws.n, xs.h, xs.w});
  const std::size_t hw = xs.plane();
  for (std::size_t b = 0; b < xs.n; ++b) {
    for (std::size_t o = 0; o < ws.n; ++o) {
      double* op = out.plane(b, o);
      std::fill(op, op + hw, bias ? (*bias)[o] : 0.0);
      for (std::size_t i = 0; i < xs.c; ++i) {
        const double wv = w[o * ws.c + i];
        const double* ip = x.plane(b, i);
        for (std::size_t p = 0; p < hw; ++p) op[p] += wv * ip[p];
      }
    }
  }
  return out;
}

inline Var linear(const Var& x, const Var& w, const std::optional<Var>& bias) {
  Tape& t = detail::same_tape(x, w);
  std::vector<std::size_t> ids{x.id(), w.id()};
  if (bias) ids.push_back(bias->id());
  Tensor out = linear(x.value(), w.value(), bias ? &bias->value() : nullptr);
  return t.record(std::move(out), std::move(ids),
                  [tp = &t, xi = x.id(), wi = w.id()](const Tensor& g, std::span<Tensor* const> gi) {
                    const Tensor& xv = tp->value(xi);
                    const Tensor& wv = tp->value(wi);
                    const Shape xs = xv.shape(), ws = wv.shape();
                    const std::size_t hw = xs.plane();
                    for (std::size_t b = 0; b < xs.n; ++b) {
                      for (std::size_t o = 0; o < ws.n; ++o) {
                        const double* gp = g.plane(b, o);
                        if (gi.size() > 2 && gi[2]) {
                          double s = 0.0;
                          for (std::size_t p = 0; p < hw; ++p) s += gp[p];
                          (*gi[2])[o] += s;
                        }
                        for (std::size_t i = 0; i < xs.c; ++i) {
                          if (gi[0]) {
                            const double wv_oi = wv[o * ws.c + i];
                            double* dst = gi[0]->plane(b, i);
                            for (std::size_t p = 0; p < hw; ++p) dst[p] += wv_oi * gp[p];
                          }
                          if (gi[1]) {
                            (*gi[1])[o * ws.c + i] += detail::dot_n(gp, xv.plane(b, i), hw);
                          }
                        }
                      }
                    }
                  });
}

inline Tensor conv1x1(const Tensor& x, const Tensor& w, const Tensor* bias) { return linear(x, w, bias); }
inline Var conv1x1(const Var& x, const Var& w, const std::optional<Var>& bias) { return linear(x, w, bias); }

// ---------------------------------------------------------------------------
// Instance normalisation

struct InstanceNormStats {
  std::vector<double> mean;
  std::vector<double> inv_std;
};

inline Tensor instance_norm(const Tensor& x, double eps, const Tensor* gamma = nullptr, const Tensor* beta = nullptr,
                            InstanceNormStats* stats = nullptr) {
  const Shape s = x.shape();
  detail::require(s.plane() >= 2, "instance_norm: needs at least two elements per slice, got " + s.str());
  if (gamma) detail::require(gamma->size() == s.c, "instance_norm: gamma length must equal channels");
  if (beta) detail::require(beta->size() == s.c, "instance_norm: beta length must equal channels");
  Tensor out(s);
  const std::size_t hw = s.plane();
  if (stats) {
    stats->mean.assign(s.n * s.c, 0.0);
    stats->inv_std.assign(s.n * s.c, 0.0);
  }
  for (std::size_t b = 0; b < s.n; ++b) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* ip = x.plane(b, c);
      double m = 0.0;
      for (std::size_t p = 0; p < hw; ++p) m += ip[p];
      m /= static_cast<double>(hw);
      double v = 0.0;
      for (std::size_t p = 0; p < hw; ++p) v += (ip[p] - m) * (ip[p] - m);
      v /= static_cast<double>(hw);
      const double inv = 1.0 / std::sqrt(v + eps);
      const double gm = gamma ? (*gamma)[c] : 1.0;
      const double bt = beta ? (*beta)[c] : 0.0;
      double* op = out.plane(b, c);
      for (std::size_t p = 0; p < hw; ++p) op[p] = gm * (ip[p] - m) * inv + bt;
      if (stats) {
        stats->mean[b * s.c + c] = m;
        stats->inv_std[b * s.c + c] = inv;
      }
    }
  }
  return out;
}

inline Var instance_norm(const Var& x, double eps, const std::optional<Var>& gamma = std::nullopt,
                         const std::optional<Var>& beta = std::nullopt) {
  InstanceNormStats st;
  Tensor out = instance_norm(x.value(), eps, gamma ? &gamma->value() : nullptr, beta ? &beta->value() : nullptr, &st);
  std::vector<std::size_t> ids{x.id()};
  const bool has_gamma = gamma.has_value(), has_beta = beta.has_value();
  if (gamma) ids.push_back(gamma->id());
  if (beta) ids.push_back(beta->id());
  Tensor gv = gamma ? gamma->value() : Tensor();
  return x.tape().record(
      std::move(out), std::move(ids),
      [tp = &x.tape(), xi = x.id(), gv, st = std::move(st), has_gamma, has_beta](const Tensor& g, std::span<Tensor* const> gi) {
        const Tensor& xv = tp->value(xi);
        const Shape s = xv.shape();
        const std::size_t hw = s.plane();
        const double n = static_cast<double>(hw);
        Tensor* gx = gi[0];
        Tensor* gg = has_gamma ? gi[1] : nullptr;
        Tensor* gbeta = has_beta ? gi[has_gamma ? 2 : 1] : nullptr;
        for (std::size_t b = 0; b < s.n; ++b) {
          for (std::size_t c = 0; c < s.c; ++c) {
            const double m = st.mean[b * s.c + c];
            const double inv = st.inv_std[b * s.c + c];
            const double gm = has_gamma ? gv[c] : 1.0;
            const double* ip = xv.plane(b, c);
            const double* gp = g.plane(b, c);
            double sum_g = 0.0, sum_gx = 0.0;
            for (std::size_t p = 0; p < hw; ++p) {
              const double xhat = (ip[p] - m) * inv;
              sum_g += gp[p];
              sum_gx += gp[p] * xhat;
            }
            if (gg) (*gg)[c] += sum_gx;
            if (gbeta) (*gbeta)[c] += sum_g;
            if (gx) {
              double* dst = gx->plane(b, c);
              const double mg = sum_g / n, mgx = sum_gx / n;
              for (std::size_t p = 0; p < hw; ++p) {
                const double xhat = (ip[p] - m) * inv;
                dst[p] += gm * inv * (gp[p] - mg - xhat * mgx);
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Channel plumbing

inline Tensor concat_channel(std::span<const Tensor* const> xs) {
  detail::require(!xs.empty(), "concat_channel: no inputs");
  const Shape s0 = xs[0]->shape();
  std::size_t c = 0;
  for (const Tensor* t : xs) {
    const Shape s = t->shape();
    detail::require(s.n == s0.n && s.h == s0.h && s.w == s0.w,
                    "concat_channel: incompatible shapes " + s0.str() + " and " + s.str());
    c += s.c;
  }
  Tensor out(Shape{s0.n, c, s0.h, s0.w});
  const std::size_t hw = s0.plane();
  for (std::size_t b = 0; b < s0.n; ++b) {
    std::size_t off = 0;
    for (const Tensor* t : xs) {
      const std::size_t tc = t->shape().c;
      std::copy_n(t->plane(b, 0), tc * hw, out.plane(b, off));
      off += tc;
    }
  }
  return out;
}

inline Var concat_channel(std::span<const Var> xs) {
  detail::require(!xs.empty(), "concat_channel: no inputs");
  std::vector<const Tensor*> vals;
  std::vector<std::size_t> ids, chans;
  for (const Var& v : xs) {
    detail::same_tape(xs[0], v);
    vals.push_back(&v.value());
    ids.push_back(v.id());
    chans.push_back(v.shape().c);
  }
  Tensor out = concat_channel(vals);
  return xs[0].tape().record(std::move(out), std::move(ids),
                             [chans](const Tensor& g, std::span<Tensor* const> gi) {
                               const Shape s = g.shape();
                               const std::size_t hw = s.plane();
                               for (std::size_t b = 0; b < s.n; ++b) {
                                 std::size_t off = 0;
                                 for (std::size_t k = 0; k < chans.size(); ++k) {
                                   if (gi[k]) {
                                     const double* src = g.plane(b, off);
                                     double* dst = gi[k]->plane(b, 0);
                                     for (std::size_t i = 0; i < chans[k] * hw; ++i) dst[i] += src[i];
                                   }
                                   off += chans[k];
                                 }
                               }
                             });
}

inline Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count) {
  const Shape s = x.shape();
  detail::require(count > 0 && begin + count <= s.c, "slice_channels: range [" + std::to_string(begin) + ", " +
                                                         std::to_string(begin + count) + ") exceeds " +
                                                         std::to_string(s.c) + " channels");
  Tensor out(Shape{s.n, count, s.h, s.w});
  for (std::size_t b = 0; b < s.n; ++b) std::copy_n(x.plane(b, begin), count * s.plane(), out.plane(b, 0));
  return out;
}

inline Var slice_channels(const Var& x, std::size_t begin, std::size_t count) {
  return x.tape().record(slice_channels(x.value(), begin, count), {x.id()},
                         [begin, count](const Tensor& g, std::span<Tensor* const> gi) {
                           const Shape s = g.shape();
                           for (std::size_t b = 0; b < s.n; ++b) {
                             const double* src = g.plane(b, 0);
                             double* dst = gi[0]->plane(b, begin);
                             for (std::size_t i = 0; i < count * s.plane(); ++i) dst[i] += src[i];
                           }
                         });
}

/// x (B, C, H, W) scaled per pixel by w (B, 1, H, W).
inline Tensor mul_channel_broadcast(const Tensor& x, const Tensor& w) {
  const Shape s = x.shape(), ws = w.shape();
  detail::require(ws.n == s.n && ws.c == 1 && ws.h == s.h && ws.w == s.w,
                  "mul_channel_broadcast: weight " + ws.str() + " incompatible with " + s.str());
  Tensor out(s);
  for (std::size_t b = 0; b < s.n; ++b) {
    const double* wp = w.plane(b, 0);
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* ip = x.plane(b, c);
      double* op = out.plane(b, c);
      for (std::size_t p = 0; p < s.plane(); ++p) op[p] = ip[p] * wp[p];
    }
  }
  return out;
}

inline Var mul_channel_broadcast(const Var& x, const Var& w) {
  Tape& t = detail::same_tape(x, w);
  return t.record(mul_channel_broadcast(x.value(), w.value()), {x.id(), w.id()},
                  [tp = &t, xi = x.id(), wi = w.id()](const Tensor& g, std::span<Tensor* const> gi) {
                    const Tensor& xv = tp->value(xi);
                    const Tensor& wv = tp->value(wi);
                    const Shape s = xv.shape();
                    for (std::size_t b = 0; b < s.n; ++b) {
                      const double* wp = wv.plane(b, 0);
                      for (std::size_t c = 0; c < s.c; ++c) {
                        const double* gp = g.plane(b, c);
                        const double* ip = xv.plane(b, c);
                        if (gi[0]) {
                          double* dst = gi[0]->plane(b, c);
                          for (std::size_t p = 0; p < s.plane(); ++p) dst[p] += gp[p] * wp[p];
                        }
                        if (gi[1]) {
                          double* dst = gi[1]->plane(b, 0);
                          for (std::size_t p = 0; p < s.plane(); ++p) dst[p] += gp[p] * ip[p];
                        }
                      }
                    }
                  });
}

// ---------------------------------------------------------------------------
// Resampling

/// (B, C, H, W) -> (B, C/s^2, sH, sW); out[c][y*s+i][x*s+j] = in[c*s^2 + i*s + j][y][x].
inline Tensor pixel_shuffle(const Tensor& x, std::size_t s) {
  const Shape is = x.shape();
  detail::require(s >= 1 && is.c % (s * s) == 0,
                  "pixel_shuffle: channels " + std::to_string(is.c) + " not divisible by scale^2 = " +
                      std::to_string(s * s));
  const Shape os{is.n, is.c / (s * s), is.h * s, is.w * s};
  Tensor out(os);
  for (std::size_t b = 0; b < is.n; ++b)
    for (std::size_t c = 0; c < os.c; ++c)
      for (std::size_t i = 0; i < s; ++i)
        for (std::size_t j = 0; j < s; ++j) {
          const double* ip = x.plane(b, c * s * s + i * s + j);
          double* op = out.plane(b, c);
          for (std::size_t y = 0; y < is.h; ++y)
            for (std::size_t xx = 0; xx < is.w; ++xx) op[(y * s + i) * os.w + xx * s + j] = ip[y * is.w + xx];
        }
  return out;
}

/// Inverse of pixel_shuffle: (B, C, H, W) -> (B, C*s^2, H/s, W/s).
inline Tensor pixel_unshuffle(const Tensor& x, std::size_t s) {
  const Shape is = x.shape();
  detail::require(s >= 1 && is.h % s == 0 && is.w % s == 0,
                  "pixel_unshuffle: spatial size " + std::to_string(is.h) + "x" + std::to_string(is.w) +
                      " not divisible by " + std::to_string(s));
  const Shape os{is.n, is.c * s * s, is.h / s, is.w / s};
  Tensor out(os);
  for (std::size_t b = 0; b < is.n; ++b)
    for (std::size_t c = 0; c < is.c; ++c)
      for (std::size_t i = 0; i < s; ++i)
        for (std::size_t j = 0; j < s; ++j) {
          const double* ip = x.plane(b, c);
          double* op = out.plane(b, c * s * s + i * s + j);
          for (std::size_t y = 0; y < os.h; ++y)
            for (std::size_t xx = 0; xx < os.w; ++xx) op[y * os.w + xx] = ip[(y * s + i) * is.w + xx * s + j];
        }
  return out;
}

inline Var pixel_shuffle(const Var& x, std::size_t s) {
  return x.tape().record(pixel_shuffle(x.value(), s), {x.id()}, [s](const Tensor& g, std::span<Tensor* const> gi) {
    *gi[0] += pixel_unshuffle(g, s);
  });
}

inline Var pixel_unshuffle(const Var& x, std::size_t s) {
  return x.tape().record(pixel_unshuffle(x.value(), s), {x.id()}, [s](const Tensor& g, std::span<Tensor* const> gi) {
    *gi[0] += pixel_shuffle(g, s);
  });
}

/// Stride-2 2x2 average pooling.
inline Tensor avg_pool2(const Tensor& x) {
  const Shape is = x.shape();
  detail::require(is.h % 2 == 0 && is.w % 2 == 0, "avg_pool2: odd spatial size " + is.str());
  const Shape os{is.n, is.c, is.h / 2, is.w / 2};
  Tensor out(os);
  for (std::size_t b = 0; b < is.n; ++b)
    for (std::size_t c = 0; c < is.c; ++c) {
      const double* ip = x.plane(b, c);
      double* op = out.plane(b, c);
      for (std::size_t y = 0; y < os.h; ++y)
        for (std::size_t xx = 0; xx < os.w; ++xx) {
          const double* p = ip + 2 * y * is.w + 2 * xx;
          op[y * os.w + xx] = 0.25 * (p[0] + p[1] + p[is.w] + p[is.w + 1]);
        }
    }
  return out;
}

inline Var avg_pool2(const Var& x) {
  return x.tape().record(avg_pool2(x.value()), {x.id()}, [](const Tensor& g, std::span<Tensor* const> gi) {
    const Shape os = g.shape();
    const std::size_t iw = os.w * 2;
    for (std::size_t b = 0; b < os.n; ++b)
      for (std::size_t c = 0; c < os.c; ++c) {
        const double* gp = g.plane(b, c);
        double* dst = gi[0]->plane(b, c);
        for (std::size_t y = 0; y < os.h; ++y)
          for (std::size_t xx = 0; xx < os.w; ++xx) {
            const double v = 0.25 * gp[y * os.w + xx];
            double* p = dst + 2 * y * iw + 2 * xx;
            p[0] += v;
            p[1] += v;
            p[iw] += v;
            p[iw + 1] += v;
          }
      }
  });
}

/// Nearest-neighbour upsampling by an integer factor.
inline Tensor upsample_nearest(const Tensor& x, std::size_t s) {
  const Shape is = x.shape();
  const Shape os{is.n, is.c, is.h * s, is.w * s};
  Tensor out(os);
  for (std::size_t b = 0; b < is.n; ++b)
    for (std::size_t c = 0; c < is.c; ++c) {
      const double* ip = x.plane(b, c);
      double* op = out.plane(b, c);
      for (std::size_t y = 0; y < os.h; ++y)
        for (std::size_t xx = 0; xx < os.w; ++xx) op[y * os.w + xx] = ip[(y / s) * is.w + xx / s];
    }
  return out;
}

inline Var upsample_nearest(const Var& x, std::size_t s) {
  return x.tape().record(upsample_nearest(x.value(), s), {x.id()}, [s](const Tensor& g, std::span<Tensor* const> gi) {
    const Shape os = g.shape();
    const std::size_t iw = os.w / s;
    for (std::size_t b = 0; b < os.n; ++b)
      for (std::size_t c = 0; c < os.c; ++c) {
        const double* gp = g.plane(b, c);
        double* dst = gi[0]->plane(b, c);
        for (std::size_t y = 0; y < os.h; ++y)
          for (std::size_t xx = 0; xx < os.w; ++xx) dst[(y / s) * iw + xx / s] += gp[y * os.w + xx];
      }
  });
}

}  // namespace frequnet
