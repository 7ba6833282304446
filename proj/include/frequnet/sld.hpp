#pragma once

// Spatial learnable decoder: two deformable upsampling pathways fused by
// per-pixel softmax weights.
//
// Offsets follow O = I + 1/2 * sigmoid(linear_1(X)) * tanh(linear_2(X)), so
// every sampling position stays within 0.5 (normalised units) of the base grid.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>

#include "frequnet/encoder.hpp"
#include "frequnet/model_config.hpp"
#include "frequnet/ops.hpp"
#include "frequnet/params.hpp"

namespace frequnet {

struct UpsampleConfig {
  std::size_t scale = 2;
  std::size_t groups = 4;
};

/// Base grid of shape (B, 2g, h, w): channel 2j holds the normalised x
/// coordinate of each output pixel centre, channel 2j+1 the y coordinate
/// (align-corners-false: pixel i -> (2i+1)/n - 1).
inline Tensor base_grid(std::size_t batch, std::size_t groups, std::size_t h, std::size_t w) {
  Tensor g(Shape{batch, 2 * groups, h, w});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < groups; ++j) {
      double* gx = g.plane(b, 2 * j);
      double* gy = g.plane(b, 2 * j + 1);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          gx[y * w + x] = (2.0 * static_cast<double>(x) + 1.0) / static_cast<double>(w) - 1.0;
          gy[y * w + x] = (2.0 * static_cast<double>(y) + 1.0) / static_cast<double>(h) - 1.0;
        }
    }
  return g;
}

namespace detail {

struct BilinearTap {
  std::size_t x0, x1, y0, y1;
  double tx, ty;
  double dix, diy;  // d(pixel coord)/d(normalised coord); 0 when clamped
};

inline BilinearTap bilinear_tap(double gx, double gy, std::size_t w, std::size_t h) {
  const double W = static_cast<double>(w), H = static_cast<double>(h);
  double ix = ((gx + 1.0) * W - 1.0) / 2.0;
  double iy = ((gy + 1.0) * H - 1.0) / 2.0;
  double dix = W / 2.0, diy = H / 2.0;
  if (ix <= 0.0) { ix = 0.0; dix = 0.0; }
  if (ix >= W - 1.0) { ix = W - 1.0; dix = 0.0; }
  if (iy <= 0.0) { iy = 0.0; diy = 0.0; }
  if (iy >= H - 1.0) { iy = H - 1.0; diy = 0.0; }
  BilinearTap t{};
  t.x0 = static_cast<std::size_t>(std::floor(ix));
  t.y0 = static_cast<std::size_t>(std::floor(iy));
  t.x1 = std::min(t.x0 + 1, w - 1);
  t.y1 = std::min(t.y0 + 1, h - 1);
  t.tx = ix - static_cast<double>(t.x0);
  t.ty = iy - static_cast<double>(t.y0);
  t.dix = dix;
  t.diy = diy;
  return t;
}

inline void check_grid(const Shape& xs, const Shape& gs, std::size_t groups) {
  require(groups >= 1 && xs.c % groups == 0,
          "grid_sample: channels " + std::to_string(xs.c) + " not divisible by groups " + std::to_string(groups));
  require(gs.n == xs.n && gs.c == 2 * groups,
          "grid_sample: grid " + gs.str() + " incompatible with input " + xs.str() + " and " +
              std::to_string(groups) + " groups");
}

}  // namespace detail

/// Grouped bilinear sampling. Channels of group j are sampled at the
/// coordinates in grid channels (2j, 2j+1). Coordinates beyond the image are
/// clamped to the border.
inline Tensor grid_sample(const Tensor& x, const Tensor& grid, std::size_t groups = 1) {
  const Shape xs = x.shape(), gs = grid.shape();
  detail::check_grid(xs, gs, groups);
  const std::size_t cpg = xs.c / groups;
  Tensor out(Shape{xs.n, xs.c, gs.h, gs.w});
  for (std::size_t b = 0; b < xs.n; ++b)
    for (std::size_t j = 0; j < groups; ++j) {
      const double* gx = grid.plane(b, 2 * j);
      const double* gy = grid.plane(b, 2 * j + 1);
      for (std::size_t p = 0; p < gs.plane(); ++p) {
        const auto t = detail::bilinear_tap(gx[p], gy[p], xs.w, xs.h);
        for (std::size_t c = j * cpg; c < (j + 1) * cpg; ++c) {
          const double* ip = x.plane(b, c);
          const double top = (1.0 - t.tx) * ip[t.y0 * xs.w + t.x0] + t.tx * ip[t.y0 * xs.w + t.x1];
          const double bot = (1.0 - t.tx) * ip[t.y1 * xs.w + t.x0] + t.tx * ip[t.y1 * xs.w + t.x1];
          out.plane(b, c)[p] = (1.0 - t.ty) * top + t.ty * bot;
        }
      }
    }
  return out;
}

inline Var grid_sample(const Var& x, const Var& grid, std::size_t groups = 1) {
  Tape& tape = detail::same_tape(x, grid);
  return tape.record(
      grid_sample(x.value(), grid.value(), groups), {x.id(), grid.id()},
      [tp = &tape, xi = x.id(), gi_id = grid.id(), groups](const Tensor& g, std::span<Tensor* const> gi) {
        const Tensor& xv = tp->value(xi);
        const Tensor& gv = tp->value(gi_id);
        const Shape xs = xv.shape(), gs = gv.shape();
        const std::size_t cpg = xs.c / groups;
        for (std::size_t b = 0; b < xs.n; ++b)
          for (std::size_t j = 0; j < groups; ++j) {
            const double* gx = gv.plane(b, 2 * j);
            const double* gy = gv.plane(b, 2 * j + 1);
            for (std::size_t p = 0; p < gs.plane(); ++p) {
              const auto t = detail::bilinear_tap(gx[p], gy[p], xs.w, xs.h);
              const std::size_t i00 = t.y0 * xs.w + t.x0, i01 = t.y0 * xs.w + t.x1;
              const std::size_t i10 = t.y1 * xs.w + t.x0, i11 = t.y1 * xs.w + t.x1;
              double dtx = 0.0, dty = 0.0;
              for (std::size_t c = j * cpg; c < (j + 1) * cpg; ++c) {
                const double go = g.plane(b, c)[p];
                if (gi[0]) {
                  double* dx = gi[0]->plane(b, c);
                  dx[i00] += go * (1.0 - t.tx) * (1.0 - t.ty);
                  dx[i01] += go * t.tx * (1.0 - t.ty);
                  dx[i10] += go * (1.0 - t.tx) * t.ty;
                  dx[i11] += go * t.tx * t.ty;
                }
                const double* ip = xv.plane(b, c);
                dtx += go * ((1.0 - t.ty) * (ip[i01] - ip[i00]) + t.ty * (ip[i11] - ip[i10]));
                dty += go * ((1.0 - t.tx) * (ip[i10] - ip[i00]) + t.tx * (ip[i11] - ip[i01]));
              }
              if (gi[1]) {
                gi[1]->plane(b, 2 * j)[p] += dtx * t.dix;
                gi[1]->plane(b, 2 * j + 1)[p] += dty * t.diy;
              }
            }
          }
      });
}

// ---------------------------------------------------------------------------
// Offset field shared by both pathways

/// 1/2 * sigmoid(linear_1(x)) * tanh(linear_2(x)), magnitude strictly below 0.5.
inline Var offset_field(const Scope& p, const Var& x) {
  Var gate = sigmoid(linear(x, p("gate.weight"), p("gate.bias")));
  Var mag = tanh(linear(x, p("offset.weight"), p("offset.bias")));
  return scale(mul(gate, mag), 0.5);
}

inline void declare_offset_field(ParamLayout& layout, const std::string& prefix, std::size_t cin,
                                 std::size_t cout) {
  layout.conv(prefix + ".gate", cout, cin, 1, /*zero=*/true);
  layout.conv(prefix + ".offset", cout, cin, 1, /*zero=*/true);
}

/// Group count used by the exchange pathway (it samples C/s^2 channels).
inline std::size_t exchange_groups(std::size_t channels, const UpsampleConfig& up) {
  return std::gcd(up.groups, channels / (up.scale * up.scale));
}

// ---------------------------------------------------------------------------
// Native-space dynamic sampling pathway (F1)

inline void declare_native_pathway(ParamLayout& layout, const std::string& prefix, std::size_t channels,
                                   const UpsampleConfig& up) {
  declare_offset_field(layout, prefix, channels, 2 * up.groups * up.scale * up.scale);
}

inline Var native_space_pathway(const Scope& p, const Var& x, const UpsampleConfig& up,
                                SldMode mode = SldMode::learnable) {
  const Shape s = x.shape();
  detail::require(s.c % up.groups == 0, "native_space_pathway: channels " + std::to_string(s.c) +
                                            " not divisible by groups " + std::to_string(up.groups));
  Tape& tape = x.tape();
  Var grid = tape.constant(base_grid(s.n, up.groups, s.h * up.scale, s.w * up.scale));
  if (mode == SldMode::learnable) grid = add(grid, pixel_shuffle(offset_field(p, x), up.scale));
  return grid_sample(x, grid, up.groups);
}

// ---------------------------------------------------------------------------
// Space-channel exchange sampling pathway (F2)

inline void declare_exchange_pathway(ParamLayout& layout, const std::string& prefix, std::size_t channels,
                                     const UpsampleConfig& up) {
  const std::size_t shuffled = channels / (up.scale * up.scale);
  declare_offset_field(layout, prefix, shuffled, 2 * exchange_groups(channels, up));
  layout.conv(prefix + ".proj", channels, shuffled, 1);
}

inline Var space_channel_pathway(const Scope& p, const Var& x, const UpsampleConfig& up,
                                 SldMode mode = SldMode::learnable) {
  const Shape s = x.shape();
  const std::size_t s2 = up.scale * up.scale;
  detail::require(s.c % s2 == 0, "space_channel_pathway: channels " + std::to_string(s.c) +
                                     " not divisible by scale^2 = " + std::to_string(s2));
  detail::require(s.c % up.groups == 0, "space_channel_pathway: channels " + std::to_string(s.c) +
                                            " not divisible by groups " + std::to_string(up.groups));
  Var shuffled = pixel_shuffle(x, up.scale);
  Var sampled = shuffled;
  if (mode == SldMode::learnable) {
    const std::size_t g = exchange_groups(s.c, up);
    const Shape ss = shuffled.shape();
    Var grid = add(x.tape().constant(base_grid(ss.n, g, ss.h, ss.w)), offset_field(p, shuffled));
    sampled = grid_sample(shuffled, grid, g);
  }
  return conv1x1(sampled, p("proj.weight"), p("proj.bias"));
}

// ---------------------------------------------------------------------------
// Adaptive fusion

inline void declare_adaptive_fuse(ParamLayout& layout, const std::string& prefix, std::size_t channels) {
  layout.conv(prefix, 2, 2 * channels, 3, /*zero=*/true);
}

/// Per-pixel convex combination w1*f1 + w2*f2 with (w1, w2) = softmax(conv3x3([f1, f2])).
inline Var adaptive_fuse(const Scope& p, const Var& f1, const Var& f2) {
  if (f1.shape() != f2.shape()) {
    throw DimensionError("adaptive_fuse: shapes differ: " + f1.shape().str() + " vs " + f2.shape().str());
  }
  const Var both[] = {f1, f2};
  Var logits = conv2d(concat_channel(std::span<const Var>(both)), p("weight"), p("bias"), 1, 1);
  Var w = softmax_channel(logits);
  return add(mul_channel_broadcast(f1, slice_channels(w, 0, 1)), mul_channel_broadcast(f2, slice_channels(w, 1, 1)));
}

/// Fusion weights alone, for inspection.
inline Tensor fusion_weights(const Scope& p, const Var& f1, const Var& f2) {
  const Var both[] = {f1, f2};
  return softmax_channel(conv2d(concat_channel(std::span<const Var>(both)), p("weight"), p("bias"), 1, 1)).value();
}

// ---------------------------------------------------------------------------
// Decoder stage

/// Carry has 2C channels at half resolution, skip has C channels.
inline void declare_decode_stage(ParamLayout& layout, const std::string& prefix, std::size_t skip_channels,
                                 const ModelConfig& cfg) {
  const std::size_t carry = 2 * skip_channels;
  const UpsampleConfig up{cfg.scale, cfg.groups};
  if (cfg.switches.sld) {
    declare_native_pathway(layout, prefix + ".up.native", carry, up);
    declare_exchange_pathway(layout, prefix + ".up.exchange", carry, up);
    declare_adaptive_fuse(layout, prefix + ".up.fuse", carry);
  }
  layout.conv(prefix + ".up.reduce", skip_channels, carry, 1);
  declare_conv_block(layout, prefix + ".block", 2 * skip_channels, skip_channels);
}

/// Upsampled carry reduced to the skip width.
inline Var upsample_stage(const Scope& p, const Var& carry, const ModelConfig& cfg) {
  Var up;
  if (cfg.switches.sld) {
    const UpsampleConfig uc{cfg.scale, cfg.groups};
    Var f1 = native_space_pathway(p.sub("native"), carry, uc, cfg.sld_mode);
    Var f2 = space_channel_pathway(p.sub("exchange"), carry, uc, cfg.sld_mode);
    up = adaptive_fuse(p.sub("fuse"), f1, f2);
  } else {
    up = upsample_nearest(carry, cfg.scale);
  }
  return conv1x1(up, p("reduce.weight"), p("reduce.bias"));
}

inline Var decode_stage(const Scope& p, const Var& carry, const Var& skip, const ModelConfig& cfg) {
  Var up = upsample_stage(p.sub("up"), carry, cfg);
  if (up.shape().h != skip.shape().h || up.shape().w != skip.shape().w || up.shape().n != skip.shape().n) {
    throw DimensionError("decode_stage: upsampled carry " + up.shape().str() + " does not match skip " +
                         skip.shape().str());
  }
  const Var parts[] = {up, skip};
  return conv_block(p.sub("block"), concat_channel(std::span<const Var>(parts)), cfg);
}

}  // namespace frequnet
