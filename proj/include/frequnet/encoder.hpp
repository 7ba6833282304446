#pragma once

#include <cstddef>
#include <string>

#include "frequnet/model_config.hpp"
#include "frequnet/ops.hpp"
#include "frequnet/params.hpp"
#include "frequnet/spectral.hpp"
#include "frequnet/wavelet.hpp"

namespace frequnet {

// ---------------------------------------------------------------------------
// Conv block: two rounds of [3x3 conv -> instance norm -> LeakyReLU].

inline void declare_conv_block(ParamLayout& layout, const std::string& prefix, std::size_t cin, std::size_t cout) {
  layout.conv(prefix + ".conv1", cout, cin, 3);
  layout.add(prefix + ".norm1.gamma", Shape{1, cout, 1, 1}, Init::ones);
  layout.add(prefix + ".norm1.beta", Shape{1, cout, 1, 1}, Init::zeros);
  layout.conv(prefix + ".conv2", cout, cout, 3);
  layout.add(prefix + ".norm2.gamma", Shape{1, cout, 1, 1}, Init::ones);
  layout.add(prefix + ".norm2.beta", Shape{1, cout, 1, 1}, Init::zeros);
}

inline Var conv_block(const Scope& p, const Var& x, const ModelConfig& cfg) {
  Var y = x;
  for (const char* r : {"1", "2"}) {
    const std::string conv = std::string("conv") + r, norm = std::string("norm") + r;
    y = conv2d(y, p(conv + ".weight"), p(conv + ".bias"), 1, 1);
    y = instance_norm(y, cfg.norm_eps, p(norm + ".gamma"), p(norm + ".beta"));
    y = leaky_relu(y, cfg.leaky_slope);
  }
  return y;
}

// ---------------------------------------------------------------------------
// Encoder stage

template <typename T>
struct EncoderStageOutput {
  T skip;   // (B, C, H, W)
  T carry;  // (B, 2C, H/2, W/2)
};

/// Stage operating on C channels: the conv block keeps C, the carry has 2C.
inline void declare_encode_stage(ParamLayout& layout, const std::string& prefix, std::size_t channels,
                                 const ModelConfig& cfg) {
  declare_conv_block(layout, prefix + ".block", channels, channels);
  const std::size_t down_in = cfg.switches.db_down ? 4 * channels : channels;
  layout.conv(prefix + ".down", 2 * channels, down_in, 1);
}

/// Downsampling path shared by every switch combination:
///   FLC on,  DB on : flc_block (wavelet -> Fourier low-pass -> wavelet), 4 subbands
///   FLC off, DB on : plain dwt2, 4 subbands
///   FLC on,  DB off: Fourier stage of flc_block, then 2x2 average pooling
///   FLC off, DB off: 2x2 average pooling
/// followed by a 1x1 map to 2C channels.
inline Var downsample(const Scope& p, const Var& skip, const ModelConfig& cfg) {
  const Shape s = skip.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw DimensionError("encode_stage: spatial size must be even, got " + s.str());
  }
  const WaveletSpec spec = cfg.wavelet();
  Var features;
  if (cfg.switches.db_down) {
    features = cfg.switches.flc ? flc_block_packed(skip, cfg.tau, spec, cfg.subband_policy) : dwt2_packed(skip, spec);
  } else {
    Var src = skip;
    if (cfg.switches.flc) {
      Var packed = dwt2_packed(skip, spec);
      if (cfg.subband_policy == SubbandPolicy::ll_only) packed = mask_channels(packed, 0, s.c);
      src = lowpass_filter(idwt2_packed(packed, spec), cfg.tau);
    }
    features = avg_pool2(src);
  }
  return conv1x1(features, p("down.weight"), p("down.bias"));
}

inline EncoderStageOutput<Var> encode_stage(const Scope& p, const Var& x, const ModelConfig& cfg) {
  const Shape s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw DimensionError("encode_stage: spatial size must be even, got " + s.str());
  }
  Var skip = conv_block(p.sub("block"), x, cfg);
  return {skip, downsample(p, skip, cfg)};
}

}  // namespace frequnet
