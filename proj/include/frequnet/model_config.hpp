#pragma once

#include <cstddef>
#include <string>

#include "frequnet/error.hpp"
#include "frequnet/spectral.hpp"
#include "frequnet/wavelet.hpp"

namespace frequnet {

/// Ablation switches. All on is the full architecture.
struct Switches {
  bool flc = true;               // Fourier low-pass stage inside the encoder downsampling
  bool db_down = true;           // wavelet downsampling (off: 2x2 average pooling)
  bool sld = true;               // learnable decoder upsampling (off: nearest + 1x1)
  bool fal = true;               // frequency-aware loss term
  bool deep_supervision = true;  // auxiliary heads on coarse decoder stages

  friend bool operator==(const Switches&, const Switches&) = default;
};

enum class SldMode {
  learnable,  // both deformable pathways with learned offsets
  baseline,   // same pathways with offsets forced to zero (bilinear / plain shuffle)
};

struct ModelConfig {
  std::size_t in_channels = 1;
  std::size_t classes = 3;
  std::size_t depth = 4;
  std::size_t base_width = 8;
  int wavelet_order = 4;
  double tau = 0.25;
  SubbandPolicy subband_policy = SubbandPolicy::ll_only;
  std::size_t groups = 4;
  std::size_t scale = 2;
  Switches switches;
  double leaky_slope = 0.01;
  double norm_eps = 1e-5;
  SldMode sld_mode = SldMode::learnable;

  WaveletSpec wavelet() const { return WaveletSpec::daubechies(wavelet_order); }

  /// Spatial sizes must be divisible by this.
  std::size_t size_multiple() const { return std::size_t{1} << depth; }

  void validate() const {
    if (depth < 1 || depth > 8) throw ConfigError("model.depth must be in 1..8, got " + std::to_string(depth));
    if (base_width < 1) throw ConfigError("model.base_width must be positive");
    if (classes < 2) throw ConfigError("classes must be at least 2, got " + std::to_string(classes));
    if (in_channels < 1) throw ConfigError("model.in_channels must be positive");
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("model.tau must lie in (0, 1), got " + std::to_string(tau));
    if (scale != 2) throw ConfigError("model.scale must be 2 (decoder stages double resolution)");
    if (groups < 1) throw ConfigError("model.groups must be positive");
    (void)wavelet();
    if (switches.sld) {
      for (std::size_t j = 1; j <= depth; ++j) {
        const std::size_t carry = base_width << j;
        if (carry % groups != 0) {
          throw ConfigError("model.groups = " + std::to_string(groups) + " must divide every decoder input width (" +
                            std::to_string(carry) + ")");
        }
        if (carry % (scale * scale) != 0) {
          throw ConfigError("decoder input width " + std::to_string(carry) + " must be divisible by scale^2 = " +
                            std::to_string(scale * scale) + "; increase model.base_width");
        }
      }
    }
  }
};

}  // namespace frequnet
