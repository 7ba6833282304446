#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "frequnet/encoder.hpp"
#include "frequnet/losses.hpp"
#include "frequnet/model_config.hpp"
#include "frequnet/params.hpp"
#include "frequnet/sld.hpp"

namespace frequnet {

// Parameter paths: stem, enc{i}, bottleneck, dec{j}, aux{j}, head.
// Stage i (1-based) works at width base * 2^(i-1).

inline std::size_t stage_width(const ModelConfig& cfg, std::size_t i) { return cfg.base_width << (i - 1); }

inline ParamLayout network_layout(const ModelConfig& cfg) {
  cfg.validate();
  ParamLayout layout;
  declare_conv_block(layout, "stem", cfg.in_channels, cfg.base_width);
  for (std::size_t i = 1; i <= cfg.depth; ++i) {
    declare_encode_stage(layout, "enc" + std::to_string(i), stage_width(cfg, i), cfg);
  }
  const std::size_t deepest = cfg.base_width << cfg.depth;
  declare_conv_block(layout, "bottleneck", deepest, deepest);
  for (std::size_t j = cfg.depth; j >= 1; --j) {
    declare_decode_stage(layout, "dec" + std::to_string(j), stage_width(cfg, j), cfg);
    if (cfg.switches.deep_supervision && j >= 2) {
      layout.conv("aux" + std::to_string(j), cfg.classes, stage_width(cfg, j), 1);
    }
  }
  layout.conv("head", cfg.classes, cfg.base_width, 1);
  return layout;
}

inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  return init_params(network_layout(cfg), seed);
}

struct ForwardResult {
  Var logits;
  std::vector<Var> aux;  // coarse to fine
};

inline void check_input(const Shape& s, const ModelConfig& cfg) {
  if (s.c != cfg.in_channels) {
    throw ConfigError("input has " + std::to_string(s.c) + " channels, model.in_channels is " +
                      std::to_string(cfg.in_channels));
  }
  const std::size_t m = cfg.size_multiple();
  if (s.h % m != 0 || s.w % m != 0) {
    throw ConfigError("input " + std::to_string(s.h) + "x" + std::to_string(s.w) + " must be a multiple of " +
                      std::to_string(m) + " (2^model.depth) in both dimensions");
  }
}

inline ForwardResult forward(const ParamBinding& params, const Var& x, const ModelConfig& cfg) {
  check_input(x.shape(), cfg);
  const Scope root(params, "");
  Var h = conv_block(root.sub("stem"), x, cfg);
  std::vector<Var> skips;
  for (std::size_t i = 1; i <= cfg.depth; ++i) {
    auto out = encode_stage(root.sub("enc" + std::to_string(i)), h, cfg);
    skips.push_back(out.skip);
    h = out.carry;
  }
  h = conv_block(root.sub("bottleneck"), h, cfg);
  ForwardResult result;
  for (std::size_t j = cfg.depth; j >= 1; --j) {
    h = decode_stage(root.sub("dec" + std::to_string(j)), h, skips[j - 1], cfg);
    if (cfg.switches.deep_supervision && j >= 2) {
      const std::string name = "aux" + std::to_string(j);
      result.aux.push_back(conv1x1(h, root(name + ".weight"), root(name + ".bias")));
    }
  }
  result.logits = conv1x1(h, root("head.weight"), root("head.bias"));
  return result;
}

/// Inference-only forward on plain tensors.
inline Tensor predict_logits(const ModelParams& params, const Tensor& x, const ModelConfig& cfg) {
  Tape tape;
  ParamBinding binding(tape, params, /*requires_grad=*/false);
  return forward(binding, tape.constant(x), cfg).logits.value();
}

inline LabelMap argmax_labels(const Tensor& logits) {
  const Shape s = logits.shape();
  LabelMap out(s.n, s.h, s.w);
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t p = 0; p < s.plane(); ++p) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < s.c; ++c)
        if (logits.plane(b, c)[p] > logits.plane(b, best)[p]) best = c;
      out.data[b * s.plane() + p] = static_cast<std::int32_t>(best);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Deep supervision

/// Nearest-neighbour downsampling: each output pixel takes the top-left label of its block.
inline LabelMap downsample_labels(const LabelMap& labels, std::size_t h, std::size_t w) {
  if (h == 0 || w == 0 || labels.h % h != 0 || labels.w % w != 0) {
    throw DimensionError("cannot downsample labels " + std::to_string(labels.h) + "x" + std::to_string(labels.w) +
                         " to " + std::to_string(h) + "x" + std::to_string(w));
  }
  const std::size_t fy = labels.h / h, fx = labels.w / w;
  LabelMap out(labels.n, h, w);
  for (std::size_t b = 0; b < labels.n; ++b)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out.data[(b * h + y) * w + x] = labels.at(b, y * fy, x * fx);
  return out;
}

/// Aux head j (0 = coarsest) carries weight 2^-(j+1) and no frequency term.
inline double aux_weight(std::size_t j) { return std::ldexp(1.0, -static_cast<int>(j + 1)); }

inline LossTerms supervised_loss(const Var& logits, const std::vector<Var>& aux, const LabelMap& labels,
                                 const LossWeights& w, const WaveletSpec& spec, CeMode mode = CeMode::standard) {
  LossTerms main = total_loss(logits, labels, w, spec, mode);
  if (aux.empty()) return main;
  LossWeights aw = w;
  aw.freq = 0.0;
  std::vector<Var> terms{main.total};
  std::vector<double> weights{1.0};
  double aux_total = 0.0;
  for (std::size_t j = 0; j < aux.size(); ++j) {
    const Shape s = aux[j].shape();
    LossTerms t = total_loss(aux[j], downsample_labels(labels, s.h, s.w), aw, spec, mode);
    terms.push_back(t.total);
    weights.push_back(aux_weight(j));
    aux_total += aux_weight(j) * t.report.total;
  }
  Var total = weighted_sum(terms, weights);
  main.report.aux_term = aux_total;
  main.report.total = total.value().item();
  main.total = total;
  return main;
}

// ---------------------------------------------------------------------------
// Hard Dice metrics

struct MetricsReport {
  std::vector<double> dice;            // per class, including background
  std::vector<std::uint64_t> pred_count, true_count, intersection;
  std::vector<bool> absent;            // class absent in both prediction and truth
  double dice_gap = 0.0;               // over present foreground classes
  std::string aggregation = "global";  // intersections and sizes summed over the split

  double foreground_dice(std::size_t k) const { return dice.at(k); }
};

/// Accumulates global counts over many samples before computing Dice.
class DiceAccumulator {
 public:
  explicit DiceAccumulator(std::size_t classes)
      : classes_(classes), pred_(classes, 0), true_(classes, 0), inter_(classes, 0) {}

  void add(const LabelMap& pred, const LabelMap& truth) {
    if (pred.n != truth.n || pred.h != truth.h || pred.w != truth.w) {
      throw DimensionError("hard_dice: prediction and label maps differ in shape");
    }
    check_labels(pred, classes_);
    check_labels(truth, classes_);
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
      const auto p = static_cast<std::size_t>(pred.data[i]);
      const auto t = static_cast<std::size_t>(truth.data[i]);
      ++pred_[p];
      ++true_[t];
      if (p == t) ++inter_[p];
    }
  }

  MetricsReport report() const {
    MetricsReport r;
    r.pred_count = pred_;
    r.true_count = true_;
    r.intersection = inter_;
    double lo = 1.0, hi = 0.0;
    std::size_t present = 0;
    for (std::size_t k = 0; k < classes_; ++k) {
      const std::uint64_t denom = pred_[k] + true_[k];
      const bool absent = denom == 0;
      r.absent.push_back(absent);
      r.dice.push_back(absent ? 1.0 : 2.0 * static_cast<double>(inter_[k]) / static_cast<double>(denom));
      if (k >= 1 && !absent) {
        ++present;
        lo = std::min(lo, r.dice.back());
        hi = std::max(hi, r.dice.back());
      }
    }
    r.dice_gap = present >= 2 ? hi - lo : 0.0;
    return r;
  }

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> pred_, true_, inter_;
};

inline MetricsReport hard_dice(const LabelMap& pred, const LabelMap& truth, std::size_t classes) {
  DiceAccumulator acc(classes);
  acc.add(pred, truth);
  return acc.report();
}

}  // namespace frequnet
