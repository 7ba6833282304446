#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "frequnet/error.hpp"
#include "frequnet/ops.hpp"
#include "frequnet/tape.hpp"
#include "frequnet/tensor.hpp"
#include "frequnet/wavelet.hpp"

namespace frequnet {

struct LossWeights {
  double dice = 1.0;
  double topk = 1.0;
  double freq = 0.5;
  double topk_percent = 10.0;  // k, in percent of pixels

  void validate() const {
    if (dice < 0.0 || topk < 0.0 || freq < 0.0) throw ConfigError("loss weights must be non-negative");
    if (dice == 0.0 && topk == 0.0 && freq == 0.0) throw ConfigError("at least one loss weight must be positive");
    if (!(topk_percent > 0.0 && topk_percent <= 100.0)) {
      throw ConfigError("loss.topk_percent must lie in (0, 100], got " + std::to_string(topk_percent));
    }
  }
};

/// Per-pixel cross-entropy form used inside the Top-K loss.
enum class CeMode {
  standard,  // -log softmax at the true class
  literal,   // -(1/C) sum_j log softmax_j, ignoring the label
};

inline std::string to_string(CeMode m) { return m == CeMode::standard ? "standard" : "literal"; }
inline CeMode parse_ce_mode(const std::string& s) {
  if (s == "standard") return CeMode::standard;
  if (s == "literal") return CeMode::literal;
  throw ConfigError("loss.ce_mode must be 'standard' or 'literal', got '" + s + "'");
}

struct LossReport {
  double total = 0.0;
  double dice_term = 0.0;
  double topk_term = 0.0;
  double freq_term = 0.0;
  double aux_term = 0.0;  // weighted deep-supervision contribution, 0 without aux heads
  std::vector<double> class_dice;
};

constexpr double kDiceEps = 1e-5;

inline void check_labels(const LabelMap& labels, std::size_t classes) {
  for (std::int32_t v : labels.data) {
    if (v < 0 || static_cast<std::size_t>(v) >= classes) {
      throw DataError("label " + std::to_string(v) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

inline Tensor one_hot(const LabelMap& labels, std::size_t classes) {
  check_labels(labels, classes);
  Tensor out(Shape{labels.n, classes, labels.h, labels.w});
  for (std::size_t b = 0; b < labels.n; ++b)
    for (std::size_t y = 0; y < labels.h; ++y)
      for (std::size_t x = 0; x < labels.w; ++x)
        out.at(b, static_cast<std::size_t>(labels.at(b, y, x)), y, x) = 1.0;
  return out;
}

// ---------------------------------------------------------------------------
// Frequency-aware loss: mean L1 gap over the LH, HL, HH subbands.

inline double freq_aware_loss(const Tensor& prob, const Tensor& onehot, const WaveletSpec& spec) {
  prob.require_same_shape(onehot, "freq_aware_loss");
  const auto d = dwt2(sub(prob, onehot), spec);
  double total = 0.0;
  for (const Tensor* band : {&d.LH, &d.HL, &d.HH}) {
    double s = 0.0;
    for (double v : band->data()) s += std::abs(v);
    total += s / static_cast<double>(band->size());
  }
  return total / 3.0;
}

inline Var freq_aware_loss(const Var& prob, const Tensor& onehot, const WaveletSpec& spec) {
  prob.shape() == onehot.shape() ? void() : throw DimensionError("freq_aware_loss: prediction " +
                                                                 prob.shape().str() + " vs target " +
                                                                 onehot.shape().str());
  const std::size_t k = prob.shape().c;
  Var diff = sub(prob, prob.tape().constant(onehot));
  Var packed = dwt2_packed(diff, spec);
  // the three detail subbands have equal size, so the mean over their union
  // is the average of the per-subband means
  return mean_abs(slice_channels(packed, k, 3 * k));
}

// ---------------------------------------------------------------------------
// Multi-class soft Dice: -(2/K) sum_k (I_k + eps) / (S_k + eps).

struct DiceParts {
  std::vector<double> inter, denom;
};

inline DiceParts dice_parts(const Tensor& prob, const Tensor& onehot) {
  prob.require_same_shape(onehot, "dice_loss");
  const Shape s = prob.shape();
  DiceParts d{std::vector<double>(s.c, 0.0), std::vector<double>(s.c, 0.0)};
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* u = prob.plane(b, c);
      const double* v = onehot.plane(b, c);
      for (std::size_t p = 0; p < s.plane(); ++p) {
        d.inter[c] += u[p] * v[p];
        d.denom[c] += u[p] + v[p];
      }
    }
  return d;
}

/// Per-class soft Dice 2(I+eps)/(S+eps).
inline std::vector<double> soft_dice_per_class(const Tensor& prob, const Tensor& onehot, double eps = kDiceEps) {
  const DiceParts d = dice_parts(prob, onehot);
  std::vector<double> out(d.inter.size());
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = 2.0 * (d.inter[c] + eps) / (d.denom[c] + eps);
  return out;
}

inline double dice_loss(const Tensor& prob, const Tensor& onehot, double eps = kDiceEps) {
  const DiceParts d = dice_parts(prob, onehot);
  const double k = static_cast<double>(d.inter.size());
  double s = 0.0;
  for (std::size_t c = 0; c < d.inter.size(); ++c) s += (d.inter[c] + eps) / (d.denom[c] + eps);
  return -(2.0 / k) * s;
}

inline Var dice_loss(const Var& prob, const Tensor& onehot, double eps = kDiceEps) {
  const DiceParts d = dice_parts(prob.value(), onehot);
  const double value = dice_loss(prob.value(), onehot, eps);
  return prob.tape().record(Tensor::scalar(value), {prob.id()},
                            [d, onehot, eps](const Tensor& g, std::span<Tensor* const> gi) {
                              const Shape s = onehot.shape();
                              const double k = static_cast<double>(s.c);
                              for (std::size_t c = 0; c < s.c; ++c) {
                                const double den = d.denom[c] + eps;
                                const double a = -(2.0 / k) / den;
                                const double bterm = (2.0 / k) * (d.inter[c] + eps) / (den * den);
                                for (std::size_t b = 0; b < s.n; ++b) {
                                  const double* v = onehot.plane(b, c);
                                  double* dst = gi[0]->plane(b, c);
                                  for (std::size_t p = 0; p < s.plane(); ++p) dst[p] += g[0] * (a * v[p] + bterm);
                                }
                              }
                            });
}

// ---------------------------------------------------------------------------
// Top-K cross-entropy

inline std::size_t topk_count(std::size_t n, double k_percent) {
  const auto kept = static_cast<std::size_t>(std::floor(static_cast<double>(n) * k_percent / 100.0));
  return std::clamp<std::size_t>(kept, 1, n);
}

/// Per-pixel losses in (b, y, x) order plus the log-softmax used to compute them.
struct PixelCe {
  std::vector<double> loss;
  Tensor log_prob;
};

inline PixelCe pixel_cross_entropy(const Tensor& logits, const LabelMap& labels, CeMode mode) {
  const Shape s = logits.shape();
  if (labels.n != s.n || labels.h != s.h || labels.w != s.w) {
    throw DimensionError("labels " + std::to_string(labels.n) + "x" + std::to_string(labels.h) + "x" +
                         std::to_string(labels.w) + " do not match logits " + s.str());
  }
  check_labels(labels, s.c);
  PixelCe out{std::vector<double>(s.n * s.plane()), Tensor(s)};
  const std::size_t hw = s.plane();
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t p = 0; p < hw; ++p) {
      const std::size_t base = b * s.c * hw + p;
      double m = logits[base];
      for (std::size_t c = 1; c < s.c; ++c) m = std::max(m, logits[base + c * hw]);
      double z = 0.0;
      for (std::size_t c = 0; c < s.c; ++c) z += std::exp(logits[base + c * hw] - m);
      const double lse = m + std::log(z);
      double all = 0.0;
      for (std::size_t c = 0; c < s.c; ++c) {
        const double lp = logits[base + c * hw] - lse;
        out.log_prob[base + c * hw] = lp;
        all += lp;
      }
      const auto label = static_cast<std::size_t>(labels.data[b * hw + p]);
      out.loss[b * hw + p] = mode == CeMode::standard ? -out.log_prob[base + label * hw] : -all / static_cast<double>(s.c);
    }
  return out;
}

/// Indices of the `count` largest losses; ties broken by lower index.
inline std::vector<std::size_t> hardest_indices(const std::vector<double>& loss, std::size_t count) {
  std::vector<std::size_t> idx(loss.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count), idx.end(),
                    [&](std::size_t a, std::size_t b) { return loss[a] != loss[b] ? loss[a] > loss[b] : a < b; });
  idx.resize(count);
  return idx;
}

inline double topk_ce_loss(const Tensor& logits, const LabelMap& labels, double k_percent,
                           CeMode mode = CeMode::standard) {
  const PixelCe ce = pixel_cross_entropy(logits, labels, mode);
  const std::size_t count = topk_count(ce.loss.size(), k_percent);
  double s = 0.0;
  for (std::size_t i : hardest_indices(ce.loss, count)) s += ce.loss[i];
  return s / static_cast<double>(count);
}

inline Var topk_ce_loss(const Var& logits, const LabelMap& labels, double k_percent, CeMode mode = CeMode::standard) {
  PixelCe ce = pixel_cross_entropy(logits.value(), labels, mode);
  const std::size_t count = topk_count(ce.loss.size(), k_percent);
  std::vector<std::size_t> chosen = hardest_indices(ce.loss, count);
  double s = 0.0;
  for (std::size_t i : chosen) s += ce.loss[i];
  return logits.tape().record(
      Tensor::scalar(s / static_cast<double>(count)), {logits.id()},
      [lp = std::move(ce.log_prob), chosen = std::move(chosen), labels, mode, count](const Tensor& g,
                                                                                     std::span<Tensor* const> gi) {
        const Shape s = lp.shape();
        const std::size_t hw = s.plane();
        const double scale = g[0] / static_cast<double>(count);
        for (std::size_t i : chosen) {
          const std::size_t b = i / hw, p = i % hw;
          const std::size_t base = b * s.c * hw + p;
          const auto label = static_cast<std::size_t>(labels.data[i]);
          for (std::size_t c = 0; c < s.c; ++c) {
            const double prob = std::exp(lp[base + c * hw]);
            const double target = mode == CeMode::standard ? (c == label ? 1.0 : 0.0) : 1.0 / static_cast<double>(s.c);
            (*gi[0])[base + c * hw] += scale * (prob - target);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Weighted total

struct LossTerms {
  Var total;
  LossReport report;
};

inline LossTerms total_loss(const Var& logits, const LabelMap& labels, const LossWeights& w, const WaveletSpec& spec,
                            CeMode mode = CeMode::standard) {
  const std::size_t k = logits.shape().c;
  const Tensor target = one_hot(labels, k);
  Var prob = softmax_channel(logits);
  Var dice = dice_loss(prob, target);
  Var topk = topk_ce_loss(logits, labels, w.topk_percent, mode);
  Var freq = freq_aware_loss(prob, target, spec);
  const Var terms[] = {dice, topk, freq};
  const double weights[] = {w.dice, w.topk, w.freq};
  Var total = weighted_sum(terms, weights);
  LossReport r;
  r.total = total.value().item();
  r.dice_term = dice.value().item();
  r.topk_term = topk.value().item();
  r.freq_term = freq.value().item();
  r.class_dice = soft_dice_per_class(prob.value(), target);
  return {total, r};
}

}  // namespace frequnet
