#pragma once

// Registered finite-difference cases: every tape op, the composite loss and
// a small end-to-end network.

#include <map>
#include <random>
#include <string>
#include <vector>

#include "frequnet/gradcheck.hpp"
#include "frequnet/losses.hpp"
#include "frequnet/network.hpp"
#include "frequnet/sld.hpp"
#include "frequnet/spectral.hpp"
#include "frequnet/wavelet.hpp"

namespace frequnet {

namespace detail {

/// Random values kept at least `gap` away from zero (avoids kinks).
inline Tensor random_away_from_zero(const Shape& s, std::mt19937_64& rng, double gap = 0.05) {
  Tensor t = random_tensor(s, rng);
  for (double& v : t.data()) v = v < 0.0 ? v - gap : v + gap;
  return t;
}

inline LabelMap random_labels(std::size_t n, std::size_t h, std::size_t w, std::size_t classes,
                              std::mt19937_64& rng) {
  LabelMap m(n, h, w);
  for (auto& v : m.data) v = static_cast<std::int32_t>(rng() % classes);
  return m;
}

/// Layout parameters at a random, non-degenerate point: zero-initialised
/// layers get small random values so offsets and fusion weights are generic.
inline ModelParams random_point(const ParamLayout& layout, std::uint64_t seed, double jitter = 0.05) {
  ModelParams p = init_params(layout, seed);
  std::mt19937_64 rng(splitmix64(seed + 1));
  for (auto& [_, t] : p)
    for (double& v : t.data()) v += jitter * (2.0 * uniform01(rng) - 1.0);
  return p;
}

/// Case whose inputs are `extra` followed by every parameter of `layout`.
inline GradcheckCase layout_case(std::string name, const ParamLayout& layout, std::vector<Tensor> extra,
                                 std::function<Var(const Scope&, const std::vector<Var>&)> fn,
                                 std::uint64_t seed, double threshold = 1e-3, std::size_t max_samples = 0) {
  ModelParams params = random_point(layout, seed);
  std::vector<std::string> names = params.names();
  const std::size_t n_extra = extra.size();
  for (const auto& [_, t] : params) extra.push_back(t);
  GradcheckCase c;
  c.name = std::move(name);
  c.inputs = std::move(extra);
  c.threshold = threshold;
  c.max_samples = max_samples;
  c.fn = [names, n_extra, fn](Tape& tape, const std::vector<Var>& v) {
    std::map<std::string, Var> bound;
    for (std::size_t i = 0; i < names.size(); ++i) bound.emplace(names[i], v[n_extra + i]);
    ParamBinding binding(tape, std::move(bound));
    return fn(Scope(binding, ""), std::vector<Var>(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n_extra)));
  };
  return c;
}

}  // namespace detail

/// Network used by the end-to-end case.
inline ModelConfig gradcheck_model_config() {
  ModelConfig cfg;
  cfg.depth = 2;
  cfg.base_width = 4;
  cfg.classes = 3;
  return cfg;
}

inline std::vector<GradcheckCase> default_gradcheck_cases(std::uint64_t seed = 11) {
  using detail::random_away_from_zero;
  using detail::random_tensor;
  std::mt19937_64 rng(seed);
  std::vector<GradcheckCase> cases;
  auto unary = [&](std::string name, Shape s, std::function<Var(const Var&)> f, bool avoid_zero = false) {
    Tensor x = avoid_zero ? random_away_from_zero(s, rng) : random_tensor(s, rng);
    cases.push_back({std::move(name), {x}, [f](Tape&, const std::vector<Var>& v) { return f(v[0]); }});
  };
  auto binary = [&](std::string name, Shape a, Shape b, std::function<Var(const Var&, const Var&)> f) {
    Tensor x = random_tensor(a, rng), y = random_tensor(b, rng);
    cases.push_back({std::move(name), {x, y}, [f](Tape&, const std::vector<Var>& v) { return f(v[0], v[1]); }});
  };

  const Shape s4{2, 4, 8, 8};
  binary("add", s4, s4, [](const Var& a, const Var& b) { return add(a, b); });
  binary("sub", s4, s4, [](const Var& a, const Var& b) { return sub(a, b); });
  binary("mul", s4, s4, [](const Var& a, const Var& b) { return mul(a, b); });
  unary("scale", s4, [](const Var& a) { return scale(a, -1.7); });
  unary("sum", s4, [](const Var& a) { return sum(a); });
  unary("mean", s4, [](const Var& a) { return mean(a); });
  unary("mean_abs", s4, [](const Var& a) { return mean_abs(a); }, true);
  binary("weighted_sum", Shape{1, 1, 1, 1}, Shape{1, 1, 1, 1}, [](const Var& a, const Var& b) {
    const Var xs[] = {a, b};
    const double ws[] = {0.7, -1.3};
    return weighted_sum(xs, ws);
  });
  unary("leaky_relu", s4, [](const Var& a) { return leaky_relu(a, 0.01); }, true);
  unary("sigmoid", s4, [](const Var& a) { return sigmoid(a); });
  unary("tanh", s4, [](const Var& a) { return tanh(a); });
  unary("softmax_channel", s4, [](const Var& a) { return softmax_channel(a); });

  {
    Tensor x = random_tensor(Shape{2, 3, 6, 6}, rng), w = random_tensor(Shape{4, 3, 3, 3}, rng),
           b = random_tensor(Shape{1, 4, 1, 1}, rng);
    cases.push_back({"conv2d", {x, w, b}, [](Tape&, const std::vector<Var>& v) {
                       return conv2d(v[0], v[1], v[2], 1, 1);
                     }});
    cases.push_back({"conv2d_stride2", {x, w, b}, [](Tape&, const std::vector<Var>& v) {
                       return conv2d(v[0], v[1], v[2], 2, 1);
                     }});
  }
  {
    Tensor x = random_tensor(s4, rng), w = random_tensor(Shape{3, 4, 1, 1}, rng),
           b = random_tensor(Shape{1, 3, 1, 1}, rng);
    cases.push_back({"linear", {x, w, b}, [](Tape&, const std::vector<Var>& v) { return linear(v[0], v[1], v[2]); }});
  }
  {
    Tensor x = random_tensor(Shape{2, 3, 5, 5}, rng), gm = random_tensor(Shape{1, 3, 1, 1}, rng),
           bt = random_tensor(Shape{1, 3, 1, 1}, rng);
    cases.push_back({"instance_norm", {x, gm, bt}, [](Tape&, const std::vector<Var>& v) {
                       return instance_norm(v[0], 1e-5, v[1], v[2]);
                     }});
  }
  binary("concat_channel", Shape{2, 2, 4, 4}, Shape{2, 3, 4, 4}, [](const Var& a, const Var& b) {
    const Var xs[] = {a, b};
    return concat_channel(std::span<const Var>(xs));
  });
  unary("slice_channels", s4, [](const Var& a) { return slice_channels(a, 1, 2); });
  binary("mul_channel_broadcast", s4, Shape{2, 1, 8, 8},
         [](const Var& a, const Var& b) { return mul_channel_broadcast(a, b); });
  unary("pixel_shuffle", Shape{2, 8, 4, 4}, [](const Var& a) { return pixel_shuffle(a, 2); });
  unary("pixel_unshuffle", s4, [](const Var& a) { return pixel_unshuffle(a, 2); });
  unary("avg_pool2", s4, [](const Var& a) { return avg_pool2(a); });
  unary("upsample_nearest", Shape{2, 4, 4, 4}, [](const Var& a) { return upsample_nearest(a, 2); });

  for (int order = 1; order <= 4; ++order) {
    const WaveletSpec spec = WaveletSpec::daubechies(order);
    const std::string tag = "db" + std::to_string(order);
    unary("dwt2_" + tag, s4, [spec](const Var& a) { return dwt2_packed(a, spec); });
    unary("idwt2_" + tag, Shape{2, 8, 4, 4}, [spec](const Var& a) { return idwt2_packed(a, spec); });
  }
  unary("lowpass_filter", s4, [](const Var& a) { return lowpass_filter(a, 0.25); });
  unary("lowpass_filter_non_pow2", Shape{1, 2, 6, 10}, [](const Var& a) { return lowpass_filter(a, 0.3); });
  unary("mask_channels", s4, [](const Var& a) { return mask_channels(a, 1, 2); });
  {
    const WaveletSpec db4 = WaveletSpec::daubechies(4);
    unary("flc_block_ll_only", s4,
          [db4](const Var& a) { return flc_block_packed(a, 0.25, db4, SubbandPolicy::ll_only); });
    unary("flc_block_all", s4, [db4](const Var& a) { return flc_block_packed(a, 0.25, db4, SubbandPolicy::all); });
  }

  {
    Tensor x = random_tensor(Shape{2, 4, 5, 6}, rng);
    Tensor grid = random_tensor(Shape{2, 4, 7, 8}, rng, -0.9, 0.9);
    cases.push_back({"grid_sample", {x, grid}, [](Tape&, const std::vector<Var>& v) {
                       return grid_sample(v[0], v[1], 2);
                     }});
  }
  const UpsampleConfig up{2, 4};
  {
    ParamLayout layout;
    declare_native_pathway(layout, "native", 8, up);
    cases.push_back(detail::layout_case(
        "native_space_pathway", layout, {random_tensor(Shape{1, 8, 4, 4}, rng)},
        [up](const Scope& p, const std::vector<Var>& v) { return native_space_pathway(p.sub("native"), v[0], up); },
        seed + 1));
  }
  {
    ParamLayout layout;
    declare_exchange_pathway(layout, "exchange", 8, up);
    cases.push_back(detail::layout_case(
        "space_channel_pathway", layout, {random_tensor(Shape{1, 8, 4, 4}, rng)},
        [up](const Scope& p, const std::vector<Var>& v) { return space_channel_pathway(p.sub("exchange"), v[0], up); },
        seed + 2));
  }
  {
    ParamLayout layout;
    declare_adaptive_fuse(layout, "fuse", 3);
    cases.push_back(detail::layout_case(
        "adaptive_fuse", layout, {random_tensor(Shape{2, 3, 4, 4}, rng), random_tensor(Shape{2, 3, 4, 4}, rng)},
        [](const Scope& p, const std::vector<Var>& v) { return adaptive_fuse(p.sub("fuse"), v[0], v[1]); },
        seed + 3));
  }

  // losses on a 1x2x8x8 instance
  {
    const LabelMap labels = detail::random_labels(1, 8, 8, 2, rng);
    const Tensor target = one_hot(labels, 2);
    const WaveletSpec db4 = WaveletSpec::daubechies(4);
    Tensor logits = random_tensor(Shape{1, 2, 8, 8}, rng, -2.0, 2.0);
    cases.push_back({"dice_loss", {logits}, [target](Tape&, const std::vector<Var>& v) {
                       return dice_loss(softmax_channel(v[0]), target);
                     }});
    cases.push_back({"topk_ce_loss", {logits}, [labels](Tape&, const std::vector<Var>& v) {
                       return topk_ce_loss(v[0], labels, 10.0);
                     }});
    cases.push_back({"topk_ce_loss_literal", {logits}, [labels](Tape&, const std::vector<Var>& v) {
                       return topk_ce_loss(v[0], labels, 25.0, CeMode::literal);
                     }});
    cases.push_back({"freq_aware_loss", {logits}, [target, db4](Tape&, const std::vector<Var>& v) {
                       return freq_aware_loss(softmax_channel(v[0]), target, db4);
                     }});
    cases.push_back({"total_loss", {logits}, [labels, db4](Tape&, const std::vector<Var>& v) {
                       return total_loss(v[0], labels, LossWeights{}, db4).total;
                     }});
  }

  // end to end: 1x1x16x16 input, depth 2, base width 4
  {
    const ModelConfig cfg = gradcheck_model_config();
    const Tensor x = random_tensor(Shape{1, 1, 16, 16}, rng);
    const LabelMap labels = detail::random_labels(1, 16, 16, cfg.classes, rng);
    cases.push_back(detail::layout_case(
        "end_to_end", network_layout(cfg), {},
        [cfg, x, labels](const Scope& p, const std::vector<Var>&) {
          // Scope("") resolves names directly against the binding
          const ParamBinding& binding = p.binding();
          ForwardResult f = forward(binding, p.tape().constant(x), cfg);
          return supervised_loss(f.logits, f.aux, labels, LossWeights{}, cfg.wavelet()).total;
        },
        seed + 4, 1e-2, 160));
  }
  return cases;
}

}  // namespace frequnet
