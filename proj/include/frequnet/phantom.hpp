#pragma once

// Synthetic imbalanced segmentation data.
//
// Class k >= 1 is painted in order, later classes overwriting earlier labels.
// A low-band class adds a constant level over its support; a high-band class
// adds a separable cosine texture whose frequencies sit above the default
// low-pass block. Textured blobs are placed inside the first ellipse class
// when there is one, so they can only be told apart by their texture.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "frequnet/checkpoint.hpp"
#include "frequnet/error.hpp"
#include "frequnet/parallel.hpp"
#include "frequnet/params.hpp"
#include "frequnet/spectral.hpp"
#include "frequnet/tensor.hpp"

namespace frequnet {

enum class Band { low, high };
enum class ShapeFamily { ellipse, textured_blob };

inline std::string to_string(Band b) { return b == Band::low ? "low" : "high"; }
inline std::string to_string(ShapeFamily s) { return s == ShapeFamily::ellipse ? "ellipse" : "textured_blob"; }

inline Band parse_band(const std::string& s) {
  if (s == "low") return Band::low;
  if (s == "high") return Band::high;
  throw ConfigError("band must be 'low' or 'high', got '" + s + "'");
}

inline ShapeFamily parse_shape(const std::string& s) {
  if (s == "ellipse") return ShapeFamily::ellipse;
  if (s == "textured_blob") return ShapeFamily::textured_blob;
  throw ConfigError("shape must be 'ellipse' or 'textured_blob', got '" + s + "'");
}

struct ClassSpec {
  double fraction = 0.05;  // target share of image area
  Band band = Band::low;
  ShapeFamily shape = ShapeFamily::ellipse;

  friend bool operator==(const ClassSpec&, const ClassSpec&) = default;
};

struct PhantomSpec {
  std::size_t height = 64;
  std::size_t width = 64;
  std::vector<ClassSpec> foreground{{0.15, Band::low, ShapeFamily::ellipse},
                                    {0.02, Band::high, ShapeFamily::textured_blob}};
  double noise = 0.15;
  double texture_amplitude = 0.6;
  std::uint64_t seed = 1;
  std::size_t train_count = 200;
  std::size_t val_count = 50;
  double audit_tau = 0.25;         // pass block the texture must avoid
  double min_high_band = 0.8;      // required share of texture energy outside it

  std::size_t classes() const { return foreground.size() + 1; }

  /// Resizes the class list to K classes; new classes default to small flat ellipses.
  void set_classes(std::size_t k) {
    if (k < 2) throw ConfigError("data.classes must be at least 2, got " + std::to_string(k));
    foreground.resize(k - 1, ClassSpec{});
  }

  void validate() const;

  friend bool operator==(const PhantomSpec&, const PhantomSpec&) = default;
};

namespace detail {

constexpr double kMinAspect = 0.6;      // ellipse minor/major lower bound
constexpr double kMinBlobAspect = 0.75;
constexpr double kTexFreqLo = 0.35;     // cycles per pixel
constexpr double kTexFreqHi = 0.45;
constexpr int kAuditRetries = 20;
constexpr int kPlacementRetries = 200;

inline double major_axis(double area, double aspect) { return std::sqrt(area / (std::numbers::pi * aspect)); }

/// First ellipse class before k, or -1.
inline int host_of(const PhantomSpec& spec, std::size_t k) {
  for (std::size_t j = 0; j < k; ++j)
    if (spec.foreground[j].shape == ShapeFamily::ellipse) return static_cast<int>(j);
  return -1;
}

}  // namespace detail

inline void PhantomSpec::validate() const {
  if (height < 8 || width < 8) throw ConfigError("data.height and data.width must be at least 8");
  if (foreground.empty()) throw ConfigError("data.classes must be at least 2");
  if (!(noise >= 0.0)) throw ConfigError("data.noise must be non-negative");
  if (!(texture_amplitude > 0.0)) throw ConfigError("data.texture_amplitude must be positive");
  if (train_count < 1 || val_count < 1) throw ConfigError("data.train_count and data.val_count must be at least 1");
  if (!(audit_tau > 0.0 && audit_tau < 0.5)) throw ConfigError("data.audit_tau must lie in (0, 0.5)");
  const double area = static_cast<double>(height * width);
  const double side = static_cast<double>(std::min(height, width));
  double total = 0.0;
  for (std::size_t k = 0; k < foreground.size(); ++k) {
    const ClassSpec& c = foreground[k];
    const std::string key = "data.class" + std::to_string(k + 1) + ".fraction";
    if (!(c.fraction > 0.0 && c.fraction < 1.0)) throw ConfigError(key + " must lie in (0, 1)");
    if (c.fraction * area < 4.0) throw ConfigError(key + " covers fewer than 4 pixels at this image size");
    total += c.fraction;
    // worst case over the sampled aspect ratio
    const double a = detail::major_axis(c.fraction * area, detail::kMinAspect);
    if (2.0 * a + 2.0 > side) throw ConfigError(key + " = " + std::to_string(c.fraction) + " is too large to fit");
    const int host = detail::host_of(*this, k);
    if (c.shape == ShapeFamily::textured_blob && host >= 0) {
      const double host_area = foreground[static_cast<std::size_t>(host)].fraction * area;
      const double host_minor = detail::kMinAspect * detail::major_axis(host_area, detail::kMinAspect);
      const double blob_major = detail::major_axis(c.fraction * area, detail::kMinBlobAspect);
      if (blob_major + 1.5 > host_minor) {
        throw ConfigError(key + " = " + std::to_string(c.fraction) + " is too large to sit inside class " +
                          std::to_string(host + 1));
      }
    }
  }
  if (total >= 1.0) throw ConfigError("foreground fractions must sum to less than 1, got " + std::to_string(total));
}

struct Sample {
  Tensor image;    // (1, 1, H, W)
  LabelMap label;  // (1, H, W)
  double high_band_fraction = 1.0;  // smallest audited texture share outside the pass block
};

namespace detail {

struct EllipseShape {
  double cy, cx, a, b, theta;

  bool contains(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double c = std::cos(theta), s = std::sin(theta);
    const double u = (dx * c + dy * s) / a, v = (-dx * s + dy * c) / b;
    return u * u + v * v <= 1.0;
  }
  double half_extent_y() const {
    return std::hypot(a * std::sin(theta), b * std::cos(theta));
  }
  double half_extent_x() const {
    return std::hypot(a * std::cos(theta), b * std::sin(theta));
  }
};

inline double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Box-Muller on the library's own uniform draw, so noise is identical across standard libraries.
inline double gaussian(std::mt19937_64& rng) {
  const double u1 = 1.0 - uniform01(rng);  // (0, 1]
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline EllipseShape random_ellipse(std::mt19937_64& rng, double area, double min_aspect) {
  EllipseShape e{};
  const double aspect = uniform(rng, min_aspect, 1.0);
  e.a = major_axis(area, aspect);
  e.b = aspect * e.a;
  e.theta = uniform(rng, 0.0, std::numbers::pi);
  return e;
}

/// Share of a plane's energy outside the centred low-pass block.
inline double energy_outside(const Tensor& plane, double tau) {
  const ComplexSpectrum f = fft2_centered(plane);
  const FreqMask mask = build_mask(plane.shape().h, plane.shape().w, tau);
  double total = 0.0, outside = 0.0;
  for (std::size_t i = 0; i < f.re.size(); ++i) {
    const double e = f.re[i] * f.re[i] + f.im[i] * f.im[i];
    total += e;
    if (!mask.values[i]) outside += e;
  }
  return total > 0.0 ? outside / total : 0.0;
}

}  // namespace detail

/// Deterministic in (spec.seed, index).
inline Sample generate_phantom(const PhantomSpec& spec, std::size_t index) {
  spec.validate();
  const std::size_t H = spec.height, W = spec.width;
  std::mt19937_64 rng(detail::splitmix64(spec.seed ^ detail::splitmix64(index)));
  Sample out{Tensor(Shape{1, 1, H, W}), LabelMap(1, H, W), 1.0};
  std::vector<detail::EllipseShape> shapes;

  for (std::size_t k = 0; k < spec.foreground.size(); ++k) {
    const ClassSpec& cs = spec.foreground[k];
    const double area = cs.fraction * static_cast<double>(H * W);
    const int host = detail::host_of(spec, k);
    const bool nested = cs.shape == ShapeFamily::textured_blob && host >= 0;
    detail::EllipseShape e =
        detail::random_ellipse(rng, area, nested ? detail::kMinBlobAspect : detail::kMinAspect);

    // Rejection-sample a centre that keeps the shape in the image (and inside its host).
    bool placed = false;
    for (int attempt = 0; attempt < detail::kPlacementRetries && !placed; ++attempt) {
      const double ey = e.half_extent_y(), ex = e.half_extent_x();
      e.cy = detail::uniform(rng, ey + 0.5, static_cast<double>(H) - 1.5 - ey);
      e.cx = detail::uniform(rng, ex + 0.5, static_cast<double>(W) - 1.5 - ex);
      placed = true;
      if (nested) {
        const auto& h = shapes[static_cast<std::size_t>(host)];
        for (std::size_t y = 0; y < H && placed; ++y)
          for (std::size_t x = 0; x < W && placed; ++x)
            if (e.contains(double(y), double(x)) && !h.contains(double(y), double(x))) placed = false;
      }
    }
    if (!placed) {
      throw DataError("sample " + std::to_string(index) + ": could not place class " + std::to_string(k + 1));
    }
    shapes.push_back(e);

    Tensor signal(Shape{1, 1, H, W});
    if (cs.band == Band::low) {
      const double level = 1.0 + 0.25 * static_cast<double>(k);
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
          if (e.contains(double(y), double(x))) signal.at(0, 0, y, x) = level;
    } else {
      // Redraw the texture until the windowed signal passes the energy audit.
      double share = 0.0;
      for (int attempt = 0; attempt < detail::kAuditRetries; ++attempt) {
        const double fy = detail::uniform(rng, detail::kTexFreqLo, detail::kTexFreqHi);
        const double fx = detail::uniform(rng, detail::kTexFreqLo, detail::kTexFreqHi);
        const double py = detail::uniform(rng, 0.0, 2.0 * std::numbers::pi);
        const double px = detail::uniform(rng, 0.0, 2.0 * std::numbers::pi);
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t x = 0; x < W; ++x)
            signal.at(0, 0, y, x) =
                e.contains(double(y), double(x))
                    ? spec.texture_amplitude * std::cos(2.0 * std::numbers::pi * fy * double(y) + py) *
                          std::cos(2.0 * std::numbers::pi * fx * double(x) + px)
                    : 0.0;
        share = detail::energy_outside(signal, spec.audit_tau);
        if (share >= spec.min_high_band) break;
      }
      if (share < spec.min_high_band) {
        throw DataError("sample " + std::to_string(index) + ": class " + std::to_string(k + 1) +
                        " texture keeps only " + std::to_string(share) + " of its energy outside the pass block");
      }
      out.high_band_fraction = std::min(out.high_band_fraction, share);
    }
    out.image += signal;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        if (e.contains(double(y), double(x))) out.label.at(0, y, x) = static_cast<std::int32_t>(k + 1);
  }

  if (spec.noise > 0.0)
    for (double& v : out.image.data()) v += spec.noise * detail::gaussian(rng);
  return out;
}

// ---------------------------------------------------------------------------
// Dataset, normalisation and cache

/// Images with matching labels; a batch is a Dataset as well.
struct Dataset {
  Tensor images;   // (N, 1, H, W)
  LabelMap labels; // (N, H, W)
  std::size_t classes = 0;

  std::size_t size() const { return labels.n; }

  Dataset batch(const std::vector<std::size_t>& idx) const {
    const Shape s = images.shape();
    Dataset out{Tensor(Shape{idx.size(), s.c, s.h, s.w}), LabelMap(idx.size(), s.h, s.w), classes};
    const std::size_t img = s.c * s.plane(), lab = s.plane();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] >= size()) throw DimensionError("batch index " + std::to_string(idx[i]) + " out of range");
      std::copy_n(images.ptr() + idx[i] * img, img, out.images.ptr() + i * img);
      std::copy_n(labels.data.begin() + static_cast<std::ptrdiff_t>(idx[i] * lab), lab,
                  out.labels.data.begin() + static_cast<std::ptrdiff_t>(i * lab));
    }
    return out;
  }
};

struct NormStats {
  double mean = 0.0;
  double std = 1.0;
};

constexpr double kNormEps = 1e-8;

/// Pixel mean and population deviation of a split.
inline NormStats fit_normalization(const Tensor& images) {
  if (images.size() == 0) throw DataError("cannot fit normalisation on an empty split");
  double sum = 0.0;
  for (double v : images.data()) sum += v;
  const double mean = sum / static_cast<double>(images.size());
  double sq = 0.0;
  for (double v : images.data()) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / static_cast<double>(images.size()))};
}

inline Tensor normalize(const Tensor& images, const NormStats& st) {
  Tensor out = images;
  const double inv = 1.0 / std::max(st.std, kNormEps);
  for (double& v : out.data()) v = (v - st.mean) * inv;
  return out;
}

struct PhantomData {
  Dataset train;
  Dataset val;
  NormStats stats;                  // fitted on train only
  double min_high_band_fraction = 1.0;
};

/// Samples [0, train_count) form the training split, the next val_count the validation split.
inline PhantomData make_dataset(const PhantomSpec& spec, std::size_t threads = 1) {
  spec.validate();
  const std::size_t total = spec.train_count + spec.val_count;
  std::vector<Sample> samples(total);
  parallel_for(total, threads, [&](std::size_t i) { samples[i] = generate_phantom(spec, i); });

  auto collect = [&](std::size_t begin, std::size_t count) {
    Dataset d{Tensor(Shape{count, 1, spec.height, spec.width}), LabelMap(count, spec.height, spec.width),
              spec.classes()};
    const std::size_t plane = spec.height * spec.width;
    for (std::size_t i = 0; i < count; ++i) {
      std::copy_n(samples[begin + i].image.ptr(), plane, d.images.ptr() + i * plane);
      std::copy(samples[begin + i].label.data.begin(), samples[begin + i].label.data.end(),
                d.labels.data.begin() + static_cast<std::ptrdiff_t>(i * plane));
    }
    return d;
  };

  PhantomData data{collect(0, spec.train_count), collect(spec.train_count, spec.val_count), {}, 1.0};
  for (const Sample& s : samples) data.min_high_band_fraction = std::min(data.min_high_band_fraction, s.high_band_fraction);
  data.stats = fit_normalization(data.train.images);
  data.train.images = normalize(data.train.images, data.stats);
  data.val.images = normalize(data.val.images, data.stats);
  return data;
}

inline TensorArchive dataset_archive(const PhantomData& d) {
  TensorArchive a;
  a.tensors.set("train.images", d.train.images);
  a.tensors.set("norm", Tensor(Shape{1, 1, 1, 3}, {d.stats.mean, d.stats.std, d.min_high_band_fraction}));
  a.tensors.set("val.images", d.val.images);
  a.labels.emplace("train.labels", d.train.labels);
  a.labels.emplace("val.labels", d.val.labels);
  return a;
}

inline PhantomData dataset_from_archive(const TensorArchive& a, std::size_t classes) {
  auto labels = [&](const std::string& name) {
    auto it = a.labels.find(name);
    if (it == a.labels.end()) throw IoError("dataset cache lacks '" + name + "'");
    return it->second;
  };
  auto tensor = [&](const std::string& name) {
    if (!a.tensors.contains(name)) throw IoError("dataset cache lacks '" + name + "'");
    return a.tensors.at(name);
  };
  PhantomData d;
  d.train = {tensor("train.images"), labels("train.labels"), classes};
  d.val = {tensor("val.images"), labels("val.labels"), classes};
  const Tensor norm = tensor("norm");
  d.stats = {norm[0], norm[1]};
  d.min_high_band_fraction = norm[2];
  return d;
}

}  // namespace frequnet
