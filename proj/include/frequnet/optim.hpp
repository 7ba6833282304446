#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <string>

#include "frequnet/error.hpp"
#include "frequnet/params.hpp"
#include "frequnet/tape.hpp"

namespace frequnet {

struct AdamConfig {
  double lr = 4e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam without weight decay. Moment buffers are keyed by parameter name.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(ModelParams& params, const std::map<std::string, Tensor>& grads, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& [name, p] : params) {
      auto it = grads.find(name);
      if (it == grads.end()) continue;
      const Tensor& g = it->second;
      if (g.shape() != p.shape()) throw DimensionError("adam: gradient for '" + name + "' has shape " + g.shape().str());
      auto [mi, fresh] = m_.try_emplace(name, Tensor::zeros_like(p));
      Tensor& m = mi->second;
      Tensor& v = v_.try_emplace(name, Tensor::zeros_like(p)).first->second;
      (void)fresh;
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
      }
    }
  }

  std::size_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::size_t t_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

/// Exponential moving average; the first observation initialises it.
class Ema {
 public:
  explicit Ema(double decay = 0.95) : decay_(decay) {
    if (!(decay >= 0.0 && decay < 1.0)) throw ConfigError("EMA decay must lie in [0, 1)");
  }
  double update(double x) {
    value_ = seen_ ? decay_ * value_ + (1.0 - decay_) * x : x;
    seen_ = true;
    return value_;
  }
  std::optional<double> value() const { return seen_ ? std::optional<double>(value_) : std::nullopt; }

 private:
  double decay_;
  double value_ = 0.0;
  bool seen_ = false;
};

struct PlateauConfig {
  double lr0 = 4e-3;
  double lr_min = 1e-6;
  std::size_t patience = 5;
  double min_delta = 1e-4;
  double factor = 0.5;
};

/// Halves the learning rate once the tracked loss has gone `patience` epochs
/// without improving on its best value by at least `min_delta`.
class PlateauScheduler {
 public:
  explicit PlateauScheduler(PlateauConfig cfg = {}) : cfg_(cfg), lr_(cfg.lr0) {
    if (!(cfg.lr0 > 0.0) || !(cfg.lr_min > 0.0) || cfg.lr_min > cfg.lr0) {
      throw ConfigError("optim: need 0 < lr_min <= lr0");
    }
    if (cfg.patience < 1) throw ConfigError("optim.patience must be at least 1");
  }

  /// Feeds one end-of-epoch value; returns the learning rate for the next epoch.
  double observe(double loss) {
    if (!best_ || loss < *best_ - cfg_.min_delta) {
      best_ = loss;
      stale_ = 0;
    } else if (++stale_ >= cfg_.patience) {
      lr_ = std::max(cfg_.lr_min, lr_ * cfg_.factor);
      stale_ = 0;
    }
    return lr_;
  }

  double lr() const { return lr_; }
  std::size_t stale_epochs() const { return stale_; }

 private:
  PlateauConfig cfg_;
  double lr_;
  std::optional<double> best_;
  std::size_t stale_ = 0;
};

}  // namespace frequnet
