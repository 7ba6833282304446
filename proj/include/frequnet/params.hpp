#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "frequnet/error.hpp"
#include "frequnet/tape.hpp"
#include "frequnet/tensor.hpp"

namespace frequnet {

enum class Init { kaiming_uniform, zeros, ones };

/// Declared parameter: hierarchical name, shape and initialiser.
struct ParamSpec {
  std::string name;
  Shape shape;
  Init init = Init::kaiming_uniform;
  std::size_t fan_in = 1;
};

/// Parameter declarations collected while walking an architecture.
class ParamLayout {
 public:
  void add(std::string name, Shape shape, Init init, std::size_t fan_in = 1) {
    for (const auto& p : specs_) {
      if (p.name == name) throw ConfigError("duplicate parameter name '" + name + "'");
    }
    specs_.push_back(ParamSpec{std::move(name), shape, init, fan_in});
  }

  /// Conv weight (cout, cin, k, k) with Kaiming fan-in init plus zero bias.
  void conv(const std::string& prefix, std::size_t cout, std::size_t cin, std::size_t k, bool zero = false) {
    add(prefix + ".weight", Shape{cout, cin, k, k}, zero ? Init::zeros : Init::kaiming_uniform, cin * k * k);
    add(prefix + ".bias", Shape{1, cout, 1, 1}, Init::zeros);
  }

  const std::vector<ParamSpec>& specs() const { return specs_; }

 private:
  std::vector<ParamSpec> specs_;
};

/// Named parameter tensors, ordered by name.
class ModelParams {
 public:
  using Map = std::map<std::string, Tensor>;

  void set(const std::string& name, Tensor t) { tensors_[name] = std::move(t); }
  const Tensor& at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }
  Tensor& at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  std::size_t size() const { return tensors_.size(); }
  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors_) n += t.size();
    return n;
  }
  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : tensors_) out.push_back(k);
    return out;
  }
  Map::const_iterator begin() const { return tensors_.begin(); }
  Map::const_iterator end() const { return tensors_.end(); }
  Map::iterator begin() { return tensors_.begin(); }
  Map::iterator end() { return tensors_.end(); }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;

 private:
  Map tensors_;
};

namespace detail {

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Uniform double in [0, 1) from the top 53 bits.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace detail

/// Materialises a layout. Each tensor draws from its own stream keyed by
/// (seed, name), so values do not depend on declaration order.
inline ModelParams init_params(const ParamLayout& layout, std::uint64_t seed) {
  ModelParams params;
  for (const ParamSpec& p : layout.specs()) {
    Tensor t(p.shape);
    switch (p.init) {
      case Init::zeros:
        break;
      case Init::ones:
        for (double& v : t.data()) v = 1.0;
        break;
      case Init::kaiming_uniform: {
        std::mt19937_64 rng(detail::splitmix64(seed ^ detail::fnv1a(p.name)));
        const double bound = std::sqrt(6.0 / static_cast<double>(p.fan_in));
        for (double& v : t.data()) v = (2.0 * detail::uniform01(rng) - 1.0) * bound;
        break;
      }
    }
    params.set(p.name, std::move(t));
  }
  return params;
}

/// Parameters registered as tape leaves for one forward pass.
class ParamBinding {
 public:
  ParamBinding(Tape& tape, const ModelParams& params, bool requires_grad = true) : tape_(&tape) {
    for (const auto& [name, t] : params) vars_.emplace(name, tape.leaf(t, requires_grad));
  }

  /// Binds already-recorded vars, e.g. leaves shared with other inputs.
  ParamBinding(Tape& tape, std::map<std::string, Var> vars) : tape_(&tape), vars_(std::move(vars)) {}

  Var operator()(const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw ConfigError("parameter '" + name + "' not bound");
    return it->second;
  }
  bool contains(const std::string& name) const { return vars_.count(name) != 0; }
  Tape& tape() const { return *tape_; }
  const std::map<std::string, Var>& vars() const { return vars_; }

 private:
  Tape* tape_;
  std::map<std::string, Var> vars_;
};

/// Prefix view into a binding, e.g. scope("enc1")("block.conv1.weight").
class Scope {
 public:
  Scope(const ParamBinding& binding, std::string prefix) : binding_(&binding), prefix_(std::move(prefix)) {}

  Var operator()(const std::string& name) const { return (*binding_)(join(name)); }
  bool contains(const std::string& name) const { return binding_->contains(join(name)); }
  Scope sub(const std::string& name) const { return Scope(*binding_, join(name)); }
  Tape& tape() const { return binding_->tape(); }
  const ParamBinding& binding() const { return *binding_; }
  const std::string& prefix() const { return prefix_; }

 private:
  std::string join(const std::string& name) const { return prefix_.empty() ? name : prefix_ + "." + name; }
  const ParamBinding* binding_;
  std::string prefix_;
};

}  // namespace frequnet
