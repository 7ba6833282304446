#pragma once

// RunConfig and its flat text form:
//
//   # comment
//   section.key = value
//
// Every field has exactly one key. Keys may be given by a unique suffix
// ("epochs" for "train.epochs"). Overrides are applied after the file.

#include <array>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <system_error>
#include <type_traits>
#include <utility>
#include <vector>

#include "frequnet/error.hpp"
#include "frequnet/losses.hpp"
#include "frequnet/model_config.hpp"
#include "frequnet/optim.hpp"
#include "frequnet/params.hpp"
#include "frequnet/phantom.hpp"

namespace frequnet {

struct OptimConfig {
  AdamConfig adam;
  PlateauConfig plateau;
  double ema_decay = 0.95;
};

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 4;
  std::uint64_t seed = 1;
};

/// Complete description of one experiment.
struct RunConfig {
  ModelConfig model = desk_model();
  LossWeights loss;
  CeMode ce_mode = CeMode::standard;
  OptimConfig optim;
  TrainConfig train;
  PhantomSpec data;

  static ModelConfig desk_model() {
    ModelConfig m;
    m.depth = 3;
    m.base_width = 4;
    return m;
  }

  /// Loss weights actually used: the FAL switch zeroes the frequency term.
  LossWeights effective_loss() const {
    LossWeights w = loss;
    if (!model.switches.fal) w.freq = 0.0;
    return w;
  }

  void validate() const {
    if (model.classes != data.classes()) {
      throw ConfigError("model has " + std::to_string(model.classes) + " classes but the dataset has " +
                        std::to_string(data.classes()));
    }
    model.validate();
    loss.validate();
    data.validate();
    if (data.height % model.size_multiple() != 0 || data.width % model.size_multiple() != 0) {
      throw ConfigError("data.height and data.width must be multiples of " + std::to_string(model.size_multiple()) +
                        " (2^model.depth)");
    }
    if (train.epochs < 1) throw ConfigError("train.epochs must be at least 1");
    if (train.batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
    if (!(optim.adam.beta1 >= 0.0 && optim.adam.beta1 < 1.0) || !(optim.adam.beta2 >= 0.0 && optim.adam.beta2 < 1.0)) {
      throw ConfigError("optim.beta1 and optim.beta2 must lie in [0, 1)");
    }
    if (!(optim.adam.eps > 0.0)) throw ConfigError("optim.eps must be positive");
    if (!(optim.ema_decay >= 0.0 && optim.ema_decay < 1.0)) throw ConfigError("optim.ema_decay must lie in [0, 1)");
    PlateauScheduler check(optim.plateau);
    (void)check;
  }

  friend bool operator==(const RunConfig& a, const RunConfig& b);
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  (void)ec;
  return std::string(buf.data(), end);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* first = text.data();
  const char* last = first + text.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || text.empty()) {
    throw ConfigError(key + ": cannot parse '" + text + "' as a number");
  }
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "on" || text == "1") return true;
  if (text == "false" || text == "off" || text == "0") return false;
  throw ConfigError(key + ": expected true/false, got '" + text + "'");
}

inline std::string to_string(SldMode m) { return m == SldMode::learnable ? "learnable" : "baseline"; }
inline SldMode parse_sld_mode(const std::string& key, const std::string& s) {
  if (s == "learnable") return SldMode::learnable;
  if (s == "baseline") return SldMode::baseline;
  throw ConfigError(key + ": expected 'learnable' or 'baseline', got '" + s + "'");
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

/// Builds a field over a member reached through `ref`.
template <typename T, typename Ref>
Field field(std::string key, Ref ref) {
  Field f;
  f.key = key;
  if constexpr (std::is_same_v<T, bool>) {
    f.get = [ref](const RunConfig& c) { return std::string(ref(c) ? "true" : "false"); };
    f.set = [ref, key](RunConfig& c, const std::string& v) { ref(c) = parse_bool(key, v); };
  } else if constexpr (std::is_same_v<T, double>) {
    f.get = [ref](const RunConfig& c) { return format_double(ref(c)); };
    f.set = [ref, key](RunConfig& c, const std::string& v) { ref(c) = parse_number<double>(key, v); };
  } else {
    f.get = [ref](const RunConfig& c) { return std::to_string(ref(c)); };
    f.set = [ref, key](RunConfig& c, const std::string& v) { ref(c) = parse_number<T>(key, v); };
  }
  return f;
}

template <typename E, typename Ref, typename Parse>
Field enum_field(std::string key, Ref ref, Parse parse) {
  Field f;
  f.key = key;
  f.get = [ref](const RunConfig& c) { return to_string(ref(c)); };
  f.set = [ref, parse, key](RunConfig& c, const std::string& v) { ref(c) = parse(key, v); };
  return f;
}

#define FREQUNET_REF(expr) [](auto& c) -> auto& { return c.expr; }

/// Key registry for a config with `classes` classes. data.classes is handled separately.
inline std::vector<Field> fields(std::size_t classes) {
  std::vector<Field> f;
  f.push_back(field<std::size_t>("model.depth", FREQUNET_REF(model.depth)));
  f.push_back(field<std::size_t>("model.base_width", FREQUNET_REF(model.base_width)));
  f.push_back(field<std::size_t>("model.in_channels", FREQUNET_REF(model.in_channels)));
  f.push_back(field<int>("model.wavelet_order", FREQUNET_REF(model.wavelet_order)));
  f.push_back(field<double>("model.tau", FREQUNET_REF(model.tau)));
  f.push_back(enum_field<SubbandPolicy>("model.subband_policy", FREQUNET_REF(model.subband_policy),
                                        [](const std::string&, const std::string& v) { return parse_subband_policy(v); }));
  f.push_back(field<std::size_t>("model.groups", FREQUNET_REF(model.groups)));
  f.push_back(field<std::size_t>("model.scale", FREQUNET_REF(model.scale)));
  f.push_back(field<double>("model.leaky_slope", FREQUNET_REF(model.leaky_slope)));
  f.push_back(field<double>("model.norm_eps", FREQUNET_REF(model.norm_eps)));
  f.push_back(enum_field<SldMode>("model.sld_mode", FREQUNET_REF(model.sld_mode), parse_sld_mode));

  f.push_back(field<bool>("switch.flc", FREQUNET_REF(model.switches.flc)));
  f.push_back(field<bool>("switch.db_down", FREQUNET_REF(model.switches.db_down)));
  f.push_back(field<bool>("switch.sld", FREQUNET_REF(model.switches.sld)));
  f.push_back(field<bool>("switch.fal", FREQUNET_REF(model.switches.fal)));
  f.push_back(field<bool>("switch.deep_supervision", FREQUNET_REF(model.switches.deep_supervision)));

  f.push_back(field<double>("loss.w_dice", FREQUNET_REF(loss.dice)));
  f.push_back(field<double>("loss.w_topk", FREQUNET_REF(loss.topk)));
  f.push_back(field<double>("loss.w_freq", FREQUNET_REF(loss.freq)));
  f.push_back(field<double>("loss.topk_percent", FREQUNET_REF(loss.topk_percent)));
  f.push_back(enum_field<CeMode>("loss.ce_mode", FREQUNET_REF(ce_mode),
                                 [](const std::string&, const std::string& v) { return parse_ce_mode(v); }));

  f.push_back(field<double>("optim.lr0", FREQUNET_REF(optim.plateau.lr0)));
  f.push_back(field<double>("optim.lr_min", FREQUNET_REF(optim.plateau.lr_min)));
  f.push_back(field<std::size_t>("optim.patience", FREQUNET_REF(optim.plateau.patience)));
  f.push_back(field<double>("optim.min_delta", FREQUNET_REF(optim.plateau.min_delta)));
  f.push_back(field<double>("optim.lr_factor", FREQUNET_REF(optim.plateau.factor)));
  f.push_back(field<double>("optim.beta1", FREQUNET_REF(optim.adam.beta1)));
  f.push_back(field<double>("optim.beta2", FREQUNET_REF(optim.adam.beta2)));
  f.push_back(field<double>("optim.eps", FREQUNET_REF(optim.adam.eps)));
  f.push_back(field<double>("optim.ema_decay", FREQUNET_REF(optim.ema_decay)));

  f.push_back(field<std::size_t>("train.epochs", FREQUNET_REF(train.epochs)));
  f.push_back(field<std::size_t>("train.batch_size", FREQUNET_REF(train.batch_size)));
  f.push_back(field<std::uint64_t>("train.seed", FREQUNET_REF(train.seed)));

  f.push_back(field<std::size_t>("data.height", FREQUNET_REF(data.height)));
  f.push_back(field<std::size_t>("data.width", FREQUNET_REF(data.width)));
  f.push_back(field<double>("data.noise", FREQUNET_REF(data.noise)));
  f.push_back(field<double>("data.texture_amplitude", FREQUNET_REF(data.texture_amplitude)));
  f.push_back(field<std::uint64_t>("data.seed", FREQUNET_REF(data.seed)));
  f.push_back(field<std::size_t>("data.train_count", FREQUNET_REF(data.train_count)));
  f.push_back(field<std::size_t>("data.val_count", FREQUNET_REF(data.val_count)));
  f.push_back(field<double>("data.audit_tau", FREQUNET_REF(data.audit_tau)));
  f.push_back(field<double>("data.min_high_band", FREQUNET_REF(data.min_high_band)));
  for (std::size_t k = 1; k < classes; ++k) {
    const std::string p = "data.class" + std::to_string(k) + ".";
    auto cls = [k](auto& c) -> auto& { return c.data.foreground.at(k - 1); };
    f.push_back(field<double>(p + "fraction", [cls](auto& c) -> auto& { return cls(c).fraction; }));
    f.push_back(enum_field<Band>(p + "band", [cls](auto& c) -> auto& { return cls(c).band; },
                                 [](const std::string&, const std::string& v) { return parse_band(v); }));
    f.push_back(enum_field<ShapeFamily>(p + "shape", [cls](auto& c) -> auto& { return cls(c).shape; },
                                        [](const std::string&, const std::string& v) { return parse_shape(v); }));
  }
  return f;
}

#undef FREQUNET_REF

constexpr const char* kClassesKey = "data.classes";

inline std::string valid_keys(std::size_t classes) {
  std::string out = kClassesKey;
  for (const Field& f : fields(classes)) out += ", " + f.key;
  return out;
}

/// Maps a full or unique-suffix key onto its canonical name.
inline std::string resolve_key(const std::string& key, std::size_t classes) {
  std::vector<std::string> all{kClassesKey};
  for (const Field& f : fields(classes)) all.push_back(f.key);
  std::vector<std::string> hits;
  for (const std::string& k : all) {
    if (k == key) return k;
    if (k.size() > key.size() && k.compare(k.size() - key.size(), key.size(), key) == 0 &&
        k[k.size() - key.size() - 1] == '.') {
      hits.push_back(k);
    }
  }
  if (hits.size() == 1) return hits.front();
  if (hits.size() > 1) {
    std::string list;
    for (const auto& h : hits) list += (list.empty() ? "" : ", ") + h;
    throw ConfigError("ambiguous key '" + key + "' matches " + list);
  }
  throw ConfigError("unknown key '" + key + "'; valid keys: " + valid_keys(classes));
}

}  // namespace detail

/// One `key = value` assignment with where it came from, for error messages.
struct Assignment {
  std::string key;
  std::string value;
  std::string origin;
};

inline std::vector<Assignment> parse_assignments(const std::string& text, const std::string& origin) {
  std::vector<Assignment> out;
  std::istringstream in(text);
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(n);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value', got '" + line + "'");
    out.push_back({detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)), where});
  }
  return out;
}

inline Assignment parse_override(const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + kv + "' must look like key=value");
  return {detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)), "override"};
}

/// Applies assignments in order onto the defaults. The class count is settled
/// first because it decides which per-class keys exist.
inline RunConfig build_config(const std::vector<Assignment>& assignments) {
  RunConfig cfg;
  std::size_t classes = cfg.data.classes();
  for (const Assignment& a : assignments) {
    if (a.key != detail::kClassesKey && a.key != "classes") continue;
    classes = detail::parse_number<std::size_t>(a.origin + ": " + detail::kClassesKey, a.value);
  }
  cfg.data.set_classes(classes);
  cfg.model.classes = classes;

  const std::vector<detail::Field> fields = detail::fields(classes);
  for (const Assignment& a : assignments) {
    std::string key;
    try {
      key = detail::resolve_key(a.key, classes);
    } catch (const ConfigError& e) {
      throw ConfigError(a.origin + ": " + e.what());
    }
    if (key == detail::kClassesKey) continue;
    for (const detail::Field& f : fields) {
      if (f.key != key) continue;
      try {
        f.set(cfg, a.value);
      } catch (const ConfigError& e) {
        throw ConfigError(a.origin + ": " + e.what());
      }
    }
  }
  cfg.validate();
  return cfg;
}

inline RunConfig parse_config(const std::string& text, const std::vector<std::string>& overrides = {},
                              const std::string& origin = "config") {
  std::vector<Assignment> all = parse_assignments(text, origin);
  for (const std::string& o : overrides) all.push_back(parse_override(o));
  return build_config(all);
}

inline RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), overrides, path);
}

/// Canonical text: every key, in registry order, one section per block.
inline std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream os;
  std::string section;
  auto emit = [&](const std::string& key, const std::string& value) {
    const std::string sec = key.substr(0, key.find('.'));
    if (sec != section) {
      if (!section.empty()) os << '\n';
      section = sec;
    }
    os << key << " = " << value << '\n';
  };
  for (const detail::Field& f : detail::fields(cfg.data.classes())) {
    if (f.key == "data.height") emit(detail::kClassesKey, std::to_string(cfg.data.classes()));
    emit(f.key, f.get(cfg));
  }
  return os.str();
}

inline bool operator==(const RunConfig& a, const RunConfig& b) { return serialize_config(a) == serialize_config(b); }

inline std::string config_hash(const RunConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(detail::fnv1a(serialize_config(cfg))));
  return buf;
}

inline std::string run_dir_name(const RunConfig& cfg) { return "run-" + config_hash(cfg); }

}  // namespace frequnet
