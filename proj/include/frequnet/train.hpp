#pragma once

// Training, evaluation and ablation on phantom data.
//
// Metrics log: one JSON object per line.
//   header: config hash, loss weights, Dice aggregation
//   step:   per optimiser step, raw (unweighted) loss terms and soft Dice per class
//   epoch:  EMA-smoothed losses, learning rate and hard validation Dice
// metrics_schema() lists the keys and JSON types of each record.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "frequnet/checkpoint.hpp"
#include "frequnet/config.hpp"
#include "frequnet/error.hpp"
#include "frequnet/network.hpp"
#include "frequnet/optim.hpp"
#include "frequnet/parallel.hpp"
#include "frequnet/phantom.hpp"

namespace frequnet {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Metrics log

/// Record type -> (key -> JSON type name).
inline json metrics_schema() {
  return json{
      {"header",
       {{"type", "string"}, {"schema", "number"}, {"config_hash", "string"}, {"aggregation", "string"},
        {"w_dice", "number"}, {"w_topk", "number"}, {"w_freq", "number"}, {"classes", "number"}}},
      {"step",
       {{"type", "string"}, {"epoch", "number"}, {"step", "number"}, {"lr", "number"}, {"total", "number"},
        {"dice", "number"}, {"topk", "number"}, {"freq", "number"}, {"aux", "number"}, {"class_dice", "array"}}},
      {"epoch",
       {{"type", "string"}, {"epoch", "number"}, {"lr", "number"}, {"train_loss", "number"}, {"val_loss", "number"},
        {"ema_train", "number"}, {"ema_val", "number"}, {"dice", "array"}, {"dice_gap", "number"},
        {"absent", "array"}, {"aggregation", "string"}}},
  };
}

/// Parses one log line and checks it against the schema; throws DataError.
inline json check_log_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("metrics line is not JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) {
    throw DataError("metrics line lacks a string 'type'");
  }
  const json schema = metrics_schema();
  const std::string type = j["type"];
  if (!schema.contains(type)) throw DataError("unknown metrics record type '" + type + "'");
  const json& keys = schema[type];
  if (j.size() != keys.size()) throw DataError(type + " record has " + std::to_string(j.size()) + " keys");
  for (const auto& [key, kind] : keys.items()) {
    if (!j.contains(key)) throw DataError(type + " record lacks '" + key + "'");
    if (j[key].type_name() != kind.get<std::string>()) {
      throw DataError(type + "." + key + " should be " + kind.get<std::string>() + ", is " + j[key].type_name());
    }
  }
  return j;
}

class MetricsLog {
 public:
  explicit MetricsLog(std::ostream* sink = nullptr) : sink_(sink) {}

  void write(const json& j) {
    lines_.push_back(j.dump());
    if (sink_ != nullptr) *sink_ << lines_.back() << '\n' << std::flush;
  }
  const std::vector<std::string>& lines() const { return lines_; }

 private:
  std::ostream* sink_;
  std::vector<std::string> lines_;
};

// ---------------------------------------------------------------------------
// Evaluation

struct SplitResult {
  double loss = 0.0;  // mean supervised loss per sample
  MetricsReport metrics;
};

namespace detail {

constexpr std::size_t kEvalBatch = 8;

inline void check_eval_inputs(const ModelParams& params, const Dataset& data, const RunConfig& cfg) {
  if (data.classes != cfg.model.classes) {
    throw ConfigError("dataset has " + std::to_string(data.classes) + " classes, model expects " +
                      std::to_string(cfg.model.classes));
  }
  const std::size_t head = params.at("head.bias").size();
  if (head != cfg.model.classes) {
    throw ConfigError("parameters predict " + std::to_string(head) + " classes, config says " +
                      std::to_string(cfg.model.classes));
  }
}

}  // namespace detail

/// Loss and globally aggregated hard Dice over a split. Batches run in
/// parallel; results are reduced in batch order so the thread count never
/// changes the output.
inline SplitResult evaluate_split(const ModelParams& params, const Dataset& data, const RunConfig& cfg,
                                  std::size_t threads = 1) {
  detail::check_eval_inputs(params, data, cfg);
  const std::size_t n = data.size();
  const std::size_t batches = (n + detail::kEvalBatch - 1) / detail::kEvalBatch;
  std::vector<double> loss(batches);
  std::vector<LabelMap> pred(batches), truth(batches);
  const LossWeights w = cfg.effective_loss();
  const WaveletSpec spec = cfg.model.wavelet();
  parallel_for(batches, threads, [&](std::size_t b) {
    std::vector<std::size_t> idx;
    for (std::size_t i = b * detail::kEvalBatch; i < std::min(n, (b + 1) * detail::kEvalBatch); ++i) idx.push_back(i);
    const Dataset batch = data.batch(idx);
    Tape tape;
    const ParamBinding binding(tape, params, /*requires_grad=*/false);
    const ForwardResult fr = forward(binding, tape.constant(batch.images), cfg.model);
    loss[b] = supervised_loss(fr.logits, fr.aux, batch.labels, w, spec, cfg.ce_mode).report.total *
              static_cast<double>(idx.size());
    pred[b] = argmax_labels(fr.logits.value());
    truth[b] = batch.labels;
  });
  SplitResult r;
  DiceAccumulator acc(cfg.model.classes);
  for (std::size_t b = 0; b < batches; ++b) {
    r.loss += loss[b];
    acc.add(pred[b], truth[b]);
  }
  r.loss /= static_cast<double>(n);
  r.metrics = acc.report();
  return r;
}

inline MetricsReport evaluate(const ModelParams& params, const Dataset& data, const RunConfig& cfg,
                              std::size_t threads = 1) {
  return evaluate_split(params, data, cfg, threads).metrics;
}

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double ema_train = 0.0;
  double ema_val = 0.0;
  MetricsReport val;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochRecord> history;
  std::vector<std::string> log;

  const MetricsReport& final_metrics() const { return history.back().val; }
};

namespace detail {

inline void require_finite(const LossReport& r, std::size_t epoch, std::size_t step) {
  const std::pair<const char*, double> terms[] = {
      {"dice", r.dice_term}, {"topk", r.topk_term}, {"freq", r.freq_term}, {"aux", r.aux_term}, {"total", r.total}};
  for (const auto& [name, v] : terms) {
    if (!std::isfinite(v)) {
      throw NumericError("non-finite " + std::string(name) + " loss term (" + std::to_string(v) + ") at epoch " +
                         std::to_string(epoch) + ", step " + std::to_string(step));
    }
  }
}

inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(splitmix64(seed ^ splitmix64(0x5eed0000ULL + epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

inline json header_record(const RunConfig& cfg) {
  const LossWeights w = cfg.effective_loss();
  return {{"type", "header"}, {"schema", 1},      {"config_hash", config_hash(cfg)}, {"aggregation", "global"},
          {"w_dice", w.dice}, {"w_topk", w.topk}, {"w_freq", w.freq},                {"classes", cfg.model.classes}};
}

}  // namespace detail

/// Loss value and parameter gradients for one batch.
struct StepOutput {
  LossReport report;
  std::map<std::string, Tensor> grads;
};

inline StepOutput loss_and_grads(const ModelParams& params, const Dataset& batch, const RunConfig& cfg) {
  Tape tape;
  const ParamBinding binding(tape, params);
  const ForwardResult fr = forward(binding, tape.constant(batch.images), cfg.model);
  LossTerms lt = supervised_loss(fr.logits, fr.aux, batch.labels, cfg.effective_loss(), cfg.model.wavelet(), cfg.ce_mode);
  StepOutput out{lt.report, {}};
  if (!std::isfinite(lt.report.total)) return out;
  const Gradients g = tape.backward(lt.total);
  for (const auto& [name, var] : binding.vars()) out.grads.emplace(name, g[var]);
  return out;
}

struct TrainOptions {
  std::size_t threads = 1;                       // evaluation workers
  std::ostream* log = nullptr;                   // metrics log sink
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Adam with an EMA-plateau learning-rate schedule. The scheduler watches
/// the EMA of the validation loss; validation data never touches the
/// normalisation statistics.
inline TrainResult train(const RunConfig& cfg, const PhantomData& data, const TrainOptions& opt = {}) {
  cfg.validate();
  if (data.train.classes != cfg.model.classes) {
    throw ConfigError("dataset has " + std::to_string(data.train.classes) + " classes, model expects " +
                      std::to_string(cfg.model.classes));
  }
  TrainResult result;
  result.params = init_params(cfg.model, cfg.train.seed);
  MetricsLog log(opt.log);
  log.write(detail::header_record(cfg));

  Adam adam(cfg.optim.adam);
  PlateauScheduler sched(cfg.optim.plateau);
  Ema ema_train(cfg.optim.ema_decay), ema_val(cfg.optim.ema_decay);
  double lr = sched.lr();
  std::size_t step = 0;
  const std::size_t n = data.train.size(), bs = cfg.train.batch_size;

  for (std::size_t epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
    const std::vector<std::size_t> order = detail::epoch_order(n, cfg.train.seed, epoch);
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < n; begin += bs) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, begin + bs)));
      ++step;
      StepOutput s = loss_and_grads(result.params, data.train.batch(idx), cfg);
      detail::require_finite(s.report, epoch, step);
      for (const auto& [name, g] : s.grads) {
        if (!g.all_finite()) {
          throw NumericError("non-finite gradient for parameter '" + name + "' at epoch " + std::to_string(epoch) +
                             ", step " + std::to_string(step));
        }
      }
      adam.step(result.params, s.grads, lr);
      loss_sum += s.report.total * static_cast<double>(idx.size());
      log.write({{"type", "step"},
                 {"epoch", epoch},
                 {"step", step},
                 {"lr", lr},
                 {"total", s.report.total},
                 {"dice", s.report.dice_term},
                 {"topk", s.report.topk_term},
                 {"freq", s.report.freq_term},
                 {"aux", s.report.aux_term},
                 {"class_dice", s.report.class_dice}});
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(n);
    const SplitResult val = evaluate_split(result.params, data.val, cfg, opt.threads);
    if (!std::isfinite(val.loss)) throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));
    rec.val_loss = val.loss;
    rec.val = val.metrics;
    rec.ema_train = ema_train.update(rec.train_loss);
    rec.ema_val = ema_val.update(rec.val_loss);
    lr = sched.observe(rec.ema_val);

    log.write({{"type", "epoch"},
               {"epoch", epoch},
               {"lr", rec.lr},
               {"train_loss", rec.train_loss},
               {"val_loss", rec.val_loss},
               {"ema_train", rec.ema_train},
               {"ema_val", rec.ema_val},
               {"dice", rec.val.dice},
               {"dice_gap", rec.val.dice_gap},
               {"absent", rec.val.absent},
               {"aggregation", rec.val.aggregation}});
    result.history.push_back(rec);
    if (opt.on_epoch) opt.on_epoch(rec);
  }
  result.log = log.lines();
  return result;
}

// ---------------------------------------------------------------------------
// Run directories and the dataset cache

inline std::string data_hash(const RunConfig& cfg) {
  std::istringstream in(serialize_config(cfg));
  std::string line, data;
  while (std::getline(in, line))
    if (line.rfind("data.", 0) == 0) data += line + '\n';
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(detail::fnv1a(data)));
  return buf;
}

/// Loads the cached dataset for cfg.data from `dir`, generating and caching it when absent.
inline PhantomData load_or_make_dataset(const RunConfig& cfg, const std::filesystem::path& dir,
                                        std::size_t threads = 1) {
  const std::filesystem::path path = dir / ("data-" + data_hash(cfg) + ".fquf");
  if (std::filesystem::exists(path)) return dataset_from_archive(load_archive(path.string()), cfg.data.classes());
  PhantomData d = make_dataset(cfg.data, threads);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  save_archive(path.string(), dataset_archive(d));
  return d;
}

struct RunArtifacts {
  std::filesystem::path dir;
  TrainResult result;
};

/// Trains into <out>/run-<hash>/ holding config.cfg, metrics.jsonl and checkpoint.fquf.
inline RunArtifacts train_run(const RunConfig& cfg, const PhantomData& data, const std::filesystem::path& out,
                              TrainOptions opt = {}) {
  RunArtifacts art;
  art.dir = out / run_dir_name(cfg);
  std::error_code ec;
  std::filesystem::create_directories(art.dir, ec);
  if (ec) throw IoError("cannot create run directory '" + art.dir.string() + "': " + ec.message());
  {
    std::ofstream c(art.dir / "config.cfg");
    if (!c) throw IoError("cannot write '" + (art.dir / "config.cfg").string() + "'");
    c << serialize_config(cfg);
  }
  std::ofstream log(art.dir / "metrics.jsonl", std::ios::trunc);
  if (!log) throw IoError("cannot write '" + (art.dir / "metrics.jsonl").string() + "'");
  opt.log = &log;
  art.result = train(cfg, data, opt);
  save_checkpoint((art.dir / "checkpoint.fquf").string(), art.result.params);
  return art;
}

// ---------------------------------------------------------------------------
// Ablation

struct AblationVariant {
  std::string name;
  Switches switches;
};

/// The five rows: each of FLC, DB downsampling, SLD and FAL off in turn, then all on.
inline std::vector<AblationVariant> ablation_variants(const Switches& base) {
  Switches on = base;
  on.flc = on.db_down = on.sld = on.fal = true;
  std::vector<AblationVariant> v;
  auto off = [&](const char* name, bool Switches::*flag) {
    Switches s = on;
    s.*flag = false;
    v.push_back({name, s});
  };
  off("FLC", &Switches::flc);
  off("DB Downsampling", &Switches::db_down);
  off("SLD", &Switches::sld);
  off("FAL", &Switches::fal);
  v.push_back({"FreqU-FNet", on});
  return v;
}

struct AblationResult {
  std::vector<AblationVariant> variants;
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<MetricsReport>> metrics;  // [variant][seed]

  /// Mean over seeds of foreground class k's Dice for one variant.
  double mean_dice(std::size_t variant, std::size_t k) const {
    double s = 0.0;
    for (const auto& m : metrics[variant]) s += m.dice.at(k);
    return s / static_cast<double>(metrics[variant].size());
  }
  double mean_gap(std::size_t variant) const {
    double s = 0.0;
    for (const auto& m : metrics[variant]) s += m.dice_gap;
    return s / static_cast<double>(metrics[variant].size());
  }
};

/// Trains every (variant, seed) pair; runs are spread over `threads` workers,
/// each single-threaded, so results do not depend on the worker count.
inline AblationResult ablate(const RunConfig& base, const std::vector<std::uint64_t>& seeds, const PhantomData& data,
                             std::size_t threads = 1, const std::filesystem::path* out = nullptr) {
  AblationResult r{ablation_variants(base.model.switches), seeds, {}};
  const std::size_t nv = r.variants.size(), ns = seeds.size();
  std::vector<MetricsReport> flat(nv * ns);
  parallel_for(nv * ns, threads, [&](std::size_t job) {
    RunConfig cfg = base;
    cfg.model.switches = r.variants[job / ns].switches;
    cfg.train.seed = seeds[job % ns];
    flat[job] = out != nullptr ? train_run(cfg, data, *out).result.final_metrics()
                               : train(cfg, data).final_metrics();
  });
  r.metrics.resize(nv);
  for (std::size_t v = 0; v < nv; ++v) r.metrics[v].assign(flat.begin() + static_cast<std::ptrdiff_t>(v * ns),
                                                           flat.begin() + static_cast<std::ptrdiff_t>((v + 1) * ns));
  return r;
}

/// Markdown table with one row per variant; Dice and Gap in percent, averaged over seeds.
inline std::string format_ablation(const AblationResult& r) {
  const std::size_t classes = r.metrics.at(0).at(0).dice.size();
  std::ostringstream os;
  os << "| Variant | FLC | DB Downsampling | SLD | FAL |";
  for (std::size_t k = 1; k < classes; ++k) os << " DICE " << k << " (%) |";
  os << " Gap (%) |\n|---|---|---|---|---|";
  for (std::size_t k = 1; k < classes; ++k) os << "---|";
  os << "---|\n";
  auto mark = [](bool b) { return b ? "on" : "off"; };
  char buf[32];
  for (std::size_t v = 0; v < r.variants.size(); ++v) {
    const Switches& s = r.variants[v].switches;
    os << "| " << r.variants[v].name << " | " << mark(s.flc) << " | " << mark(s.db_down) << " | " << mark(s.sld)
       << " | " << mark(s.fal) << " |";
    for (std::size_t k = 1; k < classes; ++k) {
      std::snprintf(buf, sizeof buf, " %.2f |", 100.0 * r.mean_dice(v, k));
      os << buf;
    }
    std::snprintf(buf, sizeof buf, " %.2f |\n", 100.0 * r.mean_gap(v));
    os << buf;
  }
  os << "\nDice aggregated globally over the validation split; mean over " << r.seeds.size() << " seed(s).\n";
  return os.str();
}

}  // namespace frequnet
