#pragma once

// Command-line front end. Exit codes: 0 success, 2 configuration error,
// 3 numeric failure (including a failed gradcheck), 4 I/O error, 1 anything else.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "frequnet/checkpoint.hpp"
#include "frequnet/config.hpp"
#include "frequnet/gradcheck.hpp"
#include "frequnet/gradcheck_suite.hpp"
#include "frequnet/parallel.hpp"
#include "frequnet/train.hpp"

namespace frequnet::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfig = 2, kNumeric = 3, kIo = 4 };

/// Test seams: extra gradcheck cases and output streams.
struct Hooks {
  std::vector<GradcheckCase> extra_gradcheck;
  std::ostream* out = &std::cout;
  std::ostream* err = &std::cerr;
};

struct CommonOptions {
  std::string config;
  std::vector<std::string> overrides;
  std::string out = "runs";
  std::int64_t seed = -1;
  std::size_t threads = 0;

  RunConfig resolve() const {
    std::vector<std::string> ov = overrides;
    if (seed >= 0) ov.push_back("train.seed=" + std::to_string(seed));
    return config.empty() ? parse_config("", ov) : load_config(config, ov);
  }
};

namespace detail {

inline void add_common(CLI::App* app, CommonOptions& o) {
  app->add_option("--config", o.config, "config file (section.key = value)");
  app->add_option("--override", o.overrides, "key=value, repeatable; wins over the file")->allow_extra_args(false);
  app->add_option("--out", o.out, "output root")->capture_default_str();
  app->add_option("--seed", o.seed, "sets train.seed");
  app->add_option("--threads", o.threads, "worker threads (default: FREQUNET_THREADS, else all cores)");
}

inline std::string report_json(const MetricsReport& m) {
  return json{{"dice", m.dice},
              {"dice_gap", m.dice_gap},
              {"pred_count", m.pred_count},
              {"true_count", m.true_count},
              {"intersection", m.intersection},
              {"absent", m.absent},
              {"aggregation", m.aggregation}}
      .dump();
}

/// One file per series, two columns (x, value).
inline void write_plot_data(const std::string& log_path, const std::filesystem::path& out, std::ostream& msg) {
  std::ifstream in(log_path);
  if (!in) throw IoError("cannot open metrics log '" + log_path + "'");
  std::map<std::string, std::vector<std::pair<double, double>>> series;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    json j;
    try {
      j = check_log_line(line);
    } catch (const DataError& e) {
      throw IoError(log_path + ":" + std::to_string(n) + ": " + e.what());
    }
    const std::string type = j["type"];
    if (type == "header") continue;
    const std::string xkey = type == "step" ? "step" : "epoch";
    const double x = j[xkey].get<double>();
    for (const auto& [key, v] : j.items()) {
      if (key == xkey || key == "epoch" || key == "type") continue;
      if (v.is_number()) series[type + "_" + key].emplace_back(x, v.get<double>());
      if (v.is_array())
        for (std::size_t k = 0; k < v.size(); ++k)
          if (v[k].is_number()) series[type + "_" + key + "_" + std::to_string(k)].emplace_back(x, v[k].get<double>());
    }
  }
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw IoError("cannot create '" + out.string() + "': " + ec.message());
  for (const auto& [name, pts] : series) {
    const std::filesystem::path p = out / (name + ".dat");
    std::ofstream f(p);
    if (!f) throw IoError("cannot write '" + p.string() + "'");
    const std::string xname = name.rfind("step_", 0) == 0 ? "step" : "epoch";
    f << "# " << xname << ' ' << name << '\n';
    for (const auto& [x, y] : pts) f << frequnet::detail::format_double(x) << ' ' << frequnet::detail::format_double(y) << '\n';
  }
  msg << "wrote " << series.size() << " series to " << out.string() << '\n';
}

}  // namespace detail

inline int run(int argc, const char* const* argv, const Hooks& hooks = {}) {
  std::ostream& out = *hooks.out;
  std::ostream& err = *hooks.err;
  CLI::App app{"Frequency-domain U-Net segmentation toolkit"};
  app.require_subcommand(1);

  CommonOptions common;
  auto* train_cmd = app.add_subcommand("train", "train one configuration into <out>/run-<hash>/");
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the validation split");
  auto* ablate_cmd = app.add_subcommand("ablate", "five-row switch ablation");
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of every op");
  auto* gen_cmd = app.add_subcommand("gen-data", "generate and cache the phantom dataset");
  auto* plot_cmd = app.add_subcommand("plot-data", "split a metrics log into per-series column files");
  for (auto* c : {train_cmd, eval_cmd, ablate_cmd, gen_cmd}) detail::add_common(c, common);

  std::string checkpoint;
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file (default: the run directory of the config)");
  std::size_t seeds = 1;
  ablate_cmd->add_option("--seeds", seeds, "seeds per variant, starting at train.seed")->check(CLI::PositiveNumber);
  std::string log_path;
  std::string plot_out = "plot";
  plot_cmd->add_option("--log", log_path, "metrics.jsonl to convert")->required();
  plot_cmd->add_option("--out", plot_out, "output directory")->capture_default_str();
  std::uint64_t grad_seed = 11;
  grad_cmd->add_option("--seed", grad_seed, "seed for the random test points");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kConfig;
  }

  try {
    if (grad_cmd->parsed()) {
      std::vector<GradcheckCase> cases = default_gradcheck_cases(grad_seed);
      cases.insert(cases.end(), hooks.extra_gradcheck.begin(), hooks.extra_gradcheck.end());
      bool ok = true;
      char buf[160];
      for (const GradcheckCase& c : cases) {
        const GradcheckResult r = run_gradcheck(c);
        ok = ok && r.passed;
        std::snprintf(buf, sizeof buf, "%-28s worst_rel_err %.3e  threshold %.0e  checked %6zu  %s\n", r.name.c_str(),
                      r.max_rel_error, r.threshold, r.checked, r.passed ? "PASS" : "FAIL");
        out << buf;
      }
      out << (ok ? "all ops pass\n" : "gradcheck FAILED\n");
      return ok ? kOk : kNumeric;
    }
    if (plot_cmd->parsed()) {
      detail::write_plot_data(log_path, plot_out, out);
      return kOk;
    }

    const RunConfig cfg = common.resolve();
    const std::size_t threads = resolve_threads(common.threads);
    const std::filesystem::path root = common.out;
    const PhantomData data = load_or_make_dataset(cfg, root / "data", threads);

    if (gen_cmd->parsed()) {
      out << "dataset " << (root / "data" / ("data-" + data_hash(cfg) + ".fquf")).string() << ": "
          << data.train.size() << " train, " << data.val.size() << " val, " << cfg.data.classes()
          << " classes, min high-band share " << data.min_high_band_fraction << '\n';
      return kOk;
    }
    if (train_cmd->parsed()) {
      TrainOptions opt;
      opt.threads = threads;
      opt.on_epoch = [&](const EpochRecord& r) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "epoch %3zu  lr %.2e  train %.4f  val %.4f  gap %.4f\n", r.epoch, r.lr,
                      r.train_loss, r.val_loss, r.val.dice_gap);
        out << buf << std::flush;
      };
      const RunArtifacts art = train_run(cfg, data, root, opt);
      out << "run directory " << art.dir.string() << '\n'
          << "validation " << detail::report_json(art.result.final_metrics()) << '\n';
      return kOk;
    }
    if (eval_cmd->parsed()) {
      const std::string path =
          checkpoint.empty() ? (root / run_dir_name(cfg) / "checkpoint.fquf").string() : checkpoint;
      const MetricsReport m = evaluate(load_checkpoint(path), data.val, cfg, threads);
      out << detail::report_json(m) << '\n';
      return kOk;
    }
    if (ablate_cmd->parsed()) {
      std::vector<std::uint64_t> seed_list;
      for (std::size_t i = 0; i < seeds; ++i) seed_list.push_back(cfg.train.seed + i);
      const AblationResult r = ablate(cfg, seed_list, data, threads, &root);
      const std::string table = format_ablation(r);
      std::ofstream f(root / "ablation.md");
      if (!f) throw IoError("cannot write '" + (root / "ablation.md").string() + "'");
      f << table;
      out << table;
      return kOk;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const DimensionError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kConfig;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}

}  // namespace frequnet::cli
