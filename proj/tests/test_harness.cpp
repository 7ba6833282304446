#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "frequnet/spectral.hpp"
#include "frequnet/train.hpp"
#include "oracles.hpp"

using namespace frequnet;

namespace {

PhantomSpec tiny_spec() {
  PhantomSpec s;
  s.height = s.width = 32;
  s.train_count = 4;
  s.val_count = 2;
  return s;
}

RunConfig tiny_run(std::size_t epochs = 1) {
  RunConfig cfg;
  cfg.model.depth = 2;
  cfg.model.base_width = 4;
  cfg.model.wavelet_order = 2;
  cfg.data = tiny_spec();
  cfg.train.epochs = epochs;
  cfg.train.batch_size = 2;
  return cfg;
}

// Share of a plane's energy outside the centred pass block, from the spectral module.
double outside_share(const Tensor& plane, double tau) {
  const ComplexSpectrum f = fft2_centered(plane);
  const FreqMask m = build_mask(plane.shape().h, plane.shape().w, tau);
  double all = 0.0, out = 0.0;
  for (std::size_t u = 0; u < plane.shape().h; ++u)
    for (std::size_t v = 0; v < plane.shape().w; ++v) {
      const double e = std::norm(std::complex(f.re.at(0, 0, u, v), f.im.at(0, 0, u, v)));
      all += e;
      if (!m.pass(u, v)) out += e;
    }
  return out / all;
}

}  // namespace

// ---------------------------------------------------------------------------
// Phantoms

TEST(Phantom, SameSeedAndIndexGiveIdenticalSamples) {
  const PhantomSpec s = tiny_spec();
  const Sample a = generate_phantom(s, 3), b = generate_phantom(s, 3);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.label, b.label);
  EXPECT_FALSE(a.image == generate_phantom(s, 4).image);
}

TEST(Phantom, NoiselessSingleEllipseImageSupportEqualsLabelSupport) {
  PhantomSpec s = tiny_spec();
  s.foreground = {{0.2, Band::low, ShapeFamily::ellipse}};
  s.noise = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    const Sample p = generate_phantom(s, i);
    for (std::size_t q = 0; q < 32 * 32; ++q) ASSERT_EQ(p.image[q] != 0.0, p.label.data[q] != 0) << "pixel " << q;
  }
}

TEST(Phantom, MinorityTexturePassesIndependentSpectralAudit) {
  PhantomSpec s;
  s.noise = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    const Sample p = generate_phantom(s, i);
    // Inside the blob the image is host level (1.0) plus texture; everything else is texture-free.
    Tensor texture(Shape{1, 1, s.height, s.width});
    for (std::size_t q = 0; q < texture.size(); ++q)
      if (p.label.data[q] == 2) texture[q] = p.image[q] - 1.0;
    const double share = outside_share(texture, 0.25);
    EXPECT_GE(share, 0.8) << "sample " << i;
    EXPECT_NEAR(share, p.high_band_fraction, 1e-9) << "sample " << i;
  }
}

TEST(Phantom, InfeasibleFractionsAreConfigErrors) {
  PhantomSpec s = tiny_spec();
  s.foreground = {{0.6, Band::low, ShapeFamily::ellipse}, {0.5, Band::low, ShapeFamily::ellipse}};
  EXPECT_THROW(s.validate(), ConfigError);
  s.foreground = {{0.001, Band::low, ShapeFamily::ellipse}};  // about one pixel
  EXPECT_THROW(s.validate(), ConfigError);
  s = tiny_spec();
  s.val_count = 0;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Phantom, DatasetIsAPureFunctionOfTheSpec) {
  const PhantomData a = make_dataset(tiny_spec(), 1), b = make_dataset(tiny_spec(), 3);
  EXPECT_EQ(a.train.images, b.train.images);
  EXPECT_EQ(a.val.labels, b.val.labels);
}

// ---------------------------------------------------------------------------
// Normalisation

TEST(Normalization, StatisticsComeFromTheTrainingSplitOnly) {
  const PhantomSpec s = tiny_spec();
  const PhantomData d = make_dataset(s);
  std::vector<double> raw_train, raw_val;
  for (std::size_t i = 0; i < s.train_count + s.val_count; ++i) {
    const Sample p = generate_phantom(s, i);
    auto& dst = i < s.train_count ? raw_train : raw_val;
    dst.insert(dst.end(), p.image.data().begin(), p.image.data().end());
  }
  const oracle::Moments m = oracle::welford(raw_train);
  EXPECT_NEAR(d.stats.mean, m.mean, 1e-12);
  EXPECT_NEAR(d.stats.std, std::sqrt(m.var), 1e-12);

  const oracle::Moments t = oracle::welford(d.train.images.data());
  EXPECT_LT(std::abs(t.mean), 1e-10);
  EXPECT_NEAR(std::sqrt(t.var), 1.0, 1e-6);

  // validation pixels use the training mean and deviation, not their own
  for (std::size_t q = 0; q < raw_val.size(); ++q)
    ASSERT_NEAR(d.val.images[q], (raw_val[q] - m.mean) / std::sqrt(m.var), 1e-12);
  EXPECT_GT(std::abs(oracle::welford(d.val.images.data()).mean), 1e-6);
}

TEST(Normalization, ConstantDataMapsToZeros) {
  const Tensor c(Shape{3, 1, 4, 4}, 2.5);
  const Tensor n = normalize(c, fit_normalization(c));
  for (double v : n.data()) EXPECT_EQ(v, 0.0);
}

// ---------------------------------------------------------------------------
// Optimisation

TEST(Schedule, HalvesAtPatienceBoundariesAndNeverBelowFloor) {
  PlateauConfig pc;  // lr0 4e-3, patience 5, floor 1e-6
  PlateauScheduler sched(pc);
  // Independent simulation: a flat sequence sets the best on epoch 1, then
  // every run of `patience` stale epochs halves once.
  for (std::size_t epoch = 1; epoch <= 100; ++epoch) {
    const double lr = sched.observe(0.75);
    const auto halvings = static_cast<int>((epoch - 1) / pc.patience);
    EXPECT_DOUBLE_EQ(lr, std::max(1e-6, std::ldexp(4e-3, -halvings))) << "epoch " << epoch;
    EXPECT_GE(lr, 1e-6);
  }
}

TEST(Schedule, ImprovementsSmallerThanMinDeltaCountAsStale) {
  PlateauScheduler sched;
  // five drifts that stay within min_delta of the first value
  double v = 1.0;
  double lr = 0.0;
  for (int i = 0; i < 6; ++i) lr = sched.observe(v -= 1.5e-5);
  EXPECT_DOUBLE_EQ(lr, 2e-3);
  PlateauScheduler fresh;
  v = 1.0;
  for (int i = 0; i < 6; ++i) lr = fresh.observe(v -= 2e-4);
  EXPECT_DOUBLE_EQ(lr, 4e-3);
}

TEST(Training, OneStepMovesEveryParameterWithGradient) {
  const RunConfig cfg = tiny_run();
  const PhantomData d = make_dataset(cfg.data);
  ModelParams params = init_params(cfg.model, 1);
  const ModelParams before = params;
  const StepOutput s = loss_and_grads(params, d.train.batch({0, 1}), cfg);
  Adam adam;
  adam.step(params, s.grads, 1e-3);
  std::size_t live = 0;
  for (const auto& [name, g] : s.grads) {
    bool nonzero = false;
    for (double v : g.data()) nonzero = nonzero || v != 0.0;
    if (!nonzero) continue;
    ++live;
    EXPECT_GT(max_abs_diff(params.at(name), before.at(name)), 0.0) << name;
  }
  EXPECT_GT(live, s.grads.size() / 2);
}

TEST(Training, SameConfigGivesIdenticalLogs) {
  const RunConfig cfg = tiny_run(2);
  const PhantomData d = make_dataset(cfg.data);
  const TrainResult a = train(cfg, d), b = train(cfg, d);
  EXPECT_EQ(a.log, b.log);
  EXPECT_EQ(a.params, b.params);
  ASSERT_EQ(a.history.size(), 2u);
}

TEST(Training, MemorisesTwoSamples) {
  RunConfig cfg = tiny_run(300);
  cfg.optim.plateau.patience = 1000;  // the held-out loss would otherwise stall the rate
  cfg.data.train_count = 2;
  cfg.data.val_count = 1;
  cfg.data.noise = 0.05;
  const PhantomData d = make_dataset(cfg.data);
  const TrainResult r = train(cfg, d);
  const MetricsReport m = evaluate(r.params, d.train, cfg);
  for (std::size_t k = 0; k < m.dice.size(); ++k) EXPECT_GE(m.dice[k], 0.99) << "class " << k;
}

TEST(Evaluate, ClassMismatchIsConfigError) {
  RunConfig cfg = tiny_run();
  const PhantomData d = make_dataset(cfg.data);
  const ModelParams params = init_params(cfg.model, 1);
  RunConfig other = cfg;
  other.model.classes = 4;
  other.data.set_classes(4);
  EXPECT_THROW(evaluate(params, d.val, other), ConfigError);
}

TEST(Evaluate, UntrainedDiceIsBoundedAndSingleForegroundHasNoGap) {
  RunConfig cfg = tiny_run();
  cfg.model.classes = 2;
  cfg.data.set_classes(2);
  cfg.data.foreground[0] = {0.3, Band::low, ShapeFamily::ellipse};
  const PhantomData d = make_dataset(cfg.data);
  const MetricsReport m = evaluate(init_params(cfg.model, 2), d.val, cfg);
  for (double v : m.dice) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_EQ(m.dice_gap, 0.0);
  EXPECT_EQ(m.aggregation, "global");
}

TEST(Training, NonFiniteLossNamesTheTerm) {
  try {
    LossReport r;
    r.topk_term = std::nan("");
    r.total = std::nan("");
    detail::require_finite(r, 3, 7);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("topk"), std::string::npos) << e.what();
  }
}

// ---------------------------------------------------------------------------
// Ablation and logs

TEST(Ablation, FiveRowsWithFixedColumns) {
  RunConfig cfg = tiny_run();
  const PhantomData d = make_dataset(cfg.data);
  const AblationResult r = ablate(cfg, {1}, d);
  ASSERT_EQ(r.variants.size(), 5u);
  EXPECT_EQ(r.variants[4].name, "FreqU-FNet");
  EXPECT_FALSE(r.variants[0].switches.flc);
  EXPECT_FALSE(r.variants[2].switches.sld);
  EXPECT_TRUE(r.variants[2].switches.flc);
  const std::string table = format_ablation(r);
  std::istringstream in(table);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "| Variant | FLC | DB Downsampling | SLD | FAL | DICE 1 (%) | DICE 2 (%) | Gap (%) |");
  std::size_t rows = 0;
  while (std::getline(in, line))
    if (line.starts_with("| ") && !line.starts_with("|---")) ++rows;
  EXPECT_EQ(rows, 5u);
}

TEST(MetricsLog, EveryLineMatchesTheGoldenSchema) {
  std::ifstream f(std::string(FREQUNET_GOLDEN_DIR) + "/metrics_schema.json");
  ASSERT_TRUE(f) << "golden schema missing";
  const json golden = json::parse(f);
  EXPECT_EQ(golden, metrics_schema());

  const RunConfig cfg = tiny_run(1);
  const TrainResult r = train(cfg, make_dataset(cfg.data));
  ASSERT_GE(r.log.size(), 3u);
  std::map<std::string, std::size_t> seen;
  for (const std::string& line : r.log) {
    const json j = json::parse(line);
    const std::string type = j.at("type");
    ASSERT_TRUE(golden.contains(type)) << line;
    const json& keys = golden[type];
    EXPECT_EQ(j.size(), keys.size()) << line;
    for (const auto& [key, kind] : keys.items()) {
      ASSERT_TRUE(j.contains(key)) << type << " lacks " << key;
      EXPECT_EQ(j[key].type_name(), kind.get<std::string>()) << type << "." << key;
    }
    EXPECT_NO_THROW(check_log_line(line));
    ++seen[type];
  }
  EXPECT_EQ(seen["header"], 1u);
  EXPECT_EQ(seen["step"], 2u);
  EXPECT_EQ(seen["epoch"], 1u);
  EXPECT_THROW(check_log_line(R"({"type":"epoch","epoch":1})"), DataError);
  EXPECT_THROW(check_log_line("not json"), DataError);
}
