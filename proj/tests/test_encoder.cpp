#include <gtest/gtest.h>

#include <algorithm>

#include "frequnet/encoder.hpp"
#include "oracles.hpp"

using namespace frequnet;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.depth = 2;
  cfg.base_width = 8;
  cfg.wavelet_order = 2;
  return cfg;
}

ModelParams stage_params(const ModelConfig& cfg, std::size_t channels, std::uint64_t seed = 5) {
  ParamLayout layout;
  declare_encode_stage(layout, "enc", channels, cfg);
  return init_params(layout, seed);
}

EncoderStageOutput<Tensor> run_stage(const ModelConfig& cfg, const ModelParams& params, const Tensor& x) {
  Tape tape;
  ParamBinding bind(tape, params, false);
  const auto out = encode_stage(Scope(bind, "enc"), tape.constant(x), cfg);
  return {out.skip.value(), out.carry.value()};
}

}  // namespace

TEST(ConvBlock, KeepsSpatialSizeAndZeroWeightsGiveZeros) {
  const ModelConfig cfg = small_config();
  ParamLayout layout;
  declare_conv_block(layout, "b", 3, 5);
  ModelParams params = init_params(layout, 1);
  Tape tape;
  {
    ParamBinding bind(tape, params, false);
    EXPECT_EQ(conv_block(Scope(bind, "b"), tape.constant(oracle::random(Shape{2, 3, 6, 4}, 1)), cfg).shape(),
              (Shape{2, 5, 6, 4}));
  }
  // Instance norm of an all-zero map is zero; beta = 0 and LeakyReLU(0) = 0.
  for (const char* w : {"b.conv1.weight", "b.conv2.weight"}) std::ranges::fill(params.at(w).data(), 0.0);
  ParamBinding bind(tape, params, false);
  const Tensor y = conv_block(Scope(bind, "b"), tape.constant(oracle::random(Shape{1, 3, 4, 4}, 2)), cfg).value();
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(EncodeStage, ShapeLawHalvesSizeAndDoublesChannels) {
  const ModelConfig cfg = small_config();
  const auto out = run_stage(cfg, stage_params(cfg, 8), oracle::random(Shape{1, 8, 16, 16}, 3));
  EXPECT_EQ(out.skip.shape(), (Shape{1, 8, 16, 16}));
  EXPECT_EQ(out.carry.shape(), (Shape{1, 16, 8, 8}));
}

TEST(EncodeStage, EveryStageStaysEvenOnSixtyFour) {
  ModelConfig cfg = small_config();
  std::size_t c = 1, h = 64;
  Tensor x = oracle::random(Shape{1, 1, h, h}, 4);
  for (int stage = 0; stage < 4; ++stage) {
    ParamLayout layout;
    declare_encode_stage(layout, "enc", c, cfg);
    const auto out = run_stage(cfg, init_params(layout, 6), x);
    h /= 2;
    c *= 2;
    ASSERT_EQ(out.carry.shape(), (Shape{1, c, h, h}));
    x = out.carry;
  }
}

TEST(EncodeStage, SwitchesOnlyAffectTheCarry) {
  ModelConfig on = small_config(), off = small_config();
  off.switches.flc = false;
  const ModelParams params = stage_params(on, 4);
  const Tensor x = oracle::random(Shape{1, 4, 8, 8}, 7);
  const auto a = run_stage(on, params, x);
  const auto b = run_stage(off, params, x);
  EXPECT_EQ(a.skip, b.skip);
  EXPECT_GT(max_abs_diff(a.carry, b.carry), 0.0);
}

TEST(EncodeStage, OddSizeIsDimensionError) {
  const ModelConfig cfg = small_config();
  EXPECT_THROW(run_stage(cfg, stage_params(cfg, 2), Tensor(Shape{1, 2, 6, 5})), DimensionError);
}

TEST(Downsample, PoolingPathKeepsConstants) {
  ModelConfig cfg = small_config();
  cfg.switches.flc = false;
  cfg.switches.db_down = false;
  ModelParams params = stage_params(cfg, 2);
  // 1x1 map: carry channel o = input channel o % 2
  Tensor& w = params.at("enc.down.weight");
  std::ranges::fill(w.data(), 0.0);
  for (std::size_t o = 0; o < 4; ++o) w.at(o, o % 2, 0, 0) = 1.0;
  Tensor skip(Shape{1, 2, 8, 8});
  for (std::size_t q = 0; q < 64; ++q) {
    skip.plane(0, 0)[q] = 1.5;
    skip.plane(0, 1)[q] = -2.0;
  }
  Tape tape;
  ParamBinding bind(tape, params, false);
  const Tensor carry = downsample(Scope(bind, "enc"), tape.constant(skip), cfg).value();
  ASSERT_EQ(carry.shape(), (Shape{1, 4, 4, 4}));
  for (std::size_t o = 0; o < 4; ++o)
    for (std::size_t q = 0; q < 16; ++q) EXPECT_DOUBLE_EQ(carry.plane(0, o)[q], o % 2 ? -2.0 : 1.5);
}

TEST(Downsample, WideMaskWithAllSubbandsIsTheWaveletTransform) {
  ModelConfig cfg = small_config();
  cfg.tau = 0.5;
  cfg.subband_policy = SubbandPolicy::all;
  const std::size_t C = 3;
  ModelParams params = stage_params(cfg, C);
  // 4C -> 2C selection of the first two packed subbands (LL, LH)
  Tensor& w = params.at("enc.down.weight");
  std::ranges::fill(w.data(), 0.0);
  for (std::size_t o = 0; o < 2 * C; ++o) w.at(o, o, 0, 0) = 1.0;
  const Tensor skip = oracle::random(Shape{2, C, 8, 8}, 8);
  Tape tape;
  ParamBinding bind(tape, params, false);
  const Tensor carry = downsample(Scope(bind, "enc"), tape.constant(skip), cfg).value();
  const auto d = dwt2(skip, cfg.wavelet());
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t q = 0; q < 16; ++q) {
        EXPECT_NEAR(carry.plane(b, c)[q], d.LL.plane(b, c)[q], 1e-10);
        EXPECT_NEAR(carry.plane(b, C + c)[q], d.LH.plane(b, c)[q], 1e-10);
      }
}
