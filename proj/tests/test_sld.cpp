#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "frequnet/sld.hpp"
#include "oracles.hpp"

using namespace frequnet;

namespace {

ModelParams upsampler_params(std::size_t channels, const UpsampleConfig& up, std::uint64_t seed = 3) {
  ParamLayout layout;
  declare_native_pathway(layout, "native", channels, up);
  declare_exchange_pathway(layout, "exchange", channels, up);
  declare_adaptive_fuse(layout, "fuse", channels);
  return init_params(layout, seed);
}

void randomize(ModelParams& p, const std::string& prefix, std::uint64_t seed, double amp) {
  for (auto& [name, t] : p)
    if (name.starts_with(prefix)) t = oracle::random(t.shape(), seed++, -amp, amp);
}

}  // namespace

TEST(GridSample, BaseGridReproducesInput) {
  const Tensor x = oracle::random(Shape{2, 4, 5, 7}, 1);
  EXPECT_LT(max_abs_diff(grid_sample(x, base_grid(2, 2, 5, 7), 2), x), 1e-14);
}

TEST(GridSample, CentreOfFourPixelsIsTheirMean) {
  const Tensor x(Shape{1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  const Tensor grid(Shape{1, 2, 1, 1}, {0.0, 0.0});
  EXPECT_DOUBLE_EQ(grid_sample(x, grid).item(), 2.5);
}

TEST(GridSample, MatchesScalarBilinearIncludingClampedBorder) {
  const Tensor x = oracle::random(Shape{1, 2, 6, 5}, 2);
  const Tensor grid = oracle::random(Shape{1, 2, 4, 4}, 3, -1.3, 1.3);
  const Tensor y = grid_sample(x, grid);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t q = 0; q < 16; ++q) {
      const double px = ((grid.plane(0, 0)[q] + 1.0) * 5.0 - 1.0) / 2.0;
      const double py = ((grid.plane(0, 1)[q] + 1.0) * 6.0 - 1.0) / 2.0;
      EXPECT_NEAR(y.plane(0, c)[q], oracle::bilinear_at(x, c, px, py), 1e-13);
    }
}

TEST(GridSample, GroupsUseTheirOwnCoordinates) {
  const Tensor x = oracle::random(Shape{1, 4, 3, 3}, 4);
  Tensor grid = base_grid(1, 2, 3, 3);
  for (std::size_t q = 0; q < 9; ++q) grid.plane(0, 2)[q] = -1.0;  // group 1 pinned to the left edge
  const Tensor y = grid_sample(x, grid, 2);
  for (std::size_t q = 0; q < 9; ++q) {
    EXPECT_NEAR(y.plane(0, 1)[q], x.plane(0, 1)[q], 1e-14);
    EXPECT_NEAR(y.plane(0, 3)[q], x.plane(0, 3)[(q / 3) * 3], 1e-14);
  }
  EXPECT_THROW(grid_sample(x, grid, 3), DimensionError);
}

TEST(NativePathway, ZeroOffsetsGiveBilinearResize) {
  const UpsampleConfig up{2, 4};
  const ModelParams params = upsampler_params(8, up);
  const Tensor x = oracle::random(Shape{1, 8, 4, 4}, 5);
  Tape tape;
  ParamBinding bind(tape, params, false);
  const Tensor y = native_space_pathway(Scope(bind, "native"), tape.constant(x), up).value();
  ASSERT_EQ(y.shape(), (Shape{1, 8, 8, 8}));
  EXPECT_LT(max_abs_diff(y, oracle::resize_bilinear(x, 2)), 1e-10);
}

TEST(NativePathway, ConstantInputStaysConstantUnderAnyOffsets) {
  const UpsampleConfig up{2, 2};
  ModelParams params = upsampler_params(4, up);
  randomize(params, "native", 10, 2.0);
  Tape tape;
  ParamBinding bind(tape, params, false);
  const Tensor y = native_space_pathway(Scope(bind, "native"), tape.constant(Tensor(Shape{1, 4, 3, 3}, 0.7)), up).value();
  for (double v : y.data()) EXPECT_NEAR(v, 0.7, 1e-14);
}

TEST(ExchangePathway, ZeroOffsetsWithIdentityProjectionIsPixelShuffle) {
  const UpsampleConfig up{2, 4};
  ModelParams params = upsampler_params(4, up);
  Tensor& proj = params.at("exchange.proj.weight");
  std::ranges::fill(proj.data(), 0.0);
  proj.at(0, 0, 0, 0) = 1.0;
  const Tensor x = oracle::random(Shape{1, 4, 3, 5}, 6);
  Tape tape;
  ParamBinding bind(tape, params, false);
  const Tensor y = space_channel_pathway(Scope(bind, "exchange"), tape.constant(x), up).value();
  ASSERT_EQ(y.shape(), (Shape{1, 4, 6, 10}));
  const Tensor shuffled = pixel_shuffle(x, 2);
  for (std::size_t q = 0; q < 60; ++q) {
    EXPECT_NEAR(y.plane(0, 0)[q], shuffled.plane(0, 0)[q], 1e-14);
    EXPECT_EQ(y.plane(0, 2)[q], 0.0);
  }
}

TEST(OffsetField, MagnitudeStaysBelowHalf) {
  ParamLayout layout;
  declare_offset_field(layout, "o", 3, 4);
  ModelParams params = init_params(layout, 1);
  randomize(params, "o", 20, 50.0);
  Tape tape;
  ParamBinding bind(tape, params, false);
  const Tensor off = offset_field(Scope(bind, "o"), tape.constant(oracle::random(Shape{2, 3, 6, 6}, 7, -10, 10))).value();
  double worst = 0.0;
  for (double v : off.data()) worst = std::max(worst, std::abs(v));
  EXPECT_LE(worst, 0.5);
  EXPECT_GT(worst, 0.1);
}

TEST(AdaptiveFuse, StartsAsEvenAverage) {
  const UpsampleConfig up{2, 4};
  const ModelParams params = upsampler_params(4, up);
  const Tensor a = oracle::random(Shape{1, 4, 4, 4}, 8), b = oracle::random(Shape{1, 4, 4, 4}, 9);
  Tape tape;
  ParamBinding bind(tape, params, false);
  const Var fa = tape.constant(a), fb = tape.constant(b);
  const Tensor w = fusion_weights(Scope(bind, "fuse"), fa, fb);
  for (double v : w.data()) EXPECT_DOUBLE_EQ(v, 0.5);
  EXPECT_LT(max_abs_diff(adaptive_fuse(Scope(bind, "fuse"), fa, fb).value(), scale(add(a, b), 0.5)), 1e-15);
}

TEST(AdaptiveFuse, OutputIsPointwiseConvex) {
  const UpsampleConfig up{2, 4};
  ModelParams params = upsampler_params(4, up);
  randomize(params, "fuse", 30, 1.0);
  const Tensor a = oracle::random(Shape{2, 4, 5, 5}, 10, -3, 3), b = oracle::random(Shape{2, 4, 5, 5}, 11, -3, 3);
  Tape tape;
  ParamBinding bind(tape, params, false);
  const Var fa = tape.constant(a), fb = tape.constant(b);
  const Tensor y = adaptive_fuse(Scope(bind, "fuse"), fa, fb).value();
  for (std::size_t i = 0; i < y.size(); ++i) {
    EXPECT_GE(y[i], std::min(a[i], b[i]) - 1e-14);
    EXPECT_LE(y[i], std::max(a[i], b[i]) + 1e-14);
  }
  const Tensor w = fusion_weights(Scope(bind, "fuse"), fa, fb);
  for (std::size_t b2 = 0; b2 < 2; ++b2)
    for (std::size_t q = 0; q < 25; ++q) EXPECT_NEAR(w.plane(b2, 0)[q] + w.plane(b2, 1)[q], 1.0, 1e-15);
  EXPECT_THROW(adaptive_fuse(Scope(bind, "fuse"), fa, tape.constant(Tensor(Shape{2, 4, 5, 4}))), DimensionError);
}

TEST(DecodeStage, UpsamplesCarryToSkipResolution) {
  ModelConfig cfg;
  cfg.depth = 2;
  ParamLayout layout;
  declare_decode_stage(layout, "dec", 4, cfg);
  const ModelParams params = init_params(layout, 2);
  Tape tape;
  ParamBinding bind(tape, params, false);
  const Var carry = tape.constant(oracle::random(Shape{1, 8, 4, 4}, 12));
  const Var skip = tape.constant(oracle::random(Shape{1, 4, 8, 8}, 13));
  EXPECT_EQ(decode_stage(Scope(bind, "dec"), carry, skip, cfg).shape(), (Shape{1, 4, 8, 8}));
  const Var wrong = tape.constant(Tensor(Shape{1, 4, 6, 8}));
  EXPECT_THROW(decode_stage(Scope(bind, "dec"), carry, wrong, cfg), DimensionError);
}

TEST(DecodeStage, LearnableEqualsZeroOffsetBaselineAtInit) {
  ModelConfig cfg;
  cfg.depth = 2;
  ParamLayout layout;
  declare_decode_stage(layout, "dec", 4, cfg);
  const ModelParams params = init_params(layout, 4);
  const Tensor carry = oracle::random(Shape{2, 8, 4, 4}, 14);
  Tape tape;
  ParamBinding bind(tape, params, false);
  const Tensor learn = upsample_stage(Scope(bind, "dec.up"), tape.constant(carry), cfg).value();
  cfg.sld_mode = SldMode::baseline;
  const Tensor base = upsample_stage(Scope(bind, "dec.up"), tape.constant(carry), cfg).value();
  EXPECT_EQ(learn, base);
}

TEST(UpsampleNearest, RepeatsEachPixel) {
  const Tensor x(Shape{1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  const Tensor y = upsample_nearest(x, 2);
  const Tensor want(Shape{1, 1, 4, 4}, {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4});
  EXPECT_EQ(y, want);
}
