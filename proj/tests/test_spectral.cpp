#include <gtest/gtest.h>

#include <cmath>

#include "frequnet/spectral.hpp"
#include "oracles.hpp"

using namespace frequnet;

namespace {

double spectrum_error(const Tensor& x) {
  const ComplexSpectrum f = fft2_centered(x);
  const auto ref = oracle::dft2_centered(x);
  double err = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) err = std::max(err, std::abs(ref[i] - std::complex(f.re[i], f.im[i])));
  return err;
}

}  // namespace

TEST(Fft, MatchesDirectDftOnPowerOfTwoAndOtherSizes) {
  for (std::size_t n : {2u, 4u, 6u, 8u, 12u}) {
    EXPECT_LT(spectrum_error(oracle::random(Shape{1, 1, n, n}, n)), 1e-9) << n << "x" << n;
  }
  EXPECT_LT(spectrum_error(oracle::random(Shape{1, 1, 4, 6}, 99)), 1e-9);
  EXPECT_LT(spectrum_error(oracle::random(Shape{1, 1, 5, 3}, 98)), 1e-9);
}

TEST(Fft, ZeroFrequencyIsAtTheCentre) {
  const Tensor x(Shape{1, 1, 8, 6}, 2.0);
  const ComplexSpectrum f = fft2_centered(x);
  EXPECT_NEAR(f.re.at(0, 0, 4, 3), 2.0 * 48, 1e-12);
  EXPECT_NEAR(squared_norm(f.re) + squared_norm(f.im), 96.0 * 96.0, 1e-9);
}

TEST(Fft, InverseRecoversInput) {
  const Tensor x = oracle::random(Shape{2, 2, 8, 12}, 5);
  const ComplexSpectrum back = ifft2_centered(fft2_centered(x));
  EXPECT_LT(max_abs_diff(back.re, x), 1e-12);
  EXPECT_LT(std::sqrt(squared_norm(back.im)), 1e-12);
}

TEST(Mask, CentredBlockOfHalfWidthTau) {
  const FreqMask m = build_mask(8, 8, 0.25);
  // |u - 4| <= 2 and |v - 4| <= 2
  EXPECT_EQ(m.count(), 25u);
  EXPECT_TRUE(m.pass(4, 4));
  EXPECT_TRUE(m.pass(2, 6));
  EXPECT_FALSE(m.pass(1, 4));
  EXPECT_THROW(build_mask(8, 8, 0.0), ConfigError);
  EXPECT_THROW(build_mask(8, 8, 1.0), ConfigError);
}

TEST(Lowpass, IsIdempotent) {
  for (double tau : {0.1, 0.25, 0.4}) {
    const Tensor x = oracle::random(Shape{1, 2, 16, 12}, 7);
    const Tensor once = lowpass_filter(x, tau);
    EXPECT_LT(max_abs_diff(lowpass_filter(once, tau), once), 1e-9) << tau;
  }
}

TEST(Lowpass, WideMaskIsIdentity) {
  const Tensor x = oracle::random(Shape{1, 1, 10, 8}, 8);
  EXPECT_LT(max_abs_diff(lowpass_filter(x, 0.5), x), 1e-10);
  EXPECT_LT(max_abs_diff(lowpass_filter(x, 0.75), x), 1e-10);
}

TEST(Lowpass, KeepsConstantsAndRemovesNyquistCheckerboard) {
  Tensor c(Shape{1, 1, 8, 8}, 3.0);
  EXPECT_LT(max_abs_diff(lowpass_filter(c, 0.1), c), 1e-12);
  Tensor checker(Shape{1, 1, 8, 8});
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) checker.at(0, 0, y, x) = (x + y) % 2 ? 1.0 : -1.0;
  EXPECT_LT(std::sqrt(squared_norm(lowpass_filter(checker, 0.25))), 1e-12);
}

TEST(Lowpass, IsSelfAdjoint) {
  const Tensor a = oracle::random(Shape{1, 1, 12, 10}, 9);
  const Tensor b = oracle::random(Shape{1, 1, 12, 10}, 10);
  EXPECT_NEAR(dot(lowpass_filter(a, 0.2), b), dot(a, lowpass_filter(b, 0.2)), 1e-12);
}

TEST(Flc, AllPolicyWithWideMaskReproducesDwt) {
  const WaveletSpec spec = WaveletSpec::daubechies(2);
  const Tensor x = oracle::random(Shape{1, 2, 8, 8}, 11);
  const auto f = flc_block(x, 0.5, spec, SubbandPolicy::all);
  const auto d = dwt2(x, spec);
  EXPECT_LT(max_abs_diff(f.LL, d.LL), 1e-10);
  EXPECT_LT(max_abs_diff(f.HH, d.HH), 1e-10);
}

TEST(Flc, LlOnlyPolicyDropsDetailContent) {
  const WaveletSpec spec = WaveletSpec::daubechies(1);
  // A pure diagonal-detail signal: after LL selection nothing survives.
  const Tensor x = idwt2({Tensor(Shape{1, 1, 4, 4}), Tensor(Shape{1, 1, 4, 4}), Tensor(Shape{1, 1, 4, 4}),
                          oracle::random(Shape{1, 1, 4, 4}, 12)},
                         spec);
  const auto f = flc_block(x, 0.25, spec, SubbandPolicy::ll_only);
  for (const Tensor* t : {&f.LL, &f.LH, &f.HL, &f.HH}) EXPECT_LT(std::sqrt(squared_norm(*t)), 1e-12);
}

TEST(Flc, OddSizeIsDimensionError) {
  EXPECT_THROW(flc_block(Tensor(Shape{1, 1, 6, 5}), 0.25, WaveletSpec::daubechies(1), SubbandPolicy::all),
               DimensionError);
}
