#include <gtest/gtest.h>

#include <cmath>

#include "frequnet/losses.hpp"
#include "oracles.hpp"

using namespace frequnet;

namespace {

LabelMap random_labels(std::size_t n, std::size_t h, std::size_t w, std::size_t classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  LabelMap m(n, h, w);
  for (auto& v : m.data) v = static_cast<std::int32_t>(rng() % classes);
  return m;
}

Tensor softmax_value(const Tensor& logits) {
  Tape t;
  return softmax_channel(t.constant(logits)).value();
}

double topk_of(const Tensor& logits, const LabelMap& labels, double k) { return topk_ce_loss(logits, labels, k); }

}  // namespace

TEST(TopK, HandSortedExample) {
  // Two classes, true class 0: CE = log(1 + e^(l1 - l0)), so l1 = log(e^ce - 1).
  const double ce[] = {0.1, 0.9, 0.5, 0.3};
  Tensor logits(Shape{1, 2, 2, 2});
  for (std::size_t p = 0; p < 4; ++p) logits.plane(0, 1)[p] = std::log(std::expm1(ce[p]));
  const LabelMap labels(1, 2, 2);
  EXPECT_NEAR(topk_of(logits, labels, 50.0), 0.7, 1e-12);
  EXPECT_NEAR(topk_of(logits, labels, 25.0), 0.9, 1e-12);
}

TEST(TopK, FullSetIsMeanCrossEntropy) {
  const Tensor logits = oracle::random(Shape{2, 3, 4, 4}, 1, -3, 3);
  const LabelMap labels = random_labels(2, 4, 4, 3, 2);
  double mean = 0.0;
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 4; ++x) {
        double z = 0.0;
        for (std::size_t c = 0; c < 3; ++c) z += std::exp(logits.at(b, c, y, x));
        mean += std::log(z) - logits.at(b, static_cast<std::size_t>(labels.at(b, y, x)), y, x);
      }
  EXPECT_NEAR(topk_of(logits, labels, 100.0), mean / 32.0, 1e-12);
}

TEST(TopK, UniformLogitsGiveLogK) {
  const Tensor logits(Shape{1, 4, 3, 3}, 0.3);
  const LabelMap labels = random_labels(1, 3, 3, 4, 3);
  for (double k : {5.0, 50.0, 100.0}) EXPECT_NEAR(topk_of(logits, labels, k), std::log(4.0), 1e-12) << k;
}

TEST(TopK, ShrinkingKNeverLowersTheLoss) {
  const Tensor logits = oracle::random(Shape{2, 3, 8, 8}, 4, -2, 2);
  const LabelMap labels = random_labels(2, 8, 8, 3, 5);
  double prev = 0.0;
  for (double k : {100.0, 60.0, 30.0, 10.0, 1.0}) {
    const double v = topk_of(logits, labels, k);
    EXPECT_GE(v, prev - 1e-15) << k;
    prev = v;
  }
}

TEST(TopK, LabelOutOfRangeIsDataError) {
  LabelMap labels(1, 2, 2);
  labels.data[3] = 3;
  EXPECT_THROW(topk_of(Tensor(Shape{1, 3, 2, 2}), labels, 10.0), DataError);
}

TEST(TopK, LiteralModeIgnoresTheLabel) {
  const Tensor logits = oracle::random(Shape{1, 3, 4, 4}, 6, -2, 2);
  const double a = topk_ce_loss(logits, random_labels(1, 4, 4, 3, 7), 100.0, CeMode::literal);
  const double b = topk_ce_loss(logits, random_labels(1, 4, 4, 3, 8), 100.0, CeMode::literal);
  EXPECT_EQ(a, b);
}

TEST(Dice, PerfectPredictionIsMinusOne) {
  const LabelMap labels = random_labels(2, 6, 6, 3, 9);
  const Tensor t = one_hot(labels, 3);
  EXPECT_NEAR(dice_loss(t, t), -1.0, 1e-6);
}

TEST(Dice, UniformPredictionOnSingleClassImage) {
  const Tensor prob(Shape{1, 2, 4, 4}, 0.5);
  const Tensor target = one_hot(LabelMap(1, 4, 4), 2);
  EXPECT_NEAR(dice_loss(prob, target), -1.0 / 3.0, 1e-5);
}

TEST(Dice, DisjointPredictionIsZero) {
  LabelMap a(1, 4, 4), b(1, 4, 4);
  for (auto& v : b.data) v = 1;
  // class 0 predicted where truth is class 1 and vice versa
  for (std::size_t i = 0; i < 8; ++i) {
    a.data[i] = 1;
    b.data[i] = 0;
  }
  EXPECT_NEAR(dice_loss(one_hot(a, 2), one_hot(b, 2)), 0.0, 1e-5);
}

TEST(Dice, ClassPermutationInvariant) {
  const Tensor prob = softmax_value(oracle::random(Shape{1, 3, 5, 5}, 10, -2, 2));
  const LabelMap labels = random_labels(1, 5, 5, 3, 11);
  const Tensor target = one_hot(labels, 3);
  const std::size_t perm[] = {2, 0, 1};
  Tensor pp(prob.shape()), tp(target.shape());
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t q = 0; q < 25; ++q) {
      pp.plane(0, perm[c])[q] = prob.plane(0, c)[q];
      tp.plane(0, perm[c])[q] = target.plane(0, c)[q];
    }
  EXPECT_NEAR(dice_loss(pp, tp), dice_loss(prob, target), 1e-14);
}

TEST(Fal, ZeroWhenPredictionMatchesOrBothAreConstant) {
  const WaveletSpec spec = WaveletSpec::daubechies(3);
  const Tensor t = one_hot(random_labels(1, 8, 8, 3, 12), 3);
  EXPECT_EQ(freq_aware_loss(t, t, spec), 0.0);
  EXPECT_NEAR(freq_aware_loss(Tensor(Shape{1, 2, 8, 8}, 0.3), Tensor(Shape{1, 2, 8, 8}, 0.9), spec), 0.0, 1e-14);
}

TEST(Fal, CheckerboardMatchesHaarOracle) {
  Tensor prob(Shape{1, 1, 4, 4});
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) prob.at(0, 0, y, x) = (x + y) % 2 ? 1.0 : 0.0;
  const auto h = oracle::haar_dwt2(prob);
  double want = 0.0;
  for (const Tensor* band : {&h.LH, &h.HL, &h.HH}) {
    double s = 0.0;
    for (double v : band->data()) s += std::abs(v);
    want += s / static_cast<double>(band->size()) / 3.0;
  }
  EXPECT_NEAR(freq_aware_loss(prob, Tensor(prob.shape()), WaveletSpec::daubechies(1)), want, 1e-14);
  EXPECT_NEAR(want, 1.0 / 3.0, 1e-14);
}

TEST(Fal, InsensitiveToCommonConstantShift) {
  const WaveletSpec spec = WaveletSpec::daubechies(2);
  const Tensor a = oracle::random(Shape{1, 2, 8, 8}, 13), b = oracle::random(Shape{1, 2, 8, 8}, 14);
  Tensor a2 = a, b2 = b;
  for (double& v : a2.data()) v += 4.0;
  for (double& v : b2.data()) v += 4.0;
  EXPECT_NEAR(freq_aware_loss(a, b, spec), freq_aware_loss(a2, b2, spec), 1e-12);
}

TEST(Fal, OddSizeIsDimensionError) {
  EXPECT_THROW(freq_aware_loss(Tensor(Shape{1, 1, 5, 4}), Tensor(Shape{1, 1, 5, 4}), WaveletSpec::daubechies(1)),
               DimensionError);
}

TEST(TotalLoss, EqualsWeightedSumOfSeparateTerms) {
  const WaveletSpec spec = WaveletSpec::daubechies(2);
  const Tensor logits = oracle::random(Shape{1, 2, 8, 8}, 15, -2, 2);
  const LabelMap labels = random_labels(1, 8, 8, 2, 16);
  const LossWeights w{1.0, 1.0, 0.5, 10.0};
  Tape tape;
  const LossReport r = total_loss(tape.constant(logits), labels, w, spec).report;
  const Tensor prob = softmax_value(logits), target = one_hot(labels, 2);
  const double d = dice_loss(prob, target), k = topk_ce_loss(logits, labels, 10.0),
               f = freq_aware_loss(prob, target, spec);
  EXPECT_NEAR(r.total, d + k + 0.5 * f, 1e-12);
  EXPECT_NEAR(r.dice_term, d, 1e-12);
  EXPECT_NEAR(r.topk_term, k, 1e-12);
  EXPECT_NEAR(r.freq_term, f, 1e-12);
}

TEST(TotalLoss, SingleWeightProjectsOntoOneTerm) {
  const WaveletSpec spec = WaveletSpec::daubechies(1);
  const Tensor logits = oracle::random(Shape{1, 3, 4, 4}, 17, -2, 2);
  const LabelMap labels = random_labels(1, 4, 4, 3, 18);
  Tape tape;
  const LossReport r = total_loss(tape.constant(logits), labels, LossWeights{1.0, 0.0, 0.0, 10.0}, spec).report;
  EXPECT_NEAR(r.total, dice_loss(softmax_value(logits), one_hot(labels, 3)), 1e-12);
  EXPECT_THROW((LossWeights{0.0, 0.0, 0.0, 10.0}.validate()), ConfigError);
  EXPECT_THROW((LossWeights{1.0, 1.0, 0.5, 0.0}.validate()), ConfigError);
}
