#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "frequnet/checkpoint.hpp"
#include "frequnet/ops.hpp"
#include "frequnet/params.hpp"
#include "frequnet/tape.hpp"
#include "oracles.hpp"

using namespace frequnet;

TEST(Tensor, RejectsZeroExtentAndLengthMismatch) {
  EXPECT_THROW(Tensor(Shape{1, 0, 2, 2}), DimensionError);
  EXPECT_THROW(Tensor(Shape{1, 1, 2, 2}, std::vector<double>(3)), DimensionError);
  Tensor t(Shape{2, 3, 4, 5});
  EXPECT_EQ(t.size(), 120u);
  EXPECT_EQ(t.index(1, 2, 3, 4), 119u);
}

TEST(Conv2d, MatchesBruteForceForStridesAndPads) {
  for (std::size_t k : {1u, 3u, 5u})
    for (std::size_t stride : {1u, 2u}) {
      const std::size_t pad = (k - 1) / 2;
      const Tensor x = oracle::random(Shape{2, 3, 9, 8}, 1 + k);
      const Tensor w = oracle::random(Shape{4, 3, k, k}, 2 + k);
      const Tensor b = oracle::random(Shape{1, 4, 1, 1}, 3 + k);
      const Tensor got = conv2d(x, w, &b, stride, pad);
      const Tensor want = oracle::conv2d(x, w, &b, stride, pad);
      ASSERT_EQ(got.shape(), want.shape()) << "k=" << k << " stride=" << stride;
      EXPECT_LT(max_abs_diff(got, want), 1e-12) << "k=" << k << " stride=" << stride;
    }
}

TEST(Conv2d, OutputShapeLaw) {
  const Tensor x(Shape{1, 2, 7, 6});
  const Tensor w(Shape{5, 2, 3, 3});
  EXPECT_EQ(conv2d(x, w, nullptr, 1, 1).shape(), (Shape{1, 5, 7, 6}));
  EXPECT_EQ(conv2d(x, w, nullptr, 2, 1).shape(), (Shape{1, 5, 4, 3}));
}

TEST(Conv2d, ChannelMismatchIsDimensionError) {
  const Tensor x(Shape{1, 2, 4, 4});
  const Tensor w(Shape{1, 3, 3, 3});
  EXPECT_THROW(conv2d(x, w, nullptr, 1, 1), DimensionError);
}

TEST(Conv2d, IdentityKernelIsIdentity) {
  const Tensor x = oracle::random(Shape{1, 1, 5, 5}, 9);
  Tensor w(Shape{1, 1, 3, 3});
  w.at(0, 0, 1, 1) = 1.0;
  EXPECT_EQ(max_abs_diff(conv2d(x, w, nullptr, 1, 1), x), 0.0);
}

TEST(PixelShuffle, IndexLawAndRoundTrip) {
  const Tensor x = oracle::random(Shape{2, 8, 3, 4}, 4);
  const Tensor y = pixel_shuffle(x, 2);
  ASSERT_EQ(y.shape(), (Shape{2, 2, 6, 8}));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j)
          for (std::size_t r = 0; r < 3; ++r)
            for (std::size_t q = 0; q < 4; ++q)
              ASSERT_EQ(y.at(b, c, 2 * r + i, 2 * q + j), x.at(b, c * 4 + i * 2 + j, r, q));
  EXPECT_EQ(pixel_unshuffle(y, 2), x);
  EXPECT_THROW(pixel_shuffle(Tensor(Shape{1, 3, 2, 2}), 2), DimensionError);
}

TEST(InstanceNorm, ZeroMeanUnitVariancePerSlice) {
  const Tensor x = oracle::random(Shape{2, 3, 6, 5}, 5, -3.0, 7.0);
  const Tensor y = instance_norm(x, 0.0);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 3; ++c) {
      const auto m = oracle::welford(std::span<const double>(y.plane(b, c), 30));
      EXPECT_NEAR(m.mean, 0.0, 1e-12);
      EXPECT_NEAR(m.var, 1.0, 1e-12);
    }
}

TEST(Softmax, RowsSumToOneAndAreShiftInvariant) {
  const Tensor x = oracle::random(Shape{2, 4, 3, 3}, 6, -5.0, 5.0);
  Tensor shifted = x;
  for (double& v : shifted.data()) v += 100.0;
  const Tensor p = softmax_channel(x);
  EXPECT_LT(max_abs_diff(p, softmax_channel(shifted)), 1e-12);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t q = 0; q < 9; ++q) {
      double s = 0.0;
      for (std::size_t c = 0; c < 4; ++c) s += p.plane(b, c)[q];
      EXPECT_NEAR(s, 1.0, 1e-14);
    }
}

TEST(Tape, SharedInputAccumulatesGradient) {
  Tape tape;
  Var a = tape.leaf(Tensor(Shape{1, 1, 1, 3}, {1.0, 2.0, 3.0}));
  Var y = sum(mul(a, a));  // d/da = 2a
  const Gradients g = tape.backward(y);
  EXPECT_DOUBLE_EQ(g[a][0], 2.0);
  EXPECT_DOUBLE_EQ(g[a][2], 6.0);
}

TEST(Tape, ConstantsReceiveNoGradientAndNodesAreOrdered) {
  Tape tape;
  Var a = tape.leaf(Tensor::scalar(2.0));
  Var c = tape.constant(Tensor::scalar(5.0));
  Var y = mul(a, c);
  EXPECT_LT(a.id(), y.id());
  EXPECT_LT(c.id(), y.id());
  const Gradients g = tape.backward(y);
  EXPECT_DOUBLE_EQ(g[a].item(), 5.0);
  EXPECT_FALSE(g.contains(c));
}

TEST(Tape, BackwardOnEmptyTapeIsStateError) {
  Tape t1, t2;
  Var a = t2.leaf(Tensor::scalar(1.0));
  EXPECT_THROW(t1.backward(a), StateError);
}

TEST(Params, InitIsDeterministicAndOrderIndependent) {
  ParamLayout l1, l2;
  l1.conv("a", 4, 3, 3);
  l1.conv("b", 2, 4, 1);
  l2.conv("b", 2, 4, 1);
  l2.conv("a", 4, 3, 3);
  EXPECT_EQ(init_params(l1, 7), init_params(l1, 7));
  EXPECT_EQ(init_params(l1, 7), init_params(l2, 7));
  EXPECT_FALSE(init_params(l1, 7) == init_params(l1, 8));
  const ModelParams p = init_params(l1, 7);
  const double bound = std::sqrt(6.0 / 27.0);
  for (double v : p.at("a.weight").data()) EXPECT_LE(std::abs(v), bound);
  for (double v : p.at("a.bias").data()) EXPECT_EQ(v, 0.0);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  ParamLayout l;
  l.conv("enc.conv", 4, 3, 3);
  l.add("norm.gamma", Shape{1, 4, 1, 1}, Init::ones);
  ModelParams p = init_params(l, 3);
  p.at("norm.gamma")[1] = std::nextafter(1.0, 2.0);
  const auto path = std::filesystem::temp_directory_path() / "frequnet_ckpt_test.fquf";
  save_checkpoint(path.string(), p);
  const ModelParams q = load_checkpoint(path.string());
  EXPECT_EQ(p, q);
  std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptInputsAreIoErrors) {
  ModelParams p;
  p.set("w", Tensor::scalar(1.0));
  std::vector<char> bytes = checkpoint_bytes(p);
  std::vector<char> truncated(bytes.begin(), bytes.end() - 3);
  EXPECT_THROW(checkpoint_from_bytes(truncated), IoError);
  bytes[0] = 'X';
  EXPECT_THROW(checkpoint_from_bytes(bytes), IoError);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/x.fquf"), IoError);
}

TEST(Checkpoint, ArchiveKeepsLabels) {
  TensorArchive a;
  a.tensors.set("img", Tensor::scalar(0.5));
  LabelMap m(1, 2, 2);
  m.data = {0, 1, 2, 65535};
  a.labels.emplace("lab", m);
  const TensorArchive b = archive_from_bytes(archive_bytes(a));
  EXPECT_EQ(b.tensors, a.tensors);
  EXPECT_EQ(b.labels.at("lab"), m);
}
