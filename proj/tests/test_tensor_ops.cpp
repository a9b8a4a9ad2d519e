#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "fuse3d/conv.hpp"
#include "fuse3d/ops.hpp"
#include "fuse3d/rng.hpp"
#include "fuse3d/tensor.hpp"
#include "oracles.hpp"

namespace {

using fuse3d::PoolMode;
using fuse3d::ResizeDir;
using fuse3d::Rng;
using fuse3d::Shape;
using Tensor = fuse3d::Tensor<double>;

TEST(Conv3d, ScalarAffine) {
  auto x = Tensor::from({1, 1, 1, 1}, {2.0});
  auto w = Tensor::from({1, 1, 1, 1, 1}, {3.0});
  auto b = Tensor::from({1}, {1.0});
  auto y = fuse3d::conv3d(x, w, b, 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(y.data()[0], 7.0);
}

TEST(Conv3d, DeltaKernelIsIdentity) {
  Rng rng(11);
  auto x = Tensor::zeros({2, 4, 4, 4});
  oracles::fill_uniform(x, rng);
  auto w = Tensor::zeros({2, 2, 3, 3, 3});
  // Delta at the kernel center of the matching input channel.
  for (int c = 0; c < 2; ++c)
    w.data()[((((c * 2 + c) * 3 + 1) * 3 + 1) * 3 + 1)] = 1.0;
  auto b = Tensor::zeros({2});
  auto y = fuse3d::conv3d(x, w, b, 1, 1);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i)
    EXPECT_DOUBLE_EQ(y.data()[i], x.data()[i]);
}

TEST(Conv3d, MatchesNaiveLoopOracle) {
  Rng rng(22);
  auto x = Tensor::zeros({2, 4, 4, 4});
  auto w = Tensor::zeros({3, 2, 3, 3, 3});
  auto b = Tensor::zeros({3});
  oracles::fill_uniform(x, rng);
  oracles::fill_uniform(w, rng);
  oracles::fill_uniform(b, rng);
  for (int stride : {1, 2}) {
    for (int pad : {0, 1}) {
      if (stride == 2 && pad == 0) continue;  // empty-output guard case below
      auto y = fuse3d::conv3d(x, w, b, stride, pad);
      auto ref = oracles::conv3d(x, w, b, stride, pad);
      ASSERT_EQ(y.size(), ref.size());
      EXPECT_LT(oracles::max_rel_diff(y.values(), ref), 1e-6);
    }
  }
}

TEST(Conv3d, ShapeErrors) {
  auto x = Tensor::zeros({2, 4, 4, 4});
  auto w_bad = Tensor::zeros({3, 5, 3, 3, 3});
  auto b = Tensor::zeros({3});
  EXPECT_THROW(fuse3d::conv3d(x, w_bad, b, 1, 1), fuse3d::Error);
  auto tiny = Tensor::zeros({1, 2, 2, 2});
  auto w5 = Tensor::zeros({1, 1, 5, 5, 5});
  auto b1 = Tensor::zeros({1});
  EXPECT_THROW(fuse3d::conv3d(tiny, w5, b1, 1, 0), fuse3d::Error);
}

TEST(Depthwise, EqualsPerChannelConv) {
  Rng rng(33);
  auto x = Tensor::zeros({3, 4, 4, 4});
  auto w = Tensor::zeros({3, 3, 3, 3});
  auto b = Tensor::zeros({3});
  oracles::fill_uniform(x, rng);
  oracles::fill_uniform(w, rng);
  oracles::fill_uniform(b, rng);
  auto y = fuse3d::depthwise_conv3d(x, w, b, 1, 1);
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<double> xc(x.data() + c * 64, x.data() + (c + 1) * 64);
    std::vector<double> wc(w.data() + c * 27, w.data() + (c + 1) * 27);
    auto x1 = Tensor::from({1, 4, 4, 4}, xc);
    auto w1 = Tensor::from({1, 1, 3, 3, 3}, wc);
    auto b1 = Tensor::from({1}, {b.data()[c]});
    auto yc = fuse3d::conv3d(x1, w1, b1, 1, 1);
    for (std::size_t i = 0; i < 64; ++i)
      EXPECT_DOUBLE_EQ(y.data()[c * 64 + i], yc.data()[i]);
  }
}

TEST(Depthwise, StridedCornerTapCount) {
  auto x = Tensor::full({1, 4, 4, 4}, 1.0);
  auto w = Tensor::full({1, 3, 3, 3}, 1.0);
  auto b = Tensor::zeros({1});
  auto y = fuse3d::depthwise_conv3d(x, w, b, 2, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 2, 2, 2}));
  // Corner window loses one tap per axis to the zero padding: 2*2*2 remain.
  EXPECT_DOUBLE_EQ(y.data()[0], 8.0);
}

TEST(Depthwise, MatchesNaiveLoopOracle) {
  Rng rng(44);
  auto x = Tensor::zeros({2, 4, 4, 4});
  auto w = Tensor::zeros({2, 3, 3, 3});
  auto b = Tensor::zeros({2});
  oracles::fill_uniform(x, rng);
  oracles::fill_uniform(w, rng);
  oracles::fill_uniform(b, rng);
  for (int stride : {1, 2}) {
    auto y = fuse3d::depthwise_conv3d(x, w, b, stride, 1);
    auto ref = oracles::depthwise_conv3d(x, w, b, stride, 1);
    ASSERT_EQ(y.size(), ref.size());
    EXPECT_LT(oracles::max_rel_diff(y.values(), ref), 1e-6);
  }
}

TEST(TransposedDepthwise, ImpulseResponse) {
  auto x = Tensor::zeros({1, 4, 4, 4});
  x.data()[(1 * 4 + 2) * 4 + 1] = 1.0;  // impulse at (z,y,x) = (1,2,1)
  auto w = Tensor::zeros({1, 3, 3, 3});
  for (int i = 0; i < 27; ++i) w.data()[i] = i + 1.0;
  auto y = fuse3d::transposed_depthwise_conv3d(x, w, 2);
  ASSERT_EQ(y.shape(), (Shape{1, 8, 8, 8}));
  // Output voxel (2*1 + kz - 1, 2*2 + ky - 1, 2*1 + kx - 1) carries tap
  // (kz,ky,kx); everything else is zero.
  double sum = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) sum += std::abs(y.data()[i]);
  double kernel_sum = 0.0;
  for (int i = 0; i < 27; ++i) kernel_sum += i + 1.0;
  EXPECT_DOUBLE_EQ(sum, kernel_sum);
  for (int kz = 0; kz < 3; ++kz)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const int oz = 2 + kz - 1, oy = 4 + ky - 1, ox = 2 + kx - 1;
        EXPECT_DOUBLE_EQ(y.data()[(oz * 8 + oy) * 8 + ox],
                         w.data()[(kz * 3 + ky) * 3 + kx]);
      }
}

TEST(TransposedDepthwise, AdjointIdentity) {
  Rng rng(55);
  for (int k : {2, 3}) {
    auto x = Tensor::zeros({2, 8, 8, 8});
    auto y = Tensor::zeros({2, 4, 4, 4});
    auto w = Tensor::zeros({2, static_cast<std::size_t>(k),
                            static_cast<std::size_t>(k),
                            static_cast<std::size_t>(k)});
    oracles::fill_uniform(x, rng);
    oracles::fill_uniform(y, rng);
    oracles::fill_uniform(w, rng);
    auto b = Tensor::zeros({2});
    const int pad = (k == 2) ? 0 : 1;
    auto fx = fuse3d::depthwise_conv3d(x, w, b, 2, pad);
    auto ty = fuse3d::transposed_depthwise_conv3d(y, w, 2);
    ASSERT_EQ(fx.shape(), y.shape());
    ASSERT_EQ(ty.shape(), x.shape());
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i)
      lhs += fx.data()[i] * y.data()[i];
    for (std::size_t i = 0; i < x.size(); ++i)
      rhs += x.data()[i] * ty.data()[i];
    EXPECT_NEAR(lhs, rhs, 1e-6 * std::max(1.0, std::abs(lhs)));
  }
}

TEST(TransposedDepthwise, K2PreservesConstants) {
  auto x = Tensor::full({2, 3, 3, 3}, 4.25);
  auto w = Tensor::full({2, 2, 2, 2}, 1.0);
  auto y = fuse3d::transposed_depthwise_conv3d(x, w, 2);
  ASSERT_EQ(y.shape(), (Shape{2, 6, 6, 6}));
  for (std::size_t i = 0; i < y.size(); ++i)
    EXPECT_DOUBLE_EQ(y.data()[i], 4.25);
}

TEST(Pool3d, AvgConstant) {
  auto x = Tensor::full({2, 4, 4, 4}, 3.5);
  auto y = fuse3d::pool3d(x, PoolMode::kAvg, 2, 2);
  ASSERT_EQ(y.shape(), (Shape{2, 2, 2, 2}));
  for (std::size_t i = 0; i < y.size(); ++i)
    EXPECT_DOUBLE_EQ(y.data()[i], 3.5);
}

TEST(Pool3d, MaxOfArrangedBlock) {
  std::vector<double> vals(8);
  for (int i = 0; i < 8; ++i) vals[static_cast<std::size_t>(i)] = i;
  auto x = Tensor::from({1, 2, 2, 2}, vals);
  auto y = fuse3d::pool3d(x, PoolMode::kMax, 2, 2);
  ASSERT_EQ(y.size(), 1u);
  EXPECT_DOUBLE_EQ(y.data()[0], 7.0);
}

TEST(Pool3d, AvgMatchesNaiveLoopOracle) {
  Rng rng(66);
  auto x = Tensor::zeros({1, 4, 4, 4});
  oracles::fill_uniform(x, rng);
  auto y = fuse3d::pool3d(x, PoolMode::kAvg, 2, 2);
  auto ref = oracles::avg_pool3d(x, 2);
  ASSERT_EQ(y.size(), ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i)
    EXPECT_NEAR(y.data()[i], ref[i], 1e-12);
}

TEST(Pool3d, IndivisibleExtentIsError) {
  auto x = Tensor::zeros({1, 3, 4, 4});
  EXPECT_THROW(fuse3d::pool3d(x, PoolMode::kAvg, 2, 2), fuse3d::Error);
}

TEST(Resize, ConstantPreservedExactly) {
  for (int factor : {2, 4, 8}) {
    auto x = Tensor::full({2, 8, 8, 8}, 5.0);
    auto up = fuse3d::resize_trilinear(x, factor, ResizeDir::kUp);
    auto down = fuse3d::resize_trilinear(x, factor, ResizeDir::kDown);
    for (std::size_t i = 0; i < up.size(); ++i)
      EXPECT_DOUBLE_EQ(up.data()[i], 5.0);
    for (std::size_t i = 0; i < down.size(); ++i)
      EXPECT_DOUBLE_EQ(down.data()[i], 5.0);
  }
}

TEST(Resize, RampUpX2MatchesClosedForm) {
  // Ramp along x; value equals the x index, so the trilinear sample at
  // position p is clamp(p, 0, 7).
  auto x = Tensor::zeros({1, 2, 2, 8});
  for (std::size_t z = 0; z < 2; ++z)
    for (std::size_t y = 0; y < 2; ++y)
      for (std::size_t i = 0; i < 8; ++i)
        x.data()[(z * 2 + y) * 8 + i] = static_cast<double>(i);
  auto up = fuse3d::resize_trilinear(x, 2, ResizeDir::kUp);
  ASSERT_EQ(up.shape(), (Shape{1, 4, 4, 16}));
  for (std::size_t z = 0; z < 4; ++z)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t o = 0; o < 16; ++o) {
        double pos = (o + 0.5) / 2.0 - 0.5;
        pos = std::min(std::max(pos, 0.0), 7.0);
        EXPECT_NEAR(up.data()[(z * 4 + y) * 16 + o], pos, 1e-12);
      }
  EXPECT_DOUBLE_EQ(up.data()[0], 0.0);
  EXPECT_DOUBLE_EQ(up.data()[15], 7.0);
}

TEST(Resize, DownThenUpConstantIdentity) {
  auto x = Tensor::full({1, 4, 4, 4}, 2.75);
  auto down = fuse3d::resize_trilinear(x, 2, ResizeDir::kDown);
  auto up = fuse3d::resize_trilinear(down, 2, ResizeDir::kUp);
  ASSERT_EQ(up.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i)
    EXPECT_DOUBLE_EQ(up.data()[i], x.data()[i]);
}

TEST(Resize, NonPowerOfTwoFactorIsConfigError) {
  auto x = Tensor::zeros({1, 4, 4, 4});
  EXPECT_THROW(fuse3d::resize_trilinear(x, 3, ResizeDir::kUp),
               fuse3d::ConfigError);
}

TEST(Gelu, AnchorValues) {
  auto x = Tensor::from({5}, {0.0, 10.0, -10.0, 1.0, -1.0});
  auto y = fuse3d::gelu(x);
  EXPECT_DOUBLE_EQ(y.data()[0], 0.0);
  EXPECT_NEAR(y.data()[1], 10.0, 1e-6);
  EXPECT_NEAR(y.data()[2], 0.0, 1e-6);
  EXPECT_NEAR(y.data()[3], 0.841345, 1e-5);
  EXPECT_NEAR(y.data()[4], 0.841345 - 1.0, 1e-5);
}

TEST(PointwiseLinear, IdentityAndBias) {
  Rng rng(77);
  auto x = Tensor::zeros({3, 2, 2, 2});
  oracles::fill_uniform(x, rng);
  auto eye = Tensor::zeros({3, 3});
  for (int i = 0; i < 3; ++i) eye.data()[i * 3 + i] = 1.0;
  auto b0 = Tensor::zeros({3});
  auto y = fuse3d::pointwise_linear(x, eye, b0);
  for (std::size_t i = 0; i < x.size(); ++i)
    EXPECT_DOUBLE_EQ(y.data()[i], x.data()[i]);

  auto w0 = Tensor::zeros({2, 3});
  auto b1 = Tensor::from({2}, {1.0, 1.0});
  auto ones = fuse3d::pointwise_linear(x, w0, b1);
  for (std::size_t i = 0; i < ones.size(); ++i)
    EXPECT_DOUBLE_EQ(ones.data()[i], 1.0);
}

TEST(PointwiseLinear, EquivalentToConv1x1) {
  Rng rng(88);
  auto x = Tensor::zeros({3, 3, 3, 3});
  auto w = Tensor::zeros({2, 3});
  auto b = Tensor::zeros({2});
  oracles::fill_uniform(x, rng);
  oracles::fill_uniform(w, rng);
  oracles::fill_uniform(b, rng);
  auto y = fuse3d::pointwise_linear(x, w, b);
  auto w5 = Tensor::from({2, 3, 1, 1, 1}, w.values());
  auto yc = fuse3d::conv3d(x, w5, b, 1, 0);
  ASSERT_EQ(y.shape(), yc.shape());
  EXPECT_LT(oracles::max_rel_diff(y.values(), yc.values()), 1e-6);
}

TEST(GlobalAvgPool, AnchorsAndOracle) {
  auto c = Tensor::full({2, 3, 3, 3}, 1.5);
  auto yc = fuse3d::global_avg_pool(c);
  ASSERT_EQ(yc.shape(), (Shape{2, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(yc.data()[0], 1.5);
  EXPECT_DOUBLE_EQ(yc.data()[1], 1.5);

  std::vector<double> ramp(8);
  for (int i = 0; i < 8; ++i) ramp[static_cast<std::size_t>(i)] = i;
  auto r = Tensor::from({1, 2, 2, 2}, ramp);
  EXPECT_DOUBLE_EQ(fuse3d::global_avg_pool(r).data()[0], 3.5);

  Rng rng(99);
  auto x = Tensor::zeros({3, 2, 4, 4});
  oracles::fill_uniform(x, rng);
  auto y = fuse3d::global_avg_pool(x);
  auto ref = oracles::global_avg_pool(x);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-12);
}

TEST(Elementwise, MulAddConcatSigmoid) {
  Rng rng(111);
  auto x = Tensor::zeros({2, 2, 2, 2});
  oracles::fill_uniform(x, rng);
  auto ones = Tensor::full(x.shape(), 1.0);
  auto y = fuse3d::mul(x, ones);
  for (std::size_t i = 0; i < x.size(); ++i)
    EXPECT_DOUBLE_EQ(y.data()[i], x.data()[i]);

  auto a = Tensor::full({2, 2, 2, 2}, 1.0);
  auto b = Tensor::full({3, 2, 2, 2}, 2.0);
  auto cat = fuse3d::concat_channels({a, b});
  ASSERT_EQ(cat.shape(), (Shape{5, 2, 2, 2}));
  EXPECT_DOUBLE_EQ(cat.data()[0], 1.0);
  EXPECT_DOUBLE_EQ(cat.data()[2 * 8], 2.0);
  EXPECT_DOUBLE_EQ(cat.data()[4 * 8 + 7], 2.0);

  auto s = fuse3d::sigmoid(Tensor::scalar(0.0));
  EXPECT_DOUBLE_EQ(s.data()[0], 0.5);

  auto bad = Tensor::zeros({2, 3, 2, 2});
  EXPECT_THROW(fuse3d::add(a, bad), fuse3d::Error);
}

TEST(Backward, SquareAndConstant) {
  auto x = Tensor::scalar(3.0, true);
  {
    fuse3d::TapeScope<double> scope;
    auto loss = fuse3d::sum_all(fuse3d::mul(x, x));
    scope.backward(loss);
  }
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);

  auto y = Tensor::from({4}, {1.0, 2.0, 3.0, 4.0}, true);
  {
    fuse3d::TapeScope<double> scope;
    auto loss = fuse3d::sum_all(fuse3d::scale(y, 0.0));
    scope.backward(loss);
  }
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(y.grad()[i], 0.0);
}

TEST(Backward, NonScalarLossIsError) {
  auto x = Tensor::zeros({2, 2, 2, 2}, true);
  fuse3d::TapeScope<double> scope;
  auto y = fuse3d::gelu(x);
  EXPECT_THROW(scope.backward(y), fuse3d::Error);
}

TEST(Aggregate, GateSelectionAndSum) {
  Rng rng(123);
  const std::size_t nl = 3;
  std::vector<Tensor> levels;
  for (std::size_t l = 0; l < nl; ++l) {
    auto t = Tensor::zeros({2, 2, 2, 2});
    oracles::fill_uniform(t, rng);
    levels.push_back(t);
  }
  auto gates_one = Tensor::full({nl, 2, 2, 2}, 1.0);
  auto sum = fuse3d::aggregate(levels, gates_one);
  for (std::size_t i = 0; i < sum.size(); ++i) {
    double expect = 0.0;
    for (std::size_t l = 0; l < nl; ++l) expect += levels[l].data()[i];
    EXPECT_NEAR(sum.data()[i], expect, 1e-12);
  }
  for (std::size_t hot = 0; hot < nl; ++hot) {
    auto gates = Tensor::zeros({nl, 2, 2, 2});
    for (std::size_t i = 0; i < 8; ++i) gates.data()[hot * 8 + i] = 1.0;
    auto picked = fuse3d::aggregate(levels, gates);
    for (std::size_t i = 0; i < picked.size(); ++i)
      EXPECT_DOUBLE_EQ(picked.data()[i], levels[hot].data()[i]);
  }
}

TEST(Aggregate, MatchesLoopOracle) {
  Rng rng(134);
  for (std::size_t nl : {2, 3, 4}) {
    std::vector<Tensor> levels;
    for (std::size_t l = 0; l < nl; ++l) {
      auto t = Tensor::zeros({3, 4, 4, 4});
      oracles::fill_uniform(t, rng);
      levels.push_back(t);
    }
    auto gates = Tensor::zeros({nl, 4, 4, 4});
    oracles::fill_uniform(gates, rng);
    auto y = fuse3d::aggregate(levels, gates);
    auto ref = oracles::aggregate(levels, gates);
    ASSERT_EQ(y.size(), ref.size());
    EXPECT_LT(oracles::max_rel_diff(y.values(), ref), 1e-6);
  }
}

TEST(Determinism, RepeatedConvRunsAreBitIdentical) {
  Rng rng(145);
  auto x = Tensor::zeros({2, 6, 6, 6});
  auto w = Tensor::zeros({3, 2, 3, 3, 3});
  auto b = Tensor::zeros({3});
  oracles::fill_uniform(x, rng);
  oracles::fill_uniform(w, rng);
  oracles::fill_uniform(b, rng);
  auto y1 = fuse3d::conv3d(x, w, b, 1, 1);
  auto y2 = fuse3d::conv3d(x, w, b, 1, 1);
  auto p1 = fuse3d::pool3d(y1, PoolMode::kAvg, 2, 2);
  auto p2 = fuse3d::pool3d(y2, PoolMode::kAvg, 2, 2);
  ASSERT_EQ(y1.values(), y2.values());
  ASSERT_EQ(p1.values(), p2.values());
  auto d1 = fuse3d::depthwise_conv3d(y1, Tensor::full({3, 3, 3, 3}, 0.5),
                                     Tensor::zeros({3}), 1, 1);
  auto d2 = fuse3d::depthwise_conv3d(y2, Tensor::full({3, 3, 3, 3}, 0.5),
                                     Tensor::zeros({3}), 1, 1);
  ASSERT_EQ(d1.values(), d2.values());
}

}  // namespace
