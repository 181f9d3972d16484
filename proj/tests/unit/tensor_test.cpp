#include <gtest/gtest.h>

#include "sefcn/tensor_ops.hpp"
#include "support.hpp"

namespace sefcn {
namespace {

using test::random_tensor;

Tensor make(Shape s, std::vector<float> v) { return Tensor(s, std::move(v)); }

TEST(Shape, NumelAndAccessors) {
  const Shape s = Shape::nchw(2, 3, 4, 5);
  EXPECT_EQ(s.rank(), 4u);
  EXPECT_EQ(s.numel(), 120u);
  EXPECT_EQ(s.c(), 3u);
  EXPECT_EQ(s.to_string(), "(2, 3, 4, 5)");
  EXPECT_EQ((Shape{7}).numel(), 7u);
}

TEST(Shape, RejectsZeroExtentsAndRankAboveFour) {
  EXPECT_THROW((Shape{2, 0, 3}), ShapeError);
  EXPECT_THROW((Shape{1, 1, 1, 1, 1}), ShapeError);
}

TEST(Tensor, DataLengthMustMatchShape) {
  EXPECT_THROW(make(Shape{2, 2}, {1, 2, 3}), ShapeError);
  EXPECT_NO_THROW(make(Shape{2, 2}, {1, 2, 3, 4}));
}

TEST(Tensor, ReshapeKeepsData) {
  const Tensor t = make(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  const Tensor r = t.reshaped(Shape{4});
  EXPECT_EQ(r.shape(), Shape{4});
  EXPECT_EQ(r[3], 4.0f);
  EXPECT_THROW((void)t.reshaped(Shape{3}), ShapeError);
}

TEST(GlobalSpatialMean, ArithmeticMean) {
  const Tensor m = global_spatial_mean(make(Shape::nchw(1, 1, 2, 2), {1, 2, 3, 4}));
  EXPECT_EQ(m.shape(), Shape::nchw(1, 1, 1, 1));
  EXPECT_FLOAT_EQ(m[0], 2.5f);
}

TEST(GlobalSpatialMean, ConstantTensor) {
  const Tensor m = global_spatial_mean(Tensor(Shape::nchw(3, 5, 4, 6), 7.0f));
  EXPECT_EQ(m.shape(), Shape::nchw(3, 5, 1, 1));
  for (float v : m.data()) EXPECT_FLOAT_EQ(v, 7.0f);
}

TEST(GlobalSpatialMean, PerChannel) {
  const Tensor m = global_spatial_mean(make(Shape::nchw(1, 2, 2, 1), {1, 3, -2, 2}));
  EXPECT_FLOAT_EQ(m[0], 2.0f);
  EXPECT_FLOAT_EQ(m[1], 0.0f);
}

TEST(GlobalSpatialMean, RequiresRank4) { EXPECT_THROW(global_spatial_mean(Tensor(Shape{2, 2})), ShapeError); }

TEST(GlobalSpatialMean, IsLinear) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Shape s = Shape::nchw(2, 3, 5, 4);
    const Tensor u = random_tensor<float>(s, rng), v = random_tensor<float>(s, rng);
    const float a = 1.7f, b = -0.4f;
    Tensor mix(s);
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * u[i] + b * v[i];
    const Tensor lhs = global_spatial_mean(mix);
    const Tensor mu = global_spatial_mean(u), mv = global_spatial_mean(v);
    for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs[i], a * mu[i] + b * mv[i], 1e-6);
  }
}

TEST(ScaleChannels, Examples) {
  Rng rng(1);
  const Tensor u = random_tensor<float>(Shape::nchw(2, 3, 2, 2), rng);
  const Tensor same = scale_channels(u, Tensor(Shape::nchw(1, 3, 1, 1), 1.0f));
  EXPECT_TRUE(std::equal(same.data().begin(), same.data().end(), u.data().begin()));

  const Tensor halves = scale_channels(Tensor(Shape::nchw(1, 2, 2, 2), 2.0f), Tensor(Shape::nchw(1, 2, 1, 1), 0.5f));
  for (float v : halves.data()) EXPECT_FLOAT_EQ(v, 1.0f);

  const Tensor out = scale_channels(make(Shape::nchw(1, 2, 1, 1), {3, -4}), make(Shape::nchw(1, 2, 1, 1), {0.25f, 0.5f}));
  EXPECT_FLOAT_EQ(out[0], 0.75f);
  EXPECT_FLOAT_EQ(out[1], -2.0f);
}

TEST(ScaleChannels, PerItemGate) {
  const Tensor u(Shape::nchw(2, 1, 1, 2), 1.0f);
  const Tensor out = scale_channels(u, make(Shape::nchw(2, 1, 1, 1), {2, 3}));
  EXPECT_FLOAT_EQ(out[1], 2.0f);
  EXPECT_FLOAT_EQ(out[2], 3.0f);
}

TEST(ScaleChannels, LengthMismatch) {
  EXPECT_THROW(scale_channels(Tensor(Shape::nchw(1, 3, 2, 2)), Tensor(Shape::nchw(1, 2, 1, 1))), ShapeError);
  EXPECT_THROW(scale_channels(Tensor(Shape::nchw(2, 2, 2, 2)), Tensor(Shape::nchw(3, 2, 1, 1))), ShapeError);
}

TEST(ScaleSpatial, Examples) {
  Rng rng(2);
  const Tensor u = random_tensor<float>(Shape::nchw(2, 3, 2, 4), rng);
  const Tensor same = scale_spatial(u, Tensor(Shape::nchw(1, 1, 2, 4), 1.0f));
  EXPECT_TRUE(std::equal(same.data().begin(), same.data().end(), u.data().begin()));

  const Tensor zero = scale_spatial(u, Tensor(Shape::nchw(1, 1, 2, 4), 0.0f));
  for (float v : zero.data()) EXPECT_EQ(v, 0.0f);

  const Tensor out = scale_spatial(make(Shape::nchw(1, 1, 1, 2), {2, 4}), make(Shape::nchw(1, 1, 1, 2), {0.5f, 0.25f}));
  EXPECT_FLOAT_EQ(out[0], 1.0f);
  EXPECT_FLOAT_EQ(out[1], 1.0f);
}

TEST(ScaleSpatial, ExtentMismatch) {
  EXPECT_THROW(scale_spatial(Tensor(Shape::nchw(1, 2, 4, 4)), Tensor(Shape::nchw(1, 1, 4, 2))), ShapeError);
  EXPECT_THROW(scale_spatial(Tensor(Shape::nchw(1, 2, 4, 4)), Tensor(Shape::nchw(1, 2, 4, 4))), ShapeError);
}

TEST(Elementwise, Examples) {
  EXPECT_FLOAT_EQ(elementwise(ElementwiseOp::kMax, make(Shape{1}, {0.2f}), make(Shape{1}, {0.7f}))[0], 0.7f);
  const Tensor sum = elementwise(ElementwiseOp::kAdd, make(Shape{2}, {1, 2}), make(Shape{2}, {3, 4}));
  EXPECT_FLOAT_EQ(sum[0], 4.0f);
  EXPECT_FLOAT_EQ(sum[1], 6.0f);
  const Tensor prod = elementwise(ElementwiseOp::kMul, make(Shape{2}, {0.5f, -1}), make(Shape{2}, {2, 3}));
  EXPECT_FLOAT_EQ(prod[0], 1.0f);
  EXPECT_FLOAT_EQ(prod[1], -3.0f);
}

TEST(Elementwise, ShapeMismatch) {
  EXPECT_THROW(elementwise(ElementwiseOp::kAdd, Tensor(Shape{2}), Tensor(Shape{3})), ShapeError);
  EXPECT_THROW(elementwise(ElementwiseOp::kAdd, Tensor(Shape{1, 2}), Tensor(Shape{2, 1})), ShapeError);
}

TEST(Elementwise, MaxIsCommutativeAssociativeIdempotent) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const Shape s = Shape::nchw(1, 2, 3, 3);
    const Tensor a = random_tensor<float>(s, rng), b = random_tensor<float>(s, rng), c = random_tensor<float>(s, rng);
    auto mx = [](const Tensor& x, const Tensor& y) { return elementwise(ElementwiseOp::kMax, x, y); };
    const Tensor ab = mx(a, b), ba = mx(b, a);
    const Tensor l = mx(mx(a, b), c), r = mx(a, mx(b, c));
    const Tensor aa = mx(a, a);
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(ab[i], ba[i]);
      EXPECT_EQ(l[i], r[i]);
      EXPECT_EQ(aa[i], a[i]);
    }
  }
}

TEST(ConcatChannels, Examples) {
  const Tensor c = concat_channels(make(Shape::nchw(1, 1, 1, 1), {1}), make(Shape::nchw(1, 1, 1, 1), {2}));
  EXPECT_EQ(c.shape(), Shape::nchw(1, 2, 1, 1));
  EXPECT_FLOAT_EQ(c[0], 1.0f);
  EXPECT_FLOAT_EQ(c[1], 2.0f);

  EXPECT_EQ(concat_channels(Tensor(Shape::nchw(1, 64, 2, 2)), Tensor(Shape::nchw(1, 64, 2, 2))).shape().c(), 128u);

  Rng rng(5);
  const Tensor a = random_tensor<float>(Shape::nchw(2, 3, 2, 2), rng);
  const Tensor joined = concat_channels(a, Tensor(Shape::nchw(2, 4, 2, 2)));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(joined.at(n, ch, i, j), a.at(n, ch, i, j));
}

TEST(ConcatChannels, MismatchAndSplitInverse) {
  EXPECT_THROW(concat_channels(Tensor(Shape::nchw(1, 1, 2, 2)), Tensor(Shape::nchw(1, 1, 2, 3))), ShapeError);
  EXPECT_THROW(concat_channels(Tensor(Shape::nchw(1, 1, 2, 2)), Tensor(Shape::nchw(2, 1, 2, 2))), ShapeError);

  Rng rng(6);
  const Tensor a = random_tensor<float>(Shape::nchw(2, 3, 2, 2), rng);
  const Tensor b = random_tensor<float>(Shape::nchw(2, 1, 2, 2), rng);
  const auto [x, y] = split_channels(concat_channels(a, b), 3);
  EXPECT_TRUE(std::equal(x.data().begin(), x.data().end(), a.data().begin()));
  EXPECT_TRUE(std::equal(y.data().begin(), y.data().end(), b.data().begin()));
}

TEST(TensorOps, FiniteAndAccumulate) {
  Tensor t(Shape{3}, 1.0f);
  EXPECT_TRUE(all_finite(t));
  accumulate(t, Tensor(Shape{3}, 2.0f));
  EXPECT_FLOAT_EQ(t[2], 3.0f);
  t[1] = std::nanf("");
  EXPECT_FALSE(all_finite(t));
  EXPECT_THROW(accumulate(t, Tensor(Shape{2})), ShapeError);
}

}  // namespace
}  // namespace sefcn
