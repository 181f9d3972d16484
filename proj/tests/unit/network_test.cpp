#include <gtest/gtest.h>

#include "sefcn/network.hpp"
#include "sefcn/tensor_ops.hpp"
#include "support.hpp"

namespace sefcn {
namespace {

using test::random_tensor;
using test::TempDir;

constexpr Family kFamilies[] = {Family::kUNet, Family::kSDNet, Family::kFCDenseNet};
constexpr Position kPositions[] = {Position::kP1, Position::kP2, Position::kP3,
                                   Position::kP4, Position::kP5, Position::kP6};

NetworkSpec small_spec(Family f, SEMode mode = SEMode::kConcurrent, Position p = Position::kP5) {
  NetworkSpec s;
  s.family = f;
  s.channels = 4;
  s.num_classes = 3;
  s.se = {mode, 2, Aggregation::kMaxout};
  s.position = p;
  return s;
}

std::size_t se_total(const NetworkSpec& spec) {
  Network<float> net(spec, 1);
  return net.count_parameters().se_total;
}

TEST(Blocks, Recipes) {
  using V = std::vector<std::string>;
  EXPECT_EQ(block_recipe(Family::kUNet, BlockKind::kEncoder, 1, 64),
            (V{"conv3x3(1->64)", "relu", "conv3x3(64->64)", "relu"}));
  EXPECT_EQ(block_recipe(Family::kSDNet, BlockKind::kEncoder, 64, 64), (V{"conv7x7(64->64)", "batch_norm", "relu"}));
  const V dense = block_recipe(Family::kFCDenseNet, BlockKind::kEncoder, 16, 64);
  EXPECT_NE(std::find(dense.begin(), dense.end(), "conv5x5(16->64)"), dense.end());
  EXPECT_NE(std::find(dense.begin(), dense.end(), "conv5x5(80->64)"), dense.end());
  EXPECT_NE(std::find(dense.begin(), dense.end(), "conv1x1(144->64)"), dense.end());
  EXPECT_EQ(block_recipe(Family::kSDNet, BlockKind::kClassifier, 64, 9), (V{"conv1x1(64->9)", "softmax"}));
}

TEST(Blocks, DenseBlockShapesAndGradient) {
  Rng rng(1);
  DenseBlock<double> block(3, 4, rng);
  const Shape in = Shape::nchw(2, 3, 4, 4);
  EXPECT_EQ(block.output_shape(in), Shape::nchw(2, 4, 4, 4));
  const TensorD x = random_tensor<double>(in, rng);
  block.forward(x, Mode::kTrain);
  block.freeze_branches(true);
  const auto e = test::layer_grad_errors(block, x, rng);
  EXPECT_LT(e.input, 1e-3);
  EXPECT_LT(e.parameters, 1e-3);
  EXPECT_THROW(block.forward(TensorD(Shape::nchw(1, 2, 4, 4)), Mode::kTrain), ShapeError);
}

TEST(Network, SeBlockCountsPerPosition) {
  const std::size_t expected[] = {4, 4, 1, 1, 8, 10};
  for (std::size_t i = 0; i < 6; ++i) {
    Network<float> net(small_spec(Family::kSDNet, SEMode::kSpatial, kPositions[i]), 1);
    EXPECT_EQ(net.se_block_count(), expected[i]) << to_string(kPositions[i]);
    for (const auto& b : net.blocks()) EXPECT_EQ(b.se_attached, se_attached(kPositions[i], b.kind));
  }
  Network<float> none(small_spec(Family::kSDNet, SEMode::kNone, Position::kP6), 1);
  EXPECT_EQ(none.se_block_count(), 0u);
}

TEST(Network, ForwardIsPerPixelDistribution) {
  for (Family f : kFamilies) {
    Network<float> net(small_spec(f), 2);
    const Tensor p = net.predict(Tensor(Shape::nchw(1, 1, 64, 64), 0.5f), Mode::kEval);
    ASSERT_EQ(p.shape(), Shape::nchw(1, 3, 64, 64)) << to_string(f);
    for (std::size_t i = 0; i < 64; ++i)
      for (std::size_t j = 0; j < 64; ++j) {
        const double s = double(p.at(0, 0, i, j)) + p.at(0, 1, i, j) + p.at(0, 2, i, j);
        ASSERT_NEAR(s, 1.0, 1e-5);
      }
  }
}

TEST(Network, TableOneIncrements) {
  NetworkSpec spec;  // depth 4, C = 64, P5
  for (Family f : kFamilies) {
    spec.family = f;
    spec.se.mode = SEMode::kChannel;
    EXPECT_EQ(se_total(spec), 32768u);
    spec.se.mode = SEMode::kSpatial;
    EXPECT_EQ(se_total(spec), 512u);
    spec.se.mode = SEMode::kConcurrent;
    EXPECT_EQ(se_total(spec), 33280u);
    spec.se.mode = SEMode::kNone;
    EXPECT_EQ(se_total(spec), 0u);
  }
  spec.family = Family::kUNet;
  // r = 16: two 64x4 matrices per block.
  spec.se = {SEMode::kChannel, 16, Aggregation::kMaxout};
  EXPECT_EQ(se_total(spec), 8u * 2 * 64 * 4);
}

TEST(Network, SeAdditionLeavesOtherCountsUnchanged) {
  for (Family f : kFamilies)
    for (Position p : kPositions) {
      NetworkSpec spec = small_spec(f, SEMode::kNone, p);
      spec.channels = 8;
      Network<float> plain(spec, 1);
      const ParamReport base = plain.count_parameters();
      spec.se.mode = SEMode::kConcurrent;
      Network<float> with(spec, 1);
      const ParamReport r = with.count_parameters();
      EXPECT_EQ(r.total - base.total, with.se_block_count() * (2 * 8 * 8 / 2 + 8));
      EXPECT_EQ(r.se_total, r.total - base.total);
      ASSERT_EQ(r.per_block.size(), base.per_block.size());
      for (std::size_t i = 0; i < r.per_block.size(); ++i)
        EXPECT_EQ(r.per_block[i].total - r.per_block[i].se, base.per_block[i].total);
      EXPECT_NEAR(r.percentage, 100.0 * r.se_total / double(base.total), 1e-9);

      spec.se.mode = SEMode::kChannel;
      const std::size_t c = se_total(spec);
      spec.se.mode = SEMode::kSpatial;
      EXPECT_EQ(r.se_total - c, se_total(spec));
    }
}

TEST(Network, ParameterReportSumsTensors) {
  Network<float> net(small_spec(Family::kFCDenseNet), 3);
  std::size_t sum = 0;
  for (auto* p : net.parameters()) sum += p->value.size();
  const ParamReport r = net.count_parameters();
  EXPECT_EQ(r.total, sum);
  std::size_t blocks = 0;
  for (const auto& b : r.per_block) blocks += b.total;
  EXPECT_EQ(blocks, sum);
}

TEST(Network, SkipConfigsShareCountsAndShapes) {
  for (Family f : kFamilies) {
    NetworkSpec a = small_spec(f);
    NetworkSpec b = a;
    b.skip_config = 2;
    Network<float> na(a, 1), nb(b, 1);
    EXPECT_EQ(na.count_parameters().total, nb.count_parameters().total);
    const Shape in = Shape::nchw(1, 1, 32, 32);
    EXPECT_EQ(na.infer_shapes(in), nb.infer_shapes(in));
  }
}

TEST(Network, SkipConfigChangesTapPoint) {
  NetworkSpec a = small_spec(Family::kUNet);
  NetworkSpec b = a;
  b.skip_config = 2;
  Network<float> na(a, 5), nb(b, 5);
  Rng rng(6);
  const Tensor x = random_tensor<float>(Shape::nchw(1, 1, 16, 16), rng);
  const Tensor ya = na.forward(x, Mode::kEval), yb = nb.forward(x, Mode::kEval);
  bool differ = false;
  for (std::size_t i = 0; i < ya.size(); ++i) differ |= ya[i] != yb[i];
  EXPECT_TRUE(differ);
}

// Every family, position and skip configuration: static shapes equal the
// shapes seen during a forward pass, and a backward pass stays finite.
TEST(Network, SmokeMatrix) {
  Rng rng(7);
  const Tensor x = random_tensor<float>(Shape::nchw(2, 1, 32, 32), rng, 0, 1);
  for (Family f : kFamilies)
    for (Position p : kPositions)
      for (int skip : {1, 2}) {
        NetworkSpec spec = small_spec(f, SEMode::kConcurrent, p);
        spec.skip_config = skip;
        Network<float> net(spec, 8);
        const Tensor logits = net.forward(x, Mode::kTrain);
        const std::string tag = to_string(f) + " " + to_string(p) + " skip " + std::to_string(skip);
        EXPECT_EQ(net.infer_shapes(x.shape()), net.last_shapes()) << tag;
        EXPECT_EQ(logits.shape(), Shape::nchw(2, 3, 32, 32)) << tag;
        net.zero_grad();
        const Tensor gx = net.backward(random_tensor<float>(logits.shape(), rng));
        EXPECT_TRUE(all_finite(gx)) << tag;
        for (auto* prm : net.parameters()) EXPECT_TRUE(all_finite(prm->grad)) << tag << " " << prm->name;
      }
}

TEST(Network, ConcatenationPropagatesDoubledChannels) {
  NetworkSpec spec = small_spec(Family::kUNet, SEMode::kConcurrent, Position::kP6);
  spec.se.aggregation = Aggregation::kConcatenation;
  Network<float> net(spec, 1);
  for (const auto& b : net.blocks()) {
    if (b.kind == BlockKind::kClassifier) {
      EXPECT_EQ(b.in_channels, 2 * spec.channels);
      EXPECT_EQ(b.out_channels, spec.num_classes);
    } else {
      EXPECT_EQ(b.out_channels, 2 * spec.channels) << b.id;
    }
  }
  const Tensor y = net.forward(Tensor(Shape::nchw(1, 1, 16, 16), 0.3f), Mode::kTrain);
  EXPECT_EQ(y.shape().c(), spec.num_classes);
  EXPECT_EQ(net.infer_shapes(Shape::nchw(1, 1, 16, 16)), net.last_shapes());
}

TEST(Network, RejectsIndivisibleExtents) {
  Network<float> net(small_spec(Family::kSDNet), 1);
  EXPECT_THROW(net.forward(Tensor(Shape::nchw(1, 1, 24, 32)), Mode::kEval), ShapeError);
  EXPECT_THROW(net.infer_shapes(Shape::nchw(1, 1, 24, 32)), ShapeError);
  EXPECT_THROW(net.forward(Tensor(Shape::nchw(1, 2, 32, 32)), Mode::kEval), ShapeError);
}

TEST(Network, SpecValidation) {
  NetworkSpec s = small_spec(Family::kUNet);
  s.se.r = 3;
  EXPECT_THROW(s.validate(), ConfigError);
  s = small_spec(Family::kUNet);
  s.depth = 0;
  EXPECT_THROW(s.validate(), ConfigError);
  s = small_spec(Family::kUNet);
  s.skip_config = 3;
  EXPECT_THROW(s.validate(), ConfigError);
  EXPECT_THROW(parse_family("resnet"), ConfigError);
  EXPECT_THROW(parse_position("P7"), ConfigError);
  EXPECT_EQ(parse_position("P3"), Position::kP3);
  for (Family f : kFamilies) EXPECT_EQ(parse_family(to_string(f)), f);
}

TEST(Network, SameSeedSameWeights) {
  Network<float> a(small_spec(Family::kFCDenseNet), 42), b(small_spec(Family::kFCDenseNet), 42),
      c(small_spec(Family::kFCDenseNet), 43);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_TRUE(std::equal(pa[i]->value.data().begin(), pa[i]->value.data().end(), pb[i]->value.data().begin()));
    any_diff |= !std::equal(pa[i]->value.data().begin(), pa[i]->value.data().end(), pc[i]->value.data().begin());
  }
  EXPECT_TRUE(any_diff);
}

TEST(Network, SpatialMapLookup) {
  Network<float> net(small_spec(Family::kSDNet), 1);
  net.forward(Tensor(Shape::nchw(1, 1, 32, 32), 0.2f), Mode::kEval);
  EXPECT_EQ(net.spatial_map("sE-1").shape(), Shape::nchw(1, 1, 32, 32));
  EXPECT_EQ(net.spatial_map("sD-4").shape(), Shape::nchw(1, 1, 32, 32));
  EXPECT_EQ(net.spatial_map("sE-3").shape(), Shape::nchw(1, 1, 8, 8));
  EXPECT_THROW(net.spatial_map("sB"), ConfigError);    // no SE at the bottleneck for P5
  EXPECT_THROW(net.spatial_map("sE-9"), ConfigError);

  Network<float> cse(small_spec(Family::kSDNet, SEMode::kChannel), 1);
  cse.forward(Tensor(Shape::nchw(1, 1, 32, 32), 0.2f), Mode::kEval);
  EXPECT_THROW(cse.spatial_map("sE-1"), ConfigError);
}

TEST(Checkpoint, RoundTrip) {
  TempDir dir("ckpt");
  Network<float> a(small_spec(Family::kSDNet), 1), b(small_spec(Family::kSDNet), 2);
  a.forward(Tensor(Shape::nchw(2, 1, 32, 32), 0.7f), Mode::kTrain);  // moves running statistics
  save_checkpoint(a, dir / "a.ckpt");
  load_checkpoint(b, dir / "a.ckpt");
  const auto sa = state_tensors(a), sb = state_tensors(b);
  ASSERT_EQ(sa.size(), sb.size());
  for (std::size_t i = 0; i < sa.size(); ++i)
    EXPECT_TRUE(std::equal(sa[i].data().begin(), sa[i].data().end(), sb[i].data().begin())) << state_names(a)[i];
  EXPECT_EQ(state_names(a).size(), sa.size());
}

TEST(Checkpoint, MismatchNamesTensor) {
  TempDir dir("ckpt");
  NetworkSpec deep = small_spec(Family::kSDNet);
  NetworkSpec shallow = deep;
  shallow.depth = 3;
  Network<float> a(deep, 1), b(shallow, 1);
  save_checkpoint(a, dir / "a.ckpt");
  EXPECT_THROW(load_checkpoint(b, dir / "a.ckpt"), ConfigError);

  NetworkSpec wide = deep;
  wide.channels = 8;
  Network<float> c(wide, 1);
  try {
    load_checkpoint(c, dir / "a.ckpt");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("#0"), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_checkpoint(a, dir / "missing.ckpt"), IoError);
}

TEST(Network, DoubleShadowMatchesFloat) {
  Network<float> f(small_spec(Family::kUNet), 9);
  Network<double> d(small_spec(Family::kUNet), 1);
  d.copy_state_from(f);
  Rng rng(10);
  const Tensor x = random_tensor<float>(Shape::nchw(1, 1, 16, 16), rng, 0, 1);
  const Tensor yf = f.forward(x, Mode::kEval);
  const TensorD yd = d.forward(x.cast<double>(), Mode::kEval);
  for (std::size_t i = 0; i < yf.size(); ++i) EXPECT_NEAR(yf[i], yd[i], 1e-4);
}

}  // namespace
}  // namespace sefcn
