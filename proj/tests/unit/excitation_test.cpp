#include <gtest/gtest.h>

#include <fstream>

#include "sefcn/excitation.hpp"
#include "support.hpp"

namespace sefcn {
namespace {

using test::TempDir;

TEST(GrayLevel, RoundHalfToEven) {
  EXPECT_EQ(gray_level(0.0), 0);
  EXPECT_EQ(gray_level(1.0), 255);
  EXPECT_EQ(gray_level(0.5), 128);  // 127.5 -> 128 (even)
  EXPECT_EQ(gray_level(0.5 / 255.0), 0);    // 0.5 -> 0
  EXPECT_EQ(gray_level(1.5 / 255.0), 2);    // 1.5 -> 2
  EXPECT_EQ(gray_level(2.5 / 255.0), 2);    // 2.5 -> 2
  EXPECT_EQ(gray_level(-3.0), 0);
  EXPECT_EQ(gray_level(7.0), 255);
  EXPECT_EQ(gray_level(static_cast<double>(0.5f)), 128);
}

TEST(Pgm, RoundTrip) {
  TempDir dir("pgm");
  GrayImage img{3, 2, {0, 1, 2, 127, 128, 255}};
  write_pgm(img, dir / "a.pgm");
  std::ifstream in(dir / "a.pgm", std::ios::binary);
  std::string header(11, '\0');
  in.read(header.data(), 11);
  EXPECT_EQ(header, "P5\n3 2\n255\n");
  const GrayImage back = read_pgm(dir / "a.pgm");
  EXPECT_EQ(back.width, 3u);
  EXPECT_EQ(back.height, 2u);
  EXPECT_EQ(back.pixels, img.pixels);
}

TEST(Pgm, Malformed) {
  TempDir dir("pgm");
  std::ofstream(dir / "p2.pgm") << "P2\n1 1\n255\n0\n";
  EXPECT_THROW(read_pgm(dir / "p2.pgm"), FormatError);
  std::ofstream(dir / "short.pgm", std::ios::binary) << "P5\n2 2\n255\n" << std::string(3, 'x');
  EXPECT_THROW(read_pgm(dir / "short.pgm"), FormatError);
  std::ofstream(dir / "max.pgm", std::ios::binary) << "P5\n1 1\n65535\n" << std::string(2, 'x');
  EXPECT_THROW(read_pgm(dir / "max.pgm"), FormatError);
  EXPECT_THROW(read_pgm(dir / "absent.pgm"), IoError);
  EXPECT_THROW(write_pgm(GrayImage{2, 2, {1, 2, 3}}, dir / "x.pgm"), ShapeError);
}

TEST(ExcitationImage, LinearMapping) {
  const Tensor map(Shape::nchw(1, 1, 1, 4), {0.0f, 0.25f, 0.5f, 1.0f});
  const GrayImage img = excitation_image(map);
  EXPECT_EQ(img.width, 4u);
  EXPECT_EQ(img.height, 1u);
  EXPECT_EQ(img.pixels, (std::vector<std::uint8_t>{0, 64, 128, 255}));
  EXPECT_THROW(excitation_image(Tensor(Shape::nchw(1, 2, 1, 4))), ShapeError);
}

TEST(DumpExcitation, ZeroWeightSpatialGateIsUniformGray) {
  TempDir dir("exc");
  NetworkSpec spec;
  spec.family = Family::kUNet;
  spec.depth = 2;
  spec.channels = 4;
  spec.num_classes = 3;
  spec.se.mode = SEMode::kSpatial;
  Network<float> net(spec, 1);
  net.visit_parameters([](const std::string& name, const std::string& kind, Parameter<float>& p) {
    if (kind == "sse") p.value.fill(0.0f);
    (void)name;
  });
  Rng rng(2);
  const Tensor image = test::random_tensor<float>(Shape{1, 16, 32}, rng, 0, 1);
  const auto paths = dump_excitation(net, image, {"sE-1", "sD-2", "sE-2"}, 3, dir.path());
  ASSERT_EQ(paths.size(), 3u);
  EXPECT_EQ(paths[0].filename(), "sE-1_epoch003.pgm");
  const GrayImage e1 = read_pgm(paths[0]);
  EXPECT_EQ(e1.width, 32u);
  EXPECT_EQ(e1.height, 16u);
  for (auto v : e1.pixels) ASSERT_EQ(v, 128);
  const GrayImage d2 = read_pgm(paths[1]);
  EXPECT_EQ(d2.width, 32u);
  for (auto v : d2.pixels) ASSERT_EQ(v, 128);
  const GrayImage e2 = read_pgm(paths[2]);
  EXPECT_EQ(e2.width, 16u);
  EXPECT_EQ(e2.height, 8u);
}

}  // namespace
}  // namespace sefcn
