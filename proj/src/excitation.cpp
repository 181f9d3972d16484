#include "sefcn/excitation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>

namespace sefcn {

std::uint8_t gray_level(double v) {
  const double x = 255.0 * std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::nearbyint(x));  // default rounding mode: ties to even
}

void write_pgm(const GrayImage& img, const std::filesystem::path& path) {
  if (img.pixels.size() != img.width * img.height) throw ShapeError("write_pgm: pixel count does not match extents");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&]() -> std::size_t {
    skip_space();
    const std::size_t start = pos;
    std::size_t v = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') v = v * 10 + static_cast<std::size_t>(bytes[pos++] - '0');
    if (pos == start) throw FormatError("pgm: expected a number", pos);
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw FormatError("pgm: missing P5 magic", 0);
  pos = 2;
  GrayImage img;
  img.width = number();
  img.height = number();
  const std::size_t maxval = number();
  if (maxval != 255) throw FormatError("pgm: maxval must be 255", pos);
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw FormatError("pgm: missing separator before raster", pos);
  }
  ++pos;
  const std::size_t n = img.width * img.height;
  if (bytes.size() - pos != n) throw FormatError("pgm: raster size does not match header", pos);
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return img;
}

GrayImage excitation_image(const Tensor& map) {
  const Shape& s = map.shape();
  require_rank4(s, "excitation_image");
  if (s.n() != 1 || s.c() != 1) throw ShapeError("excitation_image: expected (1, 1, H, W), got " + s.to_string());
  GrayImage img{s.w(), s.h(), std::vector<std::uint8_t>(map.size())};
  for (std::size_t i = 0; i < map.size(); ++i) img.pixels[i] = gray_level(map[i]);
  return img;
}

std::vector<std::filesystem::path> dump_excitation(Network<float>& net, const Tensor& image,
                                                   const std::vector<std::string>& blocks, std::size_t epoch,
                                                   const std::filesystem::path& out_dir) {
  const Shape& s = image.shape();
  const Tensor x = s.rank() == 3 ? image.reshaped(Shape::nchw(1, s[0], s[1], s[2])) : image;
  net.forward(x, Mode::kEval);
  // Resolve every map before writing so a bad block id leaves no partial output.
  std::vector<const Tensor*> maps;
  for (const auto& b : blocks) maps.push_back(&net.spatial_map(b));
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    char suffix[32];
    std::snprintf(suffix, sizeof suffix, "_epoch%03zu.pgm", epoch);
    const auto path = out_dir / (blocks[i] + suffix);
    write_pgm(excitation_image(*maps[i]), path);
    written.push_back(path);
  }
  return written;
}

}  // namespace sefcn
