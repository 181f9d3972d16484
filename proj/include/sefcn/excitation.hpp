#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sefcn/network.hpp"

namespace sefcn {

struct GrayImage {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

// Binary PGM (P5, maxval 255).
void write_pgm(const GrayImage& img, const std::filesystem::path& path);
GrayImage read_pgm(const std::filesystem::path& path);  // IoError / FormatError

// round-half-to-even of 255 * v, v clamped to [0, 1].
std::uint8_t gray_level(double v);

// Maps a (1, 1, H, W) excitation map linearly to gray levels.
GrayImage excitation_image(const Tensor& map);

// Runs `image` (1, H, W) through the network in eval mode and writes
// "<block>_epoch%03d.pgm" for every requested block. Returns the written paths.
std::vector<std::filesystem::path> dump_excitation(Network<float>& net, const Tensor& image,
                                                   const std::vector<std::string>& blocks, std::size_t epoch,
                                                   const std::filesystem::path& out_dir);

}  // namespace sefcn
