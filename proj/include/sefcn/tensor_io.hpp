#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <vector>

#include "sefcn/tensor.hpp"

namespace sefcn {

// ".tns" record, little-endian:
//   "FTNS" | u32 rank (1..4) | rank x u32 extents | numel x f32
inline constexpr std::uint8_t kTensorMagic[4] = {0x46, 0x54, 0x4E, 0x53};

void write_tensor(const Tensor& t, std::ostream& out);
void write_tensor(const Tensor& t, const std::filesystem::path& path);

// `base_offset` is added to offsets reported in FormatError when the record
// sits inside a larger file.
Tensor read_tensor(std::istream& in, std::size_t base_offset = 0);
Tensor read_tensor(const std::filesystem::path& path);

// Record-list file: u32 count followed by `count` .tns records.
void write_tensor_list(const std::vector<Tensor>& tensors, const std::filesystem::path& path);
std::vector<Tensor> read_tensor_list(const std::filesystem::path& path);

}  // namespace sefcn
