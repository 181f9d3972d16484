#include "sefcn/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace sefcn {

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                                 static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(b.data(), 4);
}

std::uint32_t from_le(const unsigned char* b) {
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

// Reads exactly n bytes or throws with the offset where data ran out.
void read_exact(std::istream& in, unsigned char* dst, std::size_t n, std::size_t offset, const char* what) {
  in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
  const auto got = static_cast<std::size_t>(in.gcount());
  if (got != n) throw FormatError(std::string("truncated ") + what, offset + got);
}

std::uint32_t get_u32(std::istream& in, std::size_t offset, const char* what) {
  unsigned char b[4];
  read_exact(in, b, 4, offset, what);
  return from_le(b);
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

void require_eof(std::istream& in, std::size_t offset) {
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("payload longer than declared extents", offset);
}

}  // namespace

void write_tensor(const Tensor& t, std::ostream& out) {
  out.write(reinterpret_cast<const char*>(kTensorMagic), 4);
  put_u32(out, static_cast<std::uint32_t>(t.shape().rank()));
  for (std::size_t e : t.shape().extents()) put_u32(out, static_cast<std::uint32_t>(e));
  std::vector<char> payload(t.size() * 4);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(t[i]);
    payload[4 * i + 0] = static_cast<char>(bits & 0xFF);
    payload[4 * i + 1] = static_cast<char>((bits >> 8) & 0xFF);
    payload[4 * i + 2] = static_cast<char>((bits >> 16) & 0xFF);
    payload[4 * i + 3] = static_cast<char>((bits >> 24) & 0xFF);
  }
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
}

void write_tensor(const Tensor& t, const std::filesystem::path& path) {
  auto out = open_out(path);
  write_tensor(t, out);
  if (!out) throw IoError("failed writing " + path.string());
}

Tensor read_tensor(std::istream& in, std::size_t base_offset) {
  std::size_t off = base_offset;
  unsigned char magic[4];
  read_exact(in, magic, 4, off, "magic");
  if (std::memcmp(magic, kTensorMagic, 4) != 0) throw FormatError("bad magic, expected \"FTNS\"", off);
  off += 4;
  const std::uint32_t rank = get_u32(in, off, "rank");
  if (rank < 1 || rank > Shape::kMaxRank) {
    throw FormatError("rank " + std::to_string(rank) + " outside 1..4", off);
  }
  off += 4;
  std::array<std::size_t, Shape::kMaxRank> extents{};
  for (std::uint32_t i = 0; i < rank; ++i) {
    extents[i] = get_u32(in, off, "extents");
    if (extents[i] == 0) throw FormatError("zero extent", off);
    off += 4;
  }
  const Shape shape(std::span<const std::size_t>(extents.data(), rank));
  std::vector<unsigned char> raw(shape.numel() * 4);
  read_exact(in, raw.data(), raw.size(), off, "payload");
  std::vector<float> data(shape.numel());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = std::bit_cast<float>(from_le(&raw[4 * i]));
  return Tensor(shape, std::move(data));
}

Tensor read_tensor(const std::filesystem::path& path) {
  auto in = open_in(path);
  Tensor t = read_tensor(in, 0);
  require_eof(in, static_cast<std::size_t>(in.tellg()));
  return t;
}

void write_tensor_list(const std::vector<Tensor>& tensors, const std::filesystem::path& path) {
  auto out = open_out(path);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) write_tensor(t, out);
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<Tensor> read_tensor_list(const std::filesystem::path& path) {
  auto in = open_in(path);
  const std::uint32_t count = get_u32(in, 0, "record count");
  std::vector<Tensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    out.push_back(read_tensor(in, static_cast<std::size_t>(in.tellg())));
  }
  require_eof(in, static_cast<std::size_t>(in.tellg()));
  return out;
}

}  // namespace sefcn
