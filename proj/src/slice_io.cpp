#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "cevae/data.hpp"
#include "cevae/errors.hpp"

namespace cevae {

namespace fs = std::filesystem;

namespace {

constexpr std::array<char, 4> kMagic{'C', 'E', 'V', 'S'};
constexpr std::size_t kHeaderSize = 16;

void put_u32(std::vector<unsigned char>& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::vector<unsigned char> header(std::uint8_t dtype, int rows, int cols) {
  std::vector<unsigned char> buf(kMagic.begin(), kMagic.end());
  buf.push_back(kSliceVersion);
  buf.push_back(dtype);
  buf.push_back(0);
  buf.push_back(0);
  put_u32(buf, static_cast<std::uint32_t>(rows));
  put_u32(buf, static_cast<std::uint32_t>(cols));
  return buf;
}

void write_bytes(const fs::path& path, const std::vector<unsigned char>& buf) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

struct RawSlice {
  std::uint8_t dtype = 0;
  int rows = 0;
  int cols = 0;
  std::vector<unsigned char> payload;
};

RawSlice read_raw(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open slice file: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < kHeaderSize) throw FormatError("truncated header: " + path.string());
  if (std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) throw FormatError("bad magic: " + path.string());
  if (bytes[4] != kSliceVersion) throw FormatError("unsupported slice version: " + path.string());
  RawSlice raw;
  raw.dtype = bytes[5];
  const std::uint32_t rows = get_u32(bytes.data() + 8);
  const std::uint32_t cols = get_u32(bytes.data() + 12);
  if (rows == 0 || cols == 0 || rows > (1u << 16) || cols > (1u << 16))
    throw FormatError("implausible slice shape: " + path.string());
  std::size_t elem = 0;
  if (raw.dtype == kDtypeFloat32)
    elem = 4;
  else if (raw.dtype == kDtypeUint8)
    elem = 1;
  else
    throw FormatError("unknown dtype code: " + path.string());
  const std::size_t expected = kHeaderSize + static_cast<std::size_t>(rows) * cols * elem;
  if (bytes.size() != expected) throw FormatError("payload size mismatch (truncated?): " + path.string());
  raw.rows = static_cast<int>(rows);
  raw.cols = static_cast<int>(cols);
  raw.payload.assign(bytes.begin() + kHeaderSize, bytes.end());
  return raw;
}

}  // namespace

void write_slice(const fs::path& path, const Image& image) {
  auto buf = header(kDtypeFloat32, image.rows, image.cols);
  buf.reserve(buf.size() + image.size() * 4);
  for (float v : image.values) put_u32(buf, std::bit_cast<std::uint32_t>(v));
  write_bytes(path, buf);
}

void write_mask(const fs::path& path, const Mask& mask) {
  auto buf = header(kDtypeUint8, mask.rows, mask.cols);
  for (auto v : mask.values) {
    if (v > 1) throw std::invalid_argument("write_mask: mask values must be 0 or 1");
    buf.push_back(v);
  }
  write_bytes(path, buf);
}

Image read_slice(const fs::path& path) {
  const RawSlice raw = read_raw(path);
  if (raw.dtype != kDtypeFloat32) throw FormatError("expected float32 slice: " + path.string());
  Image img(raw.rows, raw.cols);
  for (std::size_t i = 0; i < img.size(); ++i) img.values[i] = std::bit_cast<float>(get_u32(raw.payload.data() + 4 * i));
  return img;
}

Mask read_mask(const fs::path& path) {
  const RawSlice raw = read_raw(path);
  if (raw.dtype != kDtypeUint8) throw FormatError("expected u8 mask: " + path.string());
  Mask mask(raw.rows, raw.cols);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (raw.payload[i] > 1) throw FormatError("mask value outside {0,1}: " + path.string());
    mask.values[i] = raw.payload[i];
  }
  return mask;
}

}  // namespace cevae
