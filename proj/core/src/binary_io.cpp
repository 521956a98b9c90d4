#include "motor/binary_io.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>

#include "motor/common.hpp"

namespace motor::io {

void Writer::bytes(const void* data, std::size_t n) {
  os_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!os_) throw FormatError("write failed");
}

void Writer::u32(std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  bytes(b, 4);
}

void Writer::u64(std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  bytes(b, 8);
}

void Writer::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void Writer::f32s(std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    bytes(values.data(), values.size_bytes());
  } else {
    for (float v : values) f32(v);
  }
}

void Writer::string(const std::string& s) {
  u32(static_cast<std::uint32_t>(s.size()));
  bytes(s.data(), s.size());
}

void Reader::bytes(void* data, std::size_t n) {
  is_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is_.gcount()) != n) throw FormatError("truncated file");
}

void Reader::expect_magic(const char (&tag)[5]) {
  char got[4];
  bytes(got, 4);
  if (std::memcmp(got, tag, 4) != 0) {
    throw FormatError(std::string("bad magic: expected '") + tag + "'");
  }
}

std::uint8_t Reader::u8() {
  std::uint8_t v;
  bytes(&v, 1);
  return v;
}

std::uint32_t Reader::u32() {
  unsigned char b[4];
  bytes(b, 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t Reader::u64() {
  unsigned char b[8];
  bytes(b, 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

float Reader::f32() { return std::bit_cast<float>(u32()); }

void Reader::f32s(std::span<float> out) {
  if constexpr (std::endian::native == std::endian::little) {
    bytes(out.data(), out.size_bytes());
  } else {
    for (float& v : out) v = f32();
  }
}

std::string Reader::string() {
  const std::uint32_t n = u32();
  std::string s(n, '\0');
  bytes(s.data(), n);
  return s;
}

bool Reader::at_end() { return is_.peek() == std::char_traits<char>::eof(); }

}  // namespace motor::io
