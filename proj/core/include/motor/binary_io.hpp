#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace motor::io {

/// Little-endian primitive writer over an ostream.
class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}

  void bytes(const void* data, std::size_t n);
  void magic(const char (&tag)[5]) { bytes(tag, 4); }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f32s(std::span<const float> values);
  void string(const std::string& s);  // u32 length prefix

 private:
  std::ostream& os_;
};

/// Little-endian primitive reader; throws FormatError on truncation.
class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  void bytes(void* data, std::size_t n);
  void expect_magic(const char (&tag)[5]);
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  void f32s(std::span<float> out);
  std::string string();
  bool at_end();

 private:
  std::istream& is_;
};

}  // namespace motor::io
