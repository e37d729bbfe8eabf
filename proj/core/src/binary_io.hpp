#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "ctcycle/errors.hpp"

// Little-endian stream helpers shared by the volume and checkpoint
// containers. Readers track the byte offset so format errors can name it.

namespace ctcycle::io {

class Reader {
 public:
  explicit Reader(std::istream& in, std::string name) : in_(in), name_(std::move(name)) {}

  std::uint64_t offset() const { return offset_; }

  void read_bytes(void* dst, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw FormatError(name_ + ": truncated while reading " + what + " at byte offset " +
                        std::to_string(offset_));
    }
    offset_ += n;
  }

  std::uint8_t read_u8(const char* what) {
    std::uint8_t v;
    read_bytes(&v, 1, what);
    return v;
  }

  std::uint16_t read_u16(const char* what) {
    std::uint8_t b[2];
    read_bytes(b, 2, what);
    return static_cast<std::uint16_t>(b[0] | (static_cast<std::uint16_t>(b[1]) << 8));
  }

  std::uint32_t read_u32(const char* what) {
    std::uint8_t b[4];
    read_bytes(b, 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }

  std::uint64_t read_u64(const char* what) {
    const std::uint64_t lo = read_u32(what);
    const std::uint64_t hi = read_u32(what);
    return lo | (hi << 32);
  }

  float read_f32(const char* what) {
    const std::uint32_t bits = read_u32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  void expect_magic(const char (&magic)[5]) {
    char buf[4];
    read_bytes(buf, 4, "magic");
    if (std::memcmp(buf, magic, 4) != 0) {
      throw FormatError(name_ + ": bad magic at byte offset 0, expected \"" +
                        std::string(magic, 4) + "\"");
    }
  }

  void expect_eof() {
    char c;
    in_.read(&c, 1);
    if (!in_.eof()) {
      throw FormatError(name_ + ": trailing bytes at offset " + std::to_string(offset_));
    }
  }

  const std::string& name() const { return name_; }

 private:
  std::istream& in_;
  std::string name_;
  std::uint64_t offset_ = 0;
};

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void write_bytes(const void* src, std::size_t n) {
    out_.write(static_cast<const char*>(src), static_cast<std::streamsize>(n));
  }

  void write_u8(std::uint8_t v) { write_bytes(&v, 1); }

  void write_u16(std::uint16_t v) {
    const std::uint8_t b[2] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8)};
    write_bytes(b, 2);
  }

  void write_u32(std::uint32_t v) {
    const std::uint8_t b[4] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8),
                               static_cast<std::uint8_t>(v >> 16),
                               static_cast<std::uint8_t>(v >> 24)};
    write_bytes(b, 4);
  }

  void write_u64(std::uint64_t v) {
    write_u32(static_cast<std::uint32_t>(v));
    write_u32(static_cast<std::uint32_t>(v >> 32));
  }

  void write_f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(bits);
  }

 private:
  std::ostream& out_;
};

// Raw little-endian payload copies. Hosts this project targets are
// little-endian; the per-scalar paths above stay byte-exact everywhere.
inline void write_f32_span(Writer& w, const float* data, std::size_t count) {
  w.write_bytes(data, count * sizeof(float));
}

inline void read_f32_span(Reader& r, float* data, std::size_t count, const char* what) {
  r.read_bytes(data, count * sizeof(float), what);
}

}  // namespace ctcycle::io
