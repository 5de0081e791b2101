#include "fictplay/binary_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "fictplay/errors.hpp"

namespace fictplay::io {

namespace {

template <typename T>
void put_le(std::ostream& os, T v) {
  std::array<char, sizeof(T)> bytes{};
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
  os.write(bytes.data(), bytes.size());
  if (!os) throw IoError("write failed");
}

template <typename T>
T get_le(std::istream& is) {
  std::array<unsigned char, sizeof(T)> bytes{};
  is.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (is.gcount() != static_cast<std::streamsize>(sizeof(T))) throw IoError("unexpected end of file");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return static_cast<T>(v);
}

}  // namespace

void write_u8(std::ostream& os, std::uint8_t v) { put_le(os, v); }
void write_u32(std::ostream& os, std::uint32_t v) { put_le(os, v); }
void write_i32(std::ostream& os, std::int32_t v) { put_le(os, static_cast<std::uint32_t>(v)); }
void write_f32(std::ostream& os, float v) { put_le(os, std::bit_cast<std::uint32_t>(v)); }

void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
  if (!os) throw IoError("write failed");
}

void write_f32_array(std::ostream& os, std::span<const float> values) {
  for (float v : values) write_f32(os, v);
}

std::uint8_t read_u8(std::istream& is) { return get_le<std::uint8_t>(is); }
std::uint32_t read_u32(std::istream& is) { return get_le<std::uint32_t>(is); }
std::int32_t read_i32(std::istream& is) { return static_cast<std::int32_t>(get_le<std::uint32_t>(is)); }
float read_f32(std::istream& is) { return std::bit_cast<float>(get_le<std::uint32_t>(is)); }

std::string read_string(std::istream& is, std::uint32_t max_len) {
  const std::uint32_t n = read_u32(is);
  if (n > max_len) throw IoError("string length " + std::to_string(n) + " exceeds limit");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (is.gcount() != static_cast<std::streamsize>(n)) throw IoError("unexpected end of file");
  return s;
}

std::vector<float> read_f32_array(std::istream& is, std::size_t count) {
  std::vector<float> out(count);
  for (auto& v : out) v = read_f32(is);
  return out;
}

void write_magic(std::ostream& os, const char (&magic)[9]) {
  os.write(magic, 8);
  if (!os) throw IoError("write failed");
}

void expect_magic(std::istream& is, const char (&magic)[9], const std::string& what) {
  char buf[8] = {};
  is.read(buf, 8);
  if (is.gcount() != 8 || std::memcmp(buf, magic, 8) != 0) throw IoError(what + ": bad magic");
}

std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "' for reading");
  return is;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  return os;
}

std::vector<char> read_file(const std::string& path) {
  auto is = open_in(path);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace fictplay::io
