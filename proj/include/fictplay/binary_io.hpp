#pragma once

#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

namespace fictplay::io {

// Little-endian primitives on binary streams. Readers throw IoError on EOF.

void write_u8(std::ostream& os, std::uint8_t v);
void write_u32(std::ostream& os, std::uint32_t v);
void write_i32(std::ostream& os, std::int32_t v);
void write_f32(std::ostream& os, float v);
void write_string(std::ostream& os, const std::string& s);  // u32 length + bytes
void write_f32_array(std::ostream& os, std::span<const float> values);

std::uint8_t read_u8(std::istream& is);
std::uint32_t read_u32(std::istream& is);
std::int32_t read_i32(std::istream& is);
float read_f32(std::istream& is);
std::string read_string(std::istream& is, std::uint32_t max_len = 1u << 20);
std::vector<float> read_f32_array(std::istream& is, std::size_t count);

void write_magic(std::ostream& os, const char (&magic)[9]);
void expect_magic(std::istream& is, const char (&magic)[9], const std::string& what);

/// Opens for binary reading/writing or throws IoError naming the path.
std::ifstream open_in(const std::string& path);
std::ofstream open_out(const std::string& path);

/// Whole-file contents, for byte-level comparisons.
std::vector<char> read_file(const std::string& path);

}  // namespace fictplay::io
