#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

namespace sketchhash::io {

// Little-endian primitives shared by the corpus, gallery and checkpoint
// formats. Values are written byte by byte so files are portable.

void write_u8(std::ostream& out, std::uint8_t v);
void write_u16(std::ostream& out, std::uint16_t v);
void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
void write_f32(std::ostream& out, float v);
void write_f64(std::ostream& out, double v);
void write_string(std::ostream& out, std::string_view s);
void write_magic(std::ostream& out, std::string_view magic, std::uint32_t version);

std::uint8_t read_u8(std::istream& in);
std::uint16_t read_u16(std::istream& in);
std::uint32_t read_u32(std::istream& in);
std::uint64_t read_u64(std::istream& in);
float read_f32(std::istream& in);
double read_f64(std::istream& in);
std::string read_string(std::istream& in);
/// Checks the magic tag and returns the stored version; throws FormatError
/// when the tag differs or the version exceeds `max_version`.
std::uint32_t read_magic(std::istream& in, std::string_view magic, std::uint32_t max_version);

/// 64-bit FNV-1a over a byte string, rendered as 16 hex digits.
std::string content_hash(std::string_view bytes);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

}  // namespace sketchhash::io
