#include "sketchhash/binary_io.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "sketchhash/error.hpp"

namespace sketchhash::io {

namespace {

template <typename U>
void put(std::ostream& out, U v) {
  char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  }
  out.write(bytes, sizeof(U));
}

template <typename U>
U get(std::istream& in) {
  unsigned char bytes[sizeof(U)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(U));
  if (!in) throw FormatError("unexpected end of stream");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

void write_u8(std::ostream& out, std::uint8_t v) { put(out, v); }
void write_u16(std::ostream& out, std::uint16_t v) { put(out, v); }
void write_u32(std::ostream& out, std::uint32_t v) { put(out, v); }
void write_u64(std::ostream& out, std::uint64_t v) { put(out, v); }
void write_f32(std::ostream& out, float v) { put(out, std::bit_cast<std::uint32_t>(v)); }
void write_f64(std::ostream& out, double v) { put(out, std::bit_cast<std::uint64_t>(v)); }

void write_string(std::ostream& out, std::string_view s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void write_magic(std::ostream& out, std::string_view magic, std::uint32_t version) {
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
  write_u32(out, version);
}

std::uint8_t read_u8(std::istream& in) { return get<std::uint8_t>(in); }
std::uint16_t read_u16(std::istream& in) { return get<std::uint16_t>(in); }
std::uint32_t read_u32(std::istream& in) { return get<std::uint32_t>(in); }
std::uint64_t read_u64(std::istream& in) { return get<std::uint64_t>(in); }
float read_f32(std::istream& in) { return std::bit_cast<float>(get<std::uint32_t>(in)); }
double read_f64(std::istream& in) { return std::bit_cast<double>(get<std::uint64_t>(in)); }

std::string read_string(std::istream& in) {
  const auto n = read_u32(in);
  if (n > (1u << 30)) throw FormatError("string length out of range");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw FormatError("unexpected end of stream");
  return s;
}

std::uint32_t read_magic(std::istream& in, std::string_view magic, std::uint32_t max_version) {
  std::string tag(magic.size(), '\0');
  in.read(tag.data(), static_cast<std::streamsize>(tag.size()));
  if (!in || tag != magic) {
    throw FormatError("bad magic: expected '" + std::string(magic) + "'");
  }
  const auto version = read_u32(in);
  if (version == 0 || version > max_version) {
    throw FormatError("unsupported " + std::string(magic) + " version " + std::to_string(version));
  }
  return version;
}

std::string content_hash(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path);
}

}  // namespace sketchhash::io
