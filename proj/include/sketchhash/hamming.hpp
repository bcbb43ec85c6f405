#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "sketchhash/encoder.hpp"

namespace sketchhash {

/// Codes packed LSB-first: bit i of a code lives in word i / 64 at bit
/// position i % 64. Unused high bits of the last word are zero.
struct PackedCodes {
  std::size_t n = 0;
  int d = 0;
  int words_per_code = 0;
  std::vector<std::uint64_t> words;   ///< n * words_per_code
  std::vector<std::uint64_t> ids;
  std::vector<std::uint16_t> labels;  ///< empty when the gallery is unlabeled

  bool has_labels() const { return !labels.empty(); }
  std::span<const std::uint64_t> row(std::size_t i) const {
    return {words.data() + i * static_cast<std::size_t>(words_per_code), static_cast<std::size_t>(words_per_code)};
  }
  /// Bytes held by words, ids and labels.
  std::size_t memory_bytes() const;
};

inline int words_for_bits(int d) { return (d + 63) / 64; }

std::vector<std::uint64_t> pack_code(const BinaryCode& code);
/// Throws ShapeError on mixed code lengths, PreconditionError on duplicate ids.
PackedCodes pack(std::span<const BinaryCode> codes, std::span<const std::uint64_t> ids,
                 std::span<const std::uint16_t> labels = {});
BinaryCode unpack(const PackedCodes& codes, std::size_t index);

/// Popcount of the XOR; throws ShapeError when the word counts differ.
int hamming(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b);

struct Hit {
  std::uint32_t index = 0;  ///< position in the gallery
  std::uint64_t id = 0;
  int distance = 0;
};

/// Exhaustive scan. Results ascend by distance, ties by gallery index.
/// k = 0 returns the full ranking.
std::vector<Hit> search(std::span<const std::uint64_t> query, const PackedCodes& gallery, std::size_t k = 0);
std::vector<Hit> search(const BinaryCode& query, const PackedCodes& gallery, std::size_t k = 0);

/// Encodes the given sketches and packs them with their ids and labels.
PackedCodes build_gallery(const Encoder& encoder, const Corpus& corpus, std::span<const std::uint32_t> ids);

/// Layout, little-endian:
///   "SKHGALRY" u32 version, u64 n, u32 d, u8 has_labels,
///   n * words_per_code u64 words, n u64 ids, [n u16 labels]
void write_gallery(std::ostream& out, const PackedCodes& codes);
PackedCodes read_gallery(std::istream& in);
std::string gallery_bytes(const PackedCodes& codes);
void save_gallery(const std::string& path, const PackedCodes& codes);
PackedCodes load_gallery(const std::string& path);

/// Hex rendering of a code, most significant digit first, ceil(D / 4)
/// digits: bit i of the code is bit i of the number the string spells.
std::string code_to_hex(const BinaryCode& code);
BinaryCode code_from_hex(const std::string& hex, int d);

}  // namespace sketchhash
