#include "sketchhash/hamming.hpp"

#include <bit>
#include <sstream>
#include <unordered_set>

#include "sketchhash/binary_io.hpp"

namespace sketchhash {

std::size_t PackedCodes::memory_bytes() const {
  return words.size() * sizeof(std::uint64_t) + ids.size() * sizeof(std::uint64_t) +
         labels.size() * sizeof(std::uint16_t);
}

std::vector<std::uint64_t> pack_code(const BinaryCode& code) {
  std::vector<std::uint64_t> words(static_cast<std::size_t>(words_for_bits(static_cast<int>(code.size()))), 0);
  for (std::size_t i = 0; i < code.size(); ++i) {
    if (code.bits[i]) words[i / 64] |= std::uint64_t{1} << (i % 64);
  }
  return words;
}

PackedCodes pack(std::span<const BinaryCode> codes, std::span<const std::uint64_t> ids,
                 std::span<const std::uint16_t> labels) {
  if (ids.size() != codes.size()) throw ShapeError("pack: " + std::to_string(codes.size()) + " codes but " +
                                                   std::to_string(ids.size()) + " ids");
  if (!labels.empty() && labels.size() != codes.size()) throw ShapeError("pack: label count differs from code count");

  PackedCodes out;
  out.n = codes.size();
  out.d = codes.empty() ? 0 : static_cast<int>(codes.front().size());
  out.words_per_code = words_for_bits(out.d);
  out.words.reserve(out.n * static_cast<std::size_t>(out.words_per_code));
  std::unordered_set<std::uint64_t> seen;
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (static_cast<int>(codes[i].size()) != out.d) {
      throw ShapeError("pack: code " + std::to_string(i) + " has " + std::to_string(codes[i].size()) +
                       " bits, expected " + std::to_string(out.d));
    }
    if (!seen.insert(ids[i]).second) throw PreconditionError("pack: duplicate id " + std::to_string(ids[i]));
    const auto w = pack_code(codes[i]);
    out.words.insert(out.words.end(), w.begin(), w.end());
  }
  out.ids.assign(ids.begin(), ids.end());
  out.labels.assign(labels.begin(), labels.end());
  return out;
}

BinaryCode unpack(const PackedCodes& codes, std::size_t index) {
  if (index >= codes.n) throw PreconditionError("unpack: index " + std::to_string(index) + " out of range");
  const auto row = codes.row(index);
  BinaryCode code;
  code.bits.resize(static_cast<std::size_t>(codes.d));
  for (std::size_t i = 0; i < code.bits.size(); ++i) code.bits[i] = (row[i / 64] >> (i % 64)) & 1U;
  return code;
}

int hamming(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b) {
  if (a.size() != b.size()) {
    throw ShapeError("hamming: " + std::to_string(a.size()) + " words vs " + std::to_string(b.size()));
  }
  int d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += std::popcount(a[i] ^ b[i]);
  return d;
}

std::vector<Hit> search(std::span<const std::uint64_t> query, const PackedCodes& gallery, std::size_t k) {
  if (gallery.n == 0) return {};
  if (query.size() != static_cast<std::size_t>(gallery.words_per_code)) {
    throw ShapeError("search: query has " + std::to_string(query.size()) + " words, gallery codes have " +
                     std::to_string(gallery.words_per_code));
  }
  const std::size_t n = gallery.n;
  const std::size_t limit = (k == 0 || k > n) ? n : k;

  // Distances are bounded by d, so a counting sort gives the stable order
  // (ascending distance, then index) in two linear passes.
  std::vector<std::uint16_t> dist(n);
  std::vector<std::size_t> bucket(static_cast<std::size_t>(gallery.d) + 2, 0);
  const std::size_t wpc = static_cast<std::size_t>(gallery.words_per_code);
  const std::uint64_t* w = gallery.words.data();
  if (wpc == 1) {
    const std::uint64_t q = query[0];
    for (std::size_t i = 0; i < n; ++i) {
      dist[i] = static_cast<std::uint16_t>(std::popcount(w[i] ^ q));
      ++bucket[dist[i] + 1];
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      int d = 0;
      for (std::size_t j = 0; j < wpc; ++j) d += std::popcount(w[i * wpc + j] ^ query[j]);
      dist[i] = static_cast<std::uint16_t>(d);
      ++bucket[dist[i] + 1];
    }
  }
  for (std::size_t b = 1; b < bucket.size(); ++b) bucket[b] += bucket[b - 1];

  // Only buckets that start before `limit` contribute.
  std::size_t max_d = 0;
  while (max_d + 1 < bucket.size() - 1 && bucket[max_d + 1] < limit) ++max_d;

  std::vector<Hit> out(std::min(n, bucket[max_d + 1]));
  for (std::size_t i = 0; i < n; ++i) {
    if (dist[i] > max_d) continue;
    auto& h = out[bucket[dist[i]]++];
    h.index = static_cast<std::uint32_t>(i);
    h.id = gallery.ids[i];
    h.distance = dist[i];
  }
  out.resize(limit);
  return out;
}

std::vector<Hit> search(const BinaryCode& query, const PackedCodes& gallery, std::size_t k) {
  if (gallery.n != 0 && static_cast<int>(query.size()) != gallery.d) {
    throw ShapeError("search: query has " + std::to_string(query.size()) + " bits, gallery has " +
                     std::to_string(gallery.d));
  }
  return search(pack_code(query), gallery, k);
}

PackedCodes build_gallery(const Encoder& encoder, const Corpus& corpus, std::span<const std::uint32_t> ids) {
  if (ids.empty()) {
    PackedCodes empty;
    empty.d = encoder.arch().code_bits;
    empty.words_per_code = words_for_bits(empty.d);
    return empty;
  }
  const auto refs = select_sketches(corpus, ids);
  const auto codes = encoder.encode(refs);
  std::vector<std::uint64_t> gallery_ids(ids.begin(), ids.end());
  std::vector<std::uint16_t> labels;
  labels.reserve(refs.size());
  for (const auto* s : refs) labels.push_back(s->label);
  return pack(codes, gallery_ids, labels);
}

namespace {
constexpr std::string_view kGalleryMagic = "SKHGALRY";
constexpr std::uint32_t kGalleryVersion = 1;
}  // namespace

void write_gallery(std::ostream& out, const PackedCodes& codes) {
  io::write_magic(out, kGalleryMagic, kGalleryVersion);
  io::write_u64(out, codes.n);
  io::write_u32(out, static_cast<std::uint32_t>(codes.d));
  io::write_u8(out, codes.has_labels() ? 1 : 0);
  for (auto w : codes.words) io::write_u64(out, w);
  for (auto id : codes.ids) io::write_u64(out, id);
  for (auto l : codes.labels) io::write_u16(out, l);
}

PackedCodes read_gallery(std::istream& in) {
  io::read_magic(in, kGalleryMagic, kGalleryVersion);
  PackedCodes codes;
  codes.n = io::read_u64(in);
  codes.d = static_cast<int>(io::read_u32(in));
  if (codes.d < 0 || codes.d > 65536) throw FormatError("gallery code length out of range");
  codes.words_per_code = words_for_bits(codes.d);
  const bool labeled = io::read_u8(in) != 0;
  codes.words.resize(codes.n * static_cast<std::size_t>(codes.words_per_code));
  for (auto& w : codes.words) w = io::read_u64(in);
  codes.ids.resize(codes.n);
  for (auto& id : codes.ids) id = io::read_u64(in);
  if (labeled) {
    codes.labels.resize(codes.n);
    for (auto& l : codes.labels) l = io::read_u16(in);
  }
  const int spare = codes.words_per_code * 64 - codes.d;
  if (spare > 0 && codes.d > 0) {
    const std::uint64_t mask = ~std::uint64_t{0} << (64 - spare);
    for (std::size_t i = 0; i < codes.n; ++i) {
      if (codes.row(i).back() & mask) throw FormatError("gallery code " + std::to_string(i) + " has stray high bits");
    }
  }
  return codes;
}

std::string gallery_bytes(const PackedCodes& codes) {
  std::ostringstream out;
  write_gallery(out, codes);
  return out.str();
}

void save_gallery(const std::string& path, const PackedCodes& codes) { io::write_file(path, gallery_bytes(codes)); }

PackedCodes load_gallery(const std::string& path) {
  std::istringstream in(io::read_file(path));
  return read_gallery(in);
}

std::string code_to_hex(const BinaryCode& code) {
  const auto words = pack_code(code);
  static const char* digits = "0123456789abcdef";
  std::string hex;
  const int last_digits = (static_cast<int>(code.size()) % 64 + 3) / 4;
  for (std::size_t w = words.size(); w-- > 0;) {
    const int n = (w + 1 == words.size() && last_digits > 0) ? last_digits : 16;
    for (int i = n - 1; i >= 0; --i) hex += digits[(words[w] >> (4 * i)) & 0xF];
  }
  return hex;
}

BinaryCode code_from_hex(const std::string& hex, int d) {
  BinaryCode code;
  code.bits.assign(static_cast<std::size_t>(d), 0);
  std::size_t bit = 0;
  for (auto it = hex.rbegin(); it != hex.rend(); ++it) {
    const char c = *it;
    int v;
    if (c >= '0' && c <= '9') v = c - '0';
    else if (c >= 'a' && c <= 'f') v = c - 'a' + 10;
    else if (c >= 'A' && c <= 'F') v = c - 'A' + 10;
    else throw FormatError(std::string("invalid hex digit '") + c + "'");
    for (int k = 0; k < 4; ++k, ++bit) {
      if (((v >> k) & 1) == 0) continue;
      if (bit >= code.bits.size()) throw FormatError("hex code has more than " + std::to_string(d) + " bits");
      code.bits[bit] = 1;
    }
  }
  return code;
}

}  // namespace sketchhash
