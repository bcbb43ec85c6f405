#include "sketchhash/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "sketchhash/binary_io.hpp"

namespace sketchhash {

namespace {
constexpr std::string_view kMagic = "SKHCKPT1";
constexpr std::uint32_t kVersion = 1;
}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  io::write_magic(out, kMagic, kVersion);
  io::write_u32(out, static_cast<std::uint32_t>(ckpt.meta.size()));
  for (const auto& [k, v] : ckpt.meta) {
    io::write_string(out, k);
    io::write_string(out, v);
  }
  io::write_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    io::write_string(out, name);
    io::write_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) io::write_u64(out, static_cast<std::uint64_t>(e));
    for (Eigen::Index i = 0; i < t.size(); ++i) io::write_f64(out, t.flat()[i]);
  }
}

Checkpoint read_checkpoint(std::istream& in) {
  io::read_magic(in, kMagic, kVersion);
  Checkpoint ckpt;
  const auto n_meta = io::read_u32(in);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto key = io::read_string(in);
    ckpt.meta[key] = io::read_string(in);
  }
  const auto n = io::read_u32(in);
  for (std::uint32_t i = 0; i < n; ++i) {
    auto name = io::read_string(in);
    const auto rank = io::read_u32(in);
    if (rank > 8) throw FormatError("tensor '" + name + "' has implausible rank");
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(static_cast<Eigen::Index>(io::read_u64(in)));
    if (shape_size(shape) > (Eigen::Index{1} << 32)) throw FormatError("tensor '" + name + "' too large");
    Tensor t(shape);
    for (Eigen::Index k = 0; k < t.size(); ++k) t.flat()[k] = io::read_f64(in);
    ckpt.tensors.emplace(std::move(name), std::move(t));
  }
  return ckpt;
}

std::string checkpoint_bytes(const Checkpoint& ckpt) {
  std::ostringstream out;
  write_checkpoint(out, ckpt);
  return out.str();
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  io::write_file(path, checkpoint_bytes(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path);
  return read_checkpoint(in);
}

}  // namespace sketchhash
