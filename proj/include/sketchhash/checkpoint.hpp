#pragma once

#include <istream>
#include <map>
#include <ostream>
#include <string>

#include "sketchhash/graph.hpp"

namespace sketchhash {

/// Named tensors plus string metadata (architecture descriptor, provenance).
///
/// File layout, little-endian:
///   "SKHCKPT1" u32 version
///   u32 n_meta, then n_meta x (string key, string value)
///   u32 n_tensors, then per tensor: string name, u32 rank, rank x u64 extent,
///   product(extents) x f64
/// Strings are u32 length + bytes. Entries are written in key order.
struct Checkpoint {
  std::map<std::string, std::string> meta;
  Params tensors;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
std::string checkpoint_bytes(const Checkpoint& ckpt);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace sketchhash
