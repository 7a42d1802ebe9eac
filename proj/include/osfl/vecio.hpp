#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "osfl/common.hpp"

namespace osfl {

// Checkpoint format: 16-byte header (magic "OSFSVEC1", u64 dim), then
// dim little-endian IEEE-754 doubles.
inline constexpr char kVecMagic[8] = {'O', 'S', 'F', 'S', 'V', 'E', 'C', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

inline void save_vec(const std::string& path, const Vec& v) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("save_vec: cannot open " + path);
  out.write(kVecMagic, 8);
  std::uint64_t dim = v.size();
  out.write(reinterpret_cast<const char*>(&dim), 8);
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
  if (!out) throw Error("save_vec: write failed for " + path);
}

inline Vec load_vec(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact("load_vec: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kVecMagic, 8) != 0)
    throw InvalidInput("load_vec: bad magic in " + path);
  std::uint64_t dim = 0;
  in.read(reinterpret_cast<char*>(&dim), 8);
  if (!in) throw InvalidInput("load_vec: truncated header in " + path);
  Vec v(dim);
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(dim * sizeof(double)));
  if (!in) throw InvalidInput("load_vec: truncated payload in " + path);
  require_finite(v, "load_vec");
  return v;
}

}  // namespace osfl
