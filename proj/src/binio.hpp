#pragma once

#include <cstdint>
#include <fstream>
#include <string>

#include "fixformer/errors.hpp"

// Fixed-width little-endian primitives shared by the binary file formats.
namespace fixformer::binio {

inline void write_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ofstream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint32_t read_u32(std::ifstream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4) throw DataError(path + ": truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t read_u64(std::ifstream& in, const std::string& path) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (in.gcount() != 8) throw DataError(path + ": truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace fixformer::binio
