#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "simcl/tensor.hpp"

namespace simcl {

// Named parameter snapshot. Entries keep insertion order; batch-norm running
// buffers ride along as ordinary entries so eval behaviour survives a round
// trip bit-for-bit.
struct Checkpoint {
  std::string descriptor;  // architecture string, must match on load
  std::uint64_t step = 0;
  std::uint64_t config_fingerprint = 0;
  std::vector<std::pair<std::string, Tensor>> entries;

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : entries)
      if (n == name) return &t;
    return nullptr;
  }
};

// On-disk layout, all little-endian:
//   magic "SMCLCKPT", u32 version, u64 step, u64 config_fingerprint,
//   u32 descriptor length + bytes, u32 entry count, then per entry:
//   u32 name length + bytes, u32 rank, i64 extents..., f32 payload...
//   Trailing u32 CRC-32 of everything before it.
// Writes go to "<path>.tmp" then rename, so crashes never leave a torn file.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace simcl
