#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "platoon/matrix.hpp"

namespace platoon {

// Binary container, little-endian:
//   magic "PLTNCKPT" | u32 version | u64 step | u32 len + metadata bytes (JSON)
//   | u32 block count | per block: u32 len + name, u64 rows, u64 cols, f64 values
inline constexpr char kCheckpointMagic[8] = {'P', 'L', 'T', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint64_t step = 0;
  std::string metadata;
  std::vector<std::pair<std::string, Matrix>> blocks;

  const Matrix& find(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace platoon
