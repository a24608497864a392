#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "i2i/kvconfig.hpp"
#include "i2i/tensor.hpp"

namespace i2i {

inline constexpr int kCheckpointVersion = 1;

// On disk: a text header
//
//   i2i-checkpoint <version>
//   <key> = <value>                          (hyperparameters and run state)
//   tensor <name> <d0>x<d1>... <offset> <count>
//   payload <bytes> <crc32 hex>
//   end
//
// followed by the payload: every tensor as little-endian float32, in
// manifest order, offsets counted in floats from the payload start.
struct CheckpointData {
  KvConfig header;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>& tensor(const std::string& name) const;
};

void write_checkpoint(const CheckpointData& data, const std::filesystem::path& path);

/// Throws IoError if the file cannot be read and CheckpointError (naming the
/// offending field) on a version mismatch, malformed header, truncated or
/// oversized payload, or checksum mismatch.
CheckpointData read_checkpoint(const std::filesystem::path& path);

}  // namespace i2i
