#pragma once

#include "ff/errors.hpp"
#include "ff/layers.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace ff {

// Checkpoint file layout (all integers little-endian):
//
//   char[8]  magic "FFCKPT\0\0"
//   u32      format version (1)
//   u64      config digest (FNV-1a of the canonical network config JSON)
//   u32      config JSON length, followed by the JSON bytes
//   i64      epoch index the checkpoint was taken after
//   u32      learned-embedding flag
//   u32      tensor count, then per tensor:
//              u32 name length, name bytes, u32 rank, u32 dims[rank],
//              f32 values[prod(dims)]
//   u64      FNV-1a checksum of every preceding byte
//
// Block tensors come first in declaration order, then the label embedding,
// then any extra tensors (optimizer moments).

class CheckpointError : public FormatError {
 public:
  using FormatError::FormatError;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

nlohmann::json to_json(const NetworkConfig& cfg);
NetworkConfig network_config_from_json(const nlohmann::json& j);
std::uint64_t config_digest(const NetworkConfig& cfg);
std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex_digest(std::uint64_t digest);

struct CheckpointExtras {
  std::int64_t epoch = 0;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;
};

struct LoadedCheckpoint {
  Network<float> net;
  CheckpointExtras extras;
  std::uint64_t digest = 0;
};

std::vector<char> serialize_checkpoint(const Network<float>& net, const CheckpointExtras& extras = {});
LoadedCheckpoint deserialize_checkpoint(const std::vector<char>& bytes);

void save_checkpoint(const Network<float>& net, const std::string& path, const CheckpointExtras& extras = {});
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace ff
