#pragma once

// Checkpoint container: an 8-byte magic, a little-endian uint64 header length,
// a UTF-8 JSON header and a float32 parameter blob in header order.

#include <filesystem>

#include "ragg/autodiff.hpp"
#include "json.hpp"

namespace ragg {

inline constexpr int kCheckpointVersion = 1;

struct CheckpointData {
  nlohmann::json header;
  std::vector<float> blob;
};

// Adds "version", "kind" and the parameter table to `header`.
void write_checkpoint(const std::filesystem::path& path, const std::string& kind, nlohmann::json header,
                      const nn::ParamStore& params);
CheckpointData read_checkpoint(const std::filesystem::path& path, const std::string& expected_kind);
// Copies blob values into a store whose parameter table must match exactly.
void load_params(const CheckpointData& ckpt, nn::ParamStore& params);

}  // namespace ragg
