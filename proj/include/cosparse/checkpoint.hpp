#pragma once

#include "cosparse/models.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cosparse {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  Tensorf value;
};

/// In-memory image of a checkpoint file:
///   "CSPK" | u32 version | 32-byte spec digest | u32 count |
///   count x (u32 name_len, name, u8 dtype=0, u32 rank, rank x u64 dim, f32 values) |
///   u32 metadata_len | metadata JSON (UTF-8)
/// All integers and floats are little-endian regardless of host order.
struct CheckpointFile {
  std::array<std::uint8_t, 32> spec_digest{};
  std::vector<CheckpointTensor> tensors;
  nlohmann::json metadata = nlohmann::json::object();

  const Tensorf& tensor(const std::string& name) const;
  bool has(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const CheckpointFile& file);
/// Throws CheckpointError on bad magic, unsupported version, truncation or
/// trailing garbage. Never returns a partially decoded file.
CheckpointFile decode_checkpoint(std::span<const std::uint8_t> bytes);

void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& file);
CheckpointFile read_checkpoint(const std::filesystem::path& path);

/// Model checkpoints carry the spec in metadata["spec"] and its digest in
/// the header.
void save_checkpoint(const ModelState& state, const std::filesystem::path& path,
                     const nlohmann::json& metadata = nlohmann::json::object());
ModelState load_checkpoint(const std::filesystem::path& path);
/// Additionally rejects files whose digest differs from `expected`'s.
ModelState load_checkpoint(const std::filesystem::path& path, const ModelSpec& expected);

}  // namespace cosparse
