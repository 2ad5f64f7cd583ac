#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include <json.hpp>

#include "latefuse/arch/model.hpp"

namespace latefuse {

// On-disk layout (all integers little-endian):
//   "LFCK" | u32 format version | u64 header length | header JSON
//   | tensor data (float32, row-major, in header order) | u64 FNV-1a of data
// The header carries the model config, an optional free-form "extra" object
// (the tokenizer lives there) and the tensor directory {name, shape}.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    Model model;
    nlohmann::json extra;
};

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const nlohmann::json& extra = nlohmann::json::object());

// Throws CheckpointError: io, corrupt (including truncation), version_mismatch,
// or config_mismatch when `expected` is given and differs from the header.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::optional<ModelConfig>& expected = std::nullopt);

}  // namespace latefuse
