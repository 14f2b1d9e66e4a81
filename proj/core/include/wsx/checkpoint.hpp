#pragma once

// Versioned binary checkpoints.
//
// Layout: 8-byte magic "WSXCKPT\0", u32 version, u64 metadata length, UTF-8
// JSON metadata (model config incl. projection, thresholds), u64 tensor count,
// then per tensor a u32 name length, name, u32 rank and u64 dims; the float64
// payloads follow in table order. All integers and floats are little-endian.

#include "wsx/model.hpp"

#include <filesystem>
#include <memory>

namespace wsx {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::unique_ptr<Model> model;
  ExtractionThresholds thresholds;
};

std::string serialize_checkpoint(const Model& model, const ExtractionThresholds& thresholds);
Checkpoint deserialize_checkpoint(std::string_view bytes);

/// Written to a sibling temp file and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const Model& model, const ExtractionThresholds& thresholds);
/// Either returns a complete model or throws; never a partially loaded one.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace wsx
