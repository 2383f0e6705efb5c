#pragma once

#include "skipvision/transformer.hpp"

#include <filesystem>
#include <vector>

namespace skipvision {

struct ExportedMap {
  std::filesystem::path binary;   // raw little-endian float32, [head][query][key]
  std::filesystem::path sidecar;  // JSON: layer, heads, shape, roles
};

/// Writes <dir>/<stem>.f32 and <dir>/<stem>.json.
ExportedMap write_attention_map(const AttentionMap& map, const std::filesystem::path& dir,
                                const std::string& stem);

/// Reads a map back from its sidecar (the binary is resolved next to it).
AttentionMap read_attention_map(const std::filesystem::path& sidecar);

}  // namespace skipvision
