// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container. Layout (all text lines end in '\n'):
//
//   DI2CKPT v1
//   stage <INIT|WARMUP|ALIGN|CODEBOOK|DONE>
//   completed <comma list in canonical order, or none>
//   config <line count>
//   <key=value lines>
//   arrays <count>
//   <name> <shape, e.g. 192x32> <byte offset> <float count>
//   payload <byte count>
//   <little-endian float32 payload>
//   checksum <16 hex digits, FNV-1a 64 of every preceding byte>
//
// Serialisation is canonical, so load followed by save reproduces the file.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "di2/pipeline.hpp"

namespace di2 {

std::string encode_checkpoint(const Model& model);
Model decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Model& model);
Model load_checkpoint(const std::filesystem::path& path);

struct ManifestEntry {
    std::string name;
    Shape shape;
    std::size_t offset = 0;
    std::size_t count = 0;
};

struct CheckpointInfo {
    std::string stage;
    std::vector<std::string> completed;
    std::string config_text;
    std::vector<ManifestEntry> manifest;
    std::uint64_t checksum = 0;
};

// Parses and validates the header, manifest and checksum without building a model.
CheckpointInfo inspect_checkpoint(const std::string& bytes);

// Deep copy through the serialised array set.
Model clone_model(const Model& model);

}  // namespace di2
