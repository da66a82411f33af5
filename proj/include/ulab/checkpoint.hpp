#pragma once

#include <filesystem>

#include "ulab/model.hpp"

namespace ulab {

// Checkpoint directory layout: manifest.json (config + tensor table) and
// tensors.bin (row-major little-endian f32 payloads in manifest order).
void save_checkpoint(const Model& m, const std::filesystem::path& dir);
Model load_checkpoint(const std::filesystem::path& dir);

}  // namespace ulab
