#pragma once

// Versioned binary checkpoint: magic, format version, length-prefixed
// canonical config text, named parameter records (name, shape, little-endian
// f32 data), trailing FNV-1a checksum. Round-trips bit-exactly.

#include <string>

#include "countnet/model.hpp"

namespace countnet {

struct Checkpoint {
  ModelConfig config;
  ParamRegistry<float> params;
};

void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const ParamRegistry<float>& reg);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace countnet
