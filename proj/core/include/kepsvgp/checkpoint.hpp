#pragma once

#include <cstdint>
#include <string>

#include "kepsvgp/model.hpp"

namespace kepsvgp::checkpoint {

struct CheckpointExtras {
  std::uint64_t rng_state = 0;
  std::string config_snapshot;  // canonical RunConfig JSON
  std::string config_hash;
};

/// Single file: magic, manifest length, manifest JSON, then the raw
/// little-endian parameter blob. Manifest offsets tile the blob exactly and
/// load(save(model)) reproduces bit-identical parameters.
void save(const std::string& path, const model::Model& m, const CheckpointExtras& extras);

struct LoadedCheckpoint {
  model::Model model;
  CheckpointExtras extras;
};

LoadedCheckpoint load(const std::string& path);

}  // namespace kepsvgp::checkpoint
