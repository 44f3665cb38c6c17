#pragma once

#include <cstdint>
#include <string>

#include "t2m/hypernet.hpp"

#include <nlohmann/json_fwd.hpp>

namespace t2m {

// Everything needed to re-run inference exactly: the model, the descriptor
// preprocessing flag, and provenance of the training run.
struct Checkpoint {
    HyperModel model;
    bool normalize_descriptors = true;
    std::uint64_t seed = 0;
    std::string training_config_hash;
};

inline constexpr int kCheckpointFormatVersion = 1;

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace t2m
