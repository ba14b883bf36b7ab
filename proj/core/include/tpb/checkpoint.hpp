#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "tpb/nn.hpp"

namespace tpb::nn {

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
    NetworkParams params;
    std::optional<AdamState> optimizer;
    // Free-form integer counters (episode index, training steps, ...).
    std::map<std::string, long long> counters;
};

/// JSON document: format tag and version, architecture descriptor, optimizer
/// flag, and every parameter array as shortest round-trip decimals.
std::string serialize(const Checkpoint& checkpoint);
Checkpoint deserialize(const std::string& text);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tpb::nn
