#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "gpa/denoiser.hpp"
#include "gpa/optimizer.hpp"

namespace gpa {

// Versioned JSON container for model weights. Round-trips are bit-exact:
// floats are emitted with shortest round-trip precision.
struct Checkpoint {
    DenoiserParameters params;
    std::optional<OptimizerState> optimizer;
    std::uint64_t rng_seed = 0;
    std::string schedule_id;
    std::string config_hash; // hex fingerprint of the producing config
    std::string version = "";
};

std::string checkpoint_to_json(const Checkpoint& c);
Checkpoint checkpoint_from_json(const std::string& text);

void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

} // namespace gpa
