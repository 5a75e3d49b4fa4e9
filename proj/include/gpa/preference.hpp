#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "gpa/agent.hpp"
#include "gpa/diffusion.hpp"

namespace gpa {

// One annotated training unit: a condition, G hypotheses sampled from the
// reference model, and their scores.
struct GroupPreferenceEntry {
    Eigen::VectorXd condition;
    std::vector<Eigen::VectorXd> hypotheses;
    std::vector<double> scores;
    std::uint64_t seed = 0;
    bool degenerate = false; // near-zero score spread
};

struct DatasetProvenance {
    std::string reference_checkpoint_id; // hex params checksum
    std::string agent_memory_id;         // hex memory checksum
    std::string engine_kind;
    bool gt_free = true; // false when the annotating engine read ground truth
    int group_size = 0;
    int ddim_steps = 0;
    std::uint64_t base_seed = 0;
    std::string schedule_id;
    std::string config_hash;
};

struct PreferenceDataset {
    DatasetProvenance provenance;
    std::vector<GroupPreferenceEntry> entries;
};

// G deterministic samples conditioned on the same observation, each from
// a distinct seeded initial noise (base_seed .. base_seed + G - 1).
std::vector<Eigen::VectorXd> generate_group(const DenoiserParameters& ref_params,
                                            const NoiseSchedule& sched, int ddim_steps,
                                            const Eigen::VectorXd& condition, int group_size,
                                            std::uint64_t base_seed);

// Generates and scores one group per condition. The agent must be frozen.
PreferenceDataset build_dataset(const DenoiserParameters& ref_params, const NoiseSchedule& sched,
                                int ddim_steps, CritiqueAgent& agent,
                                const std::vector<Condition>& conditions, int group_size,
                                std::uint64_t seed, const std::string& config_hash = "");

// JSON Lines: provenance header then one entry per line.
void save_preference_jsonl(const std::string& path, const PreferenceDataset& dataset);
PreferenceDataset load_preference_jsonl(const std::string& path);

} // namespace gpa
