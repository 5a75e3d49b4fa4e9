#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gpa/embedding.hpp"
#include "gpa/engine.hpp"
#include "gpa/memory.hpp"
#include "gpa/stats.hpp"
#include "gpa/world.hpp"

namespace gpa {

struct AgentConfig {
    int top_k_prototypes = 5;
    int max_rules = 5;
    double ucb_c = 1.0;
    double spearman_tau = 0.6;
};

struct Assessment {
    std::vector<double> scores; // in [0, 100]
    std::vector<std::string> critiques;
    std::vector<std::int64_t> rule_ids;      // rules applied
    std::vector<std::int64_t> prototype_ids; // precedents retrieved
    bool clamped = false;                    // engine returned out-of-range scores
};

struct ExplorationItem {
    Condition condition;
    std::vector<ToyPose> hypotheses;
    ToyPose ground_truth;
};

struct ExplorationReport {
    int groups = 0;
    int prototypes_added = 0;
    int rules_added = 0;
    int successes = 0;       // groups whose rank agreement cleared tau
    int undefined_groups = 0;
    double mean_spearman = 0.0; // over groups where it was defined
};

// Dual-memory scoring agent. While unfrozen, scoring counts rule usage;
// exploration additionally writes back prototypes, credits successful
// rules and mines new ones through engine reflection. Frozen agents are
// pure scorers.
class CritiqueAgent {
public:
    CritiqueAgent(std::shared_ptr<ScoringEngine> engine, AgentConfig config = {},
                  MemoryStore memory = {});

    Assessment score_group(const Condition& condition, const std::vector<ToyPose>& hypotheses);

    ExplorationReport exploration_step(const std::vector<ExplorationItem>& batch, double tau);

    void freeze();
    bool frozen() const { return memory_.frozen(); }

    // Fits score calibration against reference values and stores it; it is
    // applied to every subsequent assessment.
    AffineCalibration calibrate(std::span<const double> raw_scores,
                                std::span<const double> reference_scores);
    void set_calibration(std::optional<AffineCalibration> calibration);
    const std::optional<AffineCalibration>& calibration() const { return calibration_; }

    const MemoryStore& memory() const { return memory_; }
    MemoryStore& memory() { return memory_; }
    const AgentConfig& config() const { return config_; }
    ScoringEngine& engine() { return *engine_; }

    std::uint64_t memory_checksum() const;

    void save(const std::string& path) const;
    static CritiqueAgent load(const std::string& path, std::shared_ptr<ScoringEngine> engine,
                              AgentConfig config = {});

private:
    std::shared_ptr<ScoringEngine> engine_;
    AgentConfig config_;
    MemoryStore memory_;
    std::optional<AffineCalibration> calibration_;
};

} // namespace gpa
