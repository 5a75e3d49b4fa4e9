#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "gpa/agent.hpp"
#include "gpa/alignment.hpp"
#include "gpa/diffusion.hpp"
#include "gpa/world.hpp"

namespace gpa {

struct ScheduleSettings {
    int T = 50;
    double beta_start = 0.02;
    double beta_end = 0.35;
};

struct ReferenceSettings {
    int steps = 4000;
    int batch = 64;
    double lr = 1e-3;
    int temb_dim = 16;
    std::vector<int> hidden = {128, 128, 128};
};

struct EngineSettings {
    std::string kind = "oracle"; // oracle | remote
    double score_slope = 10.0;   // oracle: score = 100 - slope * mpjpe + noise
    double noise_std = 5.0;
    std::string endpoint; // remote; GPA_ENGINE_ENDPOINT overrides
    double timeout_sec = 10.0;
    int retries = 2;
};

struct AgentSettings {
    int top_k = 5;
    int max_rules = 5;
    double ucb_c = 1.0;
    double tau = 0.6;
    bool seed_rules = true;
    int explore_conditions = 200;
    int explore_group = 8;
    int explore_epochs = 1;
    EngineSettings engine;
};

struct PrefsSettings {
    int group_size = 20;
    int conditions = 0; // 0: all training conditions
};

struct AlignSettings {
    double beta = 0.1;
    int batch_entries = 4;
    double lr = 1e-4;
    int epochs = 3;
    bool shared_draws = false;
    double dpo_beta = 0.1;
    int dpo_epochs = 3;
    int sft_steps = 2000;
    int sft_batch = 64;
    double sft_lr = 1e-4;
    double sft_label_noise = 0.5;
};

struct EvalSettings {
    std::vector<int> m_values = {10, 100, 200};
    int conditions = 0; // 0: all test conditions
    int pointwise_samples = 200;
    int groupwise_conditions = 100;
    int groupwise_k = 10;
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    std::string out_dir = "runs/default";
    int sampling_steps = 25; // ddim steps for every sampler invocation
    WorldConfig world;
    ScheduleSettings schedule;
    ReferenceSettings reference;
    AgentSettings agent;
    PrefsSettings prefs;
    AlignSettings alignment;
    EvalSettings evaluation;
};

nlohmann::json config_to_json(const ExperimentConfig& config);
ExperimentConfig config_from_json(const nlohmann::json& j);
// Reads a config file and overlays it on the defaults; unknown keys are an error.
ExperimentConfig load_config_file(const std::string& path);

std::string config_hash_hex(const ExperimentConfig& config);
std::string world_hash_hex(const ExperimentConfig& config);
std::string schedule_hash_hex(const ExperimentConfig& config);

// Fixed artifact names under out_dir.
struct ArtifactPaths {
    explicit ArtifactPaths(const std::string& out_dir);
    std::string world_train, world_test;
    std::string ref_checkpoint, ref_train_log;
    std::string agent_memory, exploration_report;
    std::string agent_eval;
    std::string prefs;
    std::string report_json, report_md;
    std::string aligned_checkpoint(const std::string& mode) const;
    std::string align_report(const std::string& mode) const;
    std::string eval_result(const std::string& model) const;

private:
    std::string dir_;
};

NoiseSchedule make_schedule(const ExperimentConfig& config);

// Builds the configured scoring engine; oracle engines get the given
// samples' ground truth registered.
std::shared_ptr<ScoringEngine> make_engine(const ExperimentConfig& config,
                                           const std::vector<WorldSample>& gt_samples);

// Commands. Each writes its artifacts under out_dir and returns them.
void cmd_gen_world(const ExperimentConfig& config);
void cmd_train_ref(const ExperimentConfig& config);
void cmd_explore_agent(const ExperimentConfig& config);
void cmd_eval_agent(const ExperimentConfig& config);
void cmd_build_prefs(const ExperimentConfig& config);
void cmd_align(const ExperimentConfig& config, const std::string& mode); // group | dpo | sft
void cmd_evaluate(const ExperimentConfig& config, const std::string& model); // ref|group|dpo|sft
void cmd_report(const ExperimentConfig& config);

// Convenience: full pipeline in dependency order.
void cmd_run_all(const ExperimentConfig& config);

// Min-of-M evaluation of one checkpoint over held-out conditions.
struct MinOfMRow {
    int m = 0;
    double mpjpe_mean = 0.0;
    double pa_mpjpe_mean = 0.0;
};
std::vector<MinOfMRow> evaluate_min_of_m(const DenoiserParameters& params,
                                         const NoiseSchedule& sched, int sampling_steps,
                                         const std::vector<WorldSample>& test,
                                         const std::vector<int>& m_values, std::uint64_t seed);

} // namespace gpa
