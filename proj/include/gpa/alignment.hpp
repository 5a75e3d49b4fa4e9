#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "gpa/diffusion.hpp"
#include "gpa/preference.hpp"

namespace gpa {

struct AlignmentConfig {
    double beta = 0.1;       // regularization weight on the loss-gap objective
    int batch_entries = 4;   // conditions per optimizer step
    double lr = 1e-4;
    int steps = 0;           // optimizer steps; 0 means one epoch
    std::uint64_t seed = 0;
    bool shared_draws = false; // share (t, eps) across hypotheses of an entry
    bool skip_degenerate = true;
    double dpo_beta = 0.1;

    // Optional periodic evaluation snapshots.
    int eval_every = 0;
    std::function<double(const DenoiserParameters&)> eval_hook;
};

struct TrainStepStat {
    int step = 0;
    double loss = 0.0;
    double mean_gap = 0.0; // mean advantage-weighted (theta - ref) loss gap
};

struct EvalSnapshot {
    int step = 0;
    double value = 0.0;
};

struct TrainingReport {
    std::vector<TrainStepStat> steps;
    std::vector<EvalSnapshot> snapshots;
};

// One (t, eps) draw per hypothesis.
struct HypDraw {
    int t = 1;
    Eigen::VectorXd eps;
};

std::vector<HypDraw> make_draws(Rng& rng, const NoiseSchedule& sched, int dim, int count,
                                bool shared);

// Advantage-weighted loss-gap objective over one group:
//   loss = beta * T * sum_i lambda_t A_i (L_theta(x_t^i, eps_i) - L_ref(x_t^i, eps_i))
// Gradients flow only through the theta term; the reference term is a
// constant. Degenerate groups yield zero loss and zero gradients.
std::pair<double, DenoiserGradients> group_preference_loss(const DenoiserParameters& theta,
                                                           const DenoiserParameters& ref,
                                                           const GroupPreferenceEntry& entry,
                                                           const std::vector<HypDraw>& draws,
                                                           const NoiseSchedule& sched, double beta);

// Pairwise logistic contrast between the best- and worst-scored
// hypotheses, with one shared (t, eps) across the pair:
//   loss = -log sigmoid(-beta * T * lambda_t * (gap_winner - gap_loser))
std::pair<double, DenoiserGradients> dpo_pairwise_loss(const DenoiserParameters& theta,
                                                       const DenoiserParameters& ref,
                                                       const Eigen::VectorXd& winner,
                                                       const Eigen::VectorXd& loser,
                                                       const Eigen::VectorXd& condition,
                                                       const HypDraw& draw,
                                                       const NoiseSchedule& sched, double beta);

// Group-preference finetuning from a frozen reference.
DenoiserParameters align(const DenoiserParameters& ref, const PreferenceDataset& dataset,
                         const NoiseSchedule& sched, const AlignmentConfig& config,
                         TrainingReport* report = nullptr);

// Pairwise baseline over the same dataset (winner/loser per entry).
DenoiserParameters align_dpo(const DenoiserParameters& ref, const PreferenceDataset& dataset,
                             const NoiseSchedule& sched, const AlignmentConfig& config,
                             TrainingReport* report = nullptr);

struct FinetuneConfig {
    int steps = 0;
    int batch = 64;
    double lr = 1e-4;
    double label_noise_std = 0.0; // injected noise on the pose labels
    std::uint64_t seed = 0;
};

// Continues denoising-loss training from the reference weights.
DenoiserParameters supervised_finetune(
    const DenoiserParameters& ref,
    const std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>>& labeled,
    const NoiseSchedule& sched, const FinetuneConfig& config, TrainingReport* report = nullptr);

} // namespace gpa
