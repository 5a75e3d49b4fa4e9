#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "gpa/denoiser.hpp"
#include "gpa/optimizer.hpp"
#include "gpa/rng.hpp"
#include "gpa/schedule.hpp"

namespace gpa {

// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps
Eigen::VectorXd forward_noise(const Eigen::VectorXd& x0, int t, const Eigen::VectorXd& eps,
                              const NoiseSchedule& sched);

// lambda_t * mean over dims of (eps_hat - eps)^2
double denoising_loss(const DenoiserParameters& params, const Eigen::VectorXd& x0, int t,
                      const Eigen::VectorXd& eps, const Eigen::VectorXd& cond,
                      const NoiseSchedule& sched);

// Denoising callback: predicted noise given (x_t, t). Lets the samplers run
// against hand-built or closed-form denoisers in tests.
using DenoiseFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&, int)>;

// Strictly decreasing timestep subset covering T down to 1.
std::vector<int> ddim_timesteps(int T, int steps);

// Deterministic sampler: predicts x0, then moves to the next grid timestep
// with zero injected noise.
Eigen::VectorXd ddim_sample_fn(const DenoiseFn& denoise, const Eigen::VectorXd& initial_noise,
                               const NoiseSchedule& sched, int steps);

Eigen::VectorXd ddim_sample(const DenoiserParameters& params, const Eigen::VectorXd& cond,
                            const Eigen::VectorXd& initial_noise, const NoiseSchedule& sched,
                            int steps);

// All columns of `initial_noise` advance through the same timestep grid in
// one batched network call per step.
Eigen::MatrixXd ddim_sample_group(const DenoiserParameters& params, const Eigen::VectorXd& cond,
                                  const Eigen::MatrixXd& initial_noise,
                                  const NoiseSchedule& sched, int steps);

// Stochastic full-length reverse chain; per-step Gaussian noise of std
// sigma_t. With sigma identically zero it coincides with ddim at steps = T.
Eigen::VectorXd ancestral_sample_fn(const DenoiseFn& denoise, int dim, Rng& rng,
                                    const NoiseSchedule& sched);

Eigen::VectorXd ancestral_sample(const DenoiserParameters& params, const Eigen::VectorXd& cond,
                                 std::uint64_t seed, const NoiseSchedule& sched);

struct ReferenceTrainConfig {
    int steps = 4000;
    int batch = 64;
    double lr = 1e-4;
    std::uint64_t seed = 0;
    int log_every = 0; // 0: one epoch worth of steps
};

struct TrainLogEntry {
    int step = 0;
    double loss = 0.0;
};

// Trains a fresh denoiser by minimizing the denoising loss over uniformly
// sampled (x0, c, t, eps).
DenoiserParameters train_reference(
    const std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>>& dataset,
    const NoiseSchedule& sched, const DenoiserConfig& config, const ReferenceTrainConfig& train,
    std::vector<TrainLogEntry>* log = nullptr);

} // namespace gpa
