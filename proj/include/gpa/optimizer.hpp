#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "gpa/denoiser.hpp"

namespace gpa {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// First/second moment accumulators; shapes mirror the parameters.
struct OptimizerState {
    std::vector<Eigen::MatrixXd> m_weights, v_weights;
    std::vector<Eigen::VectorXd> m_biases, v_biases;
    std::int64_t step = 0;

    static OptimizerState zeros_like(const DenoiserParameters& p);
};

// Adaptive-moment update with bias correction. Throws "diverged" on a
// non-finite gradient.
void optimizer_step(DenoiserParameters& params, const DenoiserGradients& grads,
                    OptimizerState& state, const AdamConfig& config);

} // namespace gpa
