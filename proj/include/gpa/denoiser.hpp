#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "gpa/tensor.hpp"

namespace gpa {

enum class Activation { Tanh, Identity };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

struct DenoiserConfig {
    int pose_dim = 0;
    int cond_dim = 0;
    int temb_dim = 16;
    std::vector<int> hidden = {128, 128, 128};
    Activation activation = Activation::Tanh;

    int input_dim() const { return pose_dim + temb_dim + cond_dim; }
    // Full layer widths: input, hidden..., output.
    std::vector<int> widths() const;
};

// Weights of the conditional noise-prediction MLP. weights[l] maps layer l
// to layer l+1 (rows = fan-out, cols = fan-in); hidden layers apply the
// activation, the output layer is linear.
struct DenoiserParameters {
    DenoiserConfig config;
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;

    std::size_t layer_count() const { return weights.size(); }
    std::size_t parameter_count() const;
    bool all_finite() const;

    std::vector<DenseTensor> to_tensors() const;
    void from_tensors(const std::vector<DenseTensor>& tensors);

    // Symmetric uniform init scaled by 1/sqrt(fan_in), seeded.
    static DenoiserParameters init(const DenoiserConfig& config, std::uint64_t seed);
    static DenoiserParameters zeros(const DenoiserConfig& config);
};

// Gradient of a scalar loss with respect to every parameter; mirrors the
// parameter layout.
struct DenoiserGradients {
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;

    static DenoiserGradients zeros_like(const DenoiserParameters& p);
    void accumulate(const DenoiserGradients& other, double factor = 1.0);
    void scale(double factor);
    bool all_finite() const;
    double squared_norm() const;
};

// Sinusoidal encoding of the timestep; dim must be even, entries in [-1, 1].
Eigen::VectorXd timestep_embedding(int t, int dim);

// Builds the network input (x_t | temb(t) | c) for a batch stored column-wise.
Eigen::MatrixXd denoiser_input(const DenoiserConfig& config, const Eigen::MatrixXd& x_t,
                               const std::vector<int>& timesteps, const Eigen::MatrixXd& cond);

// Post-activation values per layer, kept for the backward pass.
// layer_values[0] is the input, layer_values.back() the linear output.
struct ForwardTrace {
    std::vector<Eigen::MatrixXd> layer_values;
};

Eigen::MatrixXd denoiser_forward_batch(const DenoiserParameters& params,
                                       const Eigen::MatrixXd& input,
                                       ForwardTrace* trace = nullptr);

// Predicted noise for a single sample.
Eigen::VectorXd denoiser_forward(const DenoiserParameters& params, const Eigen::VectorXd& x_t,
                                 int t, const Eigen::VectorXd& cond);

// Backprop through the trace; output_grad holds dLoss/dOutput per column.
// Gradients are summed over the batch columns.
DenoiserGradients denoiser_backward_batch(const DenoiserParameters& params,
                                          const ForwardTrace& trace,
                                          const Eigen::MatrixXd& output_grad);

DenoiserGradients denoiser_backward(const DenoiserParameters& params, const Eigen::VectorXd& x_t,
                                    int t, const Eigen::VectorXd& cond,
                                    const Eigen::VectorXd& output_grad);

// FNV fingerprint of the raw parameter bytes; used to assert non-mutation.
std::uint64_t params_checksum(const DenoiserParameters& params);

} // namespace gpa
