#include "gpa/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace gpa {

OptimizerState OptimizerState::zeros_like(const DenoiserParameters& p) {
    OptimizerState s;
    for (const auto& w : p.weights) {
        s.m_weights.emplace_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
        s.v_weights.emplace_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
    }
    for (const auto& b : p.biases) {
        s.m_biases.emplace_back(Eigen::VectorXd::Zero(b.size()));
        s.v_biases.emplace_back(Eigen::VectorXd::Zero(b.size()));
    }
    return s;
}

void optimizer_step(DenoiserParameters& params, const DenoiserGradients& grads,
                    OptimizerState& state, const AdamConfig& config) {
    if (grads.weights.size() != params.weights.size() ||
        state.m_weights.size() != params.weights.size())
        throw std::invalid_argument("optimizer shape mismatch");
    if (!grads.all_finite()) throw std::runtime_error("diverged");

    state.step += 1;
    const double b1 = config.beta1;
    const double b2 = config.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));

    for (std::size_t l = 0; l < params.weights.size(); ++l) {
        auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v.array().matrix() + (1.0 - b2) * g.array().square().matrix();
            const auto m_hat = m.array() / c1;
            const auto v_hat = v.array() / c2;
            p.array() -= config.lr * m_hat / (v_hat.sqrt() + config.eps);
        };
        update(params.weights[l], grads.weights[l], state.m_weights[l], state.v_weights[l]);
        update(params.biases[l], grads.biases[l], state.m_biases[l], state.v_biases[l]);
    }
}

} // namespace gpa
