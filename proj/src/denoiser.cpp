#include "gpa/denoiser.hpp"

#include <cmath>
#include <stdexcept>

#include "gpa/common.hpp"
#include "gpa/rng.hpp"

namespace gpa {

std::string activation_name(Activation a) {
    return a == Activation::Tanh ? "tanh" : "identity";
}

Activation activation_from_name(const std::string& name) {
    if (name == "tanh") return Activation::Tanh;
    if (name == "identity") return Activation::Identity;
    throw std::invalid_argument("unknown activation: " + name);
}

std::vector<int> DenoiserConfig::widths() const {
    std::vector<int> w;
    w.push_back(input_dim());
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(pose_dim);
    return w;
}

std::size_t DenoiserParameters::parameter_count() const {
    std::size_t n = 0;
    for (const auto& w : weights) n += static_cast<std::size_t>(w.size());
    for (const auto& b : biases) n += static_cast<std::size_t>(b.size());
    return n;
}

bool DenoiserParameters::all_finite() const {
    for (const auto& w : weights)
        if (!w.allFinite()) return false;
    for (const auto& b : biases)
        if (!b.allFinite()) return false;
    return true;
}

std::vector<DenseTensor> DenoiserParameters::to_tensors() const {
    std::vector<DenseTensor> out;
    out.reserve(weights.size() * 2);
    for (std::size_t l = 0; l < weights.size(); ++l) {
        DenseTensor w;
        w.shape = {static_cast<std::size_t>(weights[l].rows()),
                   static_cast<std::size_t>(weights[l].cols())};
        w.data.assign(weights[l].data(), weights[l].data() + weights[l].size());
        out.push_back(std::move(w));
        DenseTensor b;
        b.shape = {static_cast<std::size_t>(biases[l].size())};
        b.data.assign(biases[l].data(), biases[l].data() + biases[l].size());
        out.push_back(std::move(b));
    }
    return out;
}

void DenoiserParameters::from_tensors(const std::vector<DenseTensor>& tensors) {
    if (tensors.size() != weights.size() * 2)
        throw std::invalid_argument("tensor count mismatch");
    for (std::size_t l = 0; l < weights.size(); ++l) {
        const DenseTensor& w = tensors[2 * l];
        const DenseTensor& b = tensors[2 * l + 1];
        w.validate();
        b.validate();
        if (w.shape.size() != 2 ||
            w.shape[0] != static_cast<std::size_t>(weights[l].rows()) ||
            w.shape[1] != static_cast<std::size_t>(weights[l].cols()))
            throw std::invalid_argument("weight tensor shape mismatch");
        if (b.shape.size() != 1 || b.shape[0] != static_cast<std::size_t>(biases[l].size()))
            throw std::invalid_argument("bias tensor shape mismatch");
        std::copy(w.data.begin(), w.data.end(), weights[l].data());
        std::copy(b.data.begin(), b.data.end(), biases[l].data());
    }
}

DenoiserParameters DenoiserParameters::zeros(const DenoiserConfig& config) {
    if (config.pose_dim <= 0 || config.cond_dim < 0 || config.temb_dim < 0)
        throw std::invalid_argument("invalid denoiser dimensions");
    DenoiserParameters p;
    p.config = config;
    const std::vector<int> w = config.widths();
    for (std::size_t l = 0; l + 1 < w.size(); ++l) {
        p.weights.emplace_back(Eigen::MatrixXd::Zero(w[l + 1], w[l]));
        p.biases.emplace_back(Eigen::VectorXd::Zero(w[l + 1]));
    }
    return p;
}

DenoiserParameters DenoiserParameters::init(const DenoiserConfig& config, std::uint64_t seed) {
    DenoiserParameters p = zeros(config);
    Rng rng(derive_seed(seed, fnv1a64("denoiser-init")));
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(p.weights[l].cols()));
        for (Eigen::Index j = 0; j < p.weights[l].cols(); ++j)
            for (Eigen::Index i = 0; i < p.weights[l].rows(); ++i)
                p.weights[l](i, j) = rng.uniform(-bound, bound);
        // Biases start at zero.
    }
    return p;
}

DenoiserGradients DenoiserGradients::zeros_like(const DenoiserParameters& p) {
    DenoiserGradients g;
    for (const auto& w : p.weights) g.weights.emplace_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
    for (const auto& b : p.biases) g.biases.emplace_back(Eigen::VectorXd::Zero(b.size()));
    return g;
}

void DenoiserGradients::accumulate(const DenoiserGradients& other, double factor) {
    if (other.weights.size() != weights.size())
        throw std::invalid_argument("gradient layer count mismatch");
    for (std::size_t l = 0; l < weights.size(); ++l) {
        weights[l] += factor * other.weights[l];
        biases[l] += factor * other.biases[l];
    }
}

void DenoiserGradients::scale(double factor) {
    for (auto& w : weights) w *= factor;
    for (auto& b : biases) b *= factor;
}

bool DenoiserGradients::all_finite() const {
    for (const auto& w : weights)
        if (!w.allFinite()) return false;
    for (const auto& b : biases)
        if (!b.allFinite()) return false;
    return true;
}

double DenoiserGradients::squared_norm() const {
    double s = 0.0;
    for (const auto& w : weights) s += w.squaredNorm();
    for (const auto& b : biases) s += b.squaredNorm();
    return s;
}

Eigen::VectorXd timestep_embedding(int t, int dim) {
    if (dim <= 0 || dim % 2 != 0) throw std::invalid_argument("embedding dim must be even");
    const int half = dim / 2;
    Eigen::VectorXd e(dim);
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                                     static_cast<double>(half));
        e(2 * i) = std::sin(t * freq);
        e(2 * i + 1) = std::cos(t * freq);
    }
    return e;
}

Eigen::MatrixXd denoiser_input(const DenoiserConfig& config, const Eigen::MatrixXd& x_t,
                               const std::vector<int>& timesteps, const Eigen::MatrixXd& cond) {
    const Eigen::Index batch = x_t.cols();
    if (x_t.rows() != config.pose_dim) throw std::invalid_argument("x_t dimension mismatch");
    if (cond.rows() != config.cond_dim || cond.cols() != batch)
        throw std::invalid_argument("condition dimension mismatch");
    if (static_cast<Eigen::Index>(timesteps.size()) != batch)
        throw std::invalid_argument("timestep count mismatch");

    Eigen::MatrixXd input(config.input_dim(), batch);
    for (Eigen::Index b = 0; b < batch; ++b) {
        input.block(0, b, config.pose_dim, 1) = x_t.col(b);
        input.block(config.pose_dim, b, config.temb_dim, 1) =
            timestep_embedding(timesteps[static_cast<std::size_t>(b)], config.temb_dim);
        input.block(config.pose_dim + config.temb_dim, b, config.cond_dim, 1) = cond.col(b);
    }
    return input;
}

Eigen::MatrixXd denoiser_forward_batch(const DenoiserParameters& params,
                                       const Eigen::MatrixXd& input, ForwardTrace* trace) {
    if (input.rows() != params.config.input_dim())
        throw std::invalid_argument("input dimension mismatch");
    const std::size_t layers = params.layer_count();
    if (trace) {
        trace->layer_values.clear();
        trace->layer_values.reserve(layers + 1);
        trace->layer_values.push_back(input);
    }
    Eigen::MatrixXd h = input;
    for (std::size_t l = 0; l < layers; ++l) {
        Eigen::MatrixXd z = (params.weights[l] * h).colwise() + params.biases[l];
        const bool is_output = (l + 1 == layers);
        if (!is_output && params.config.activation == Activation::Tanh)
            z = z.array().tanh().matrix();
        h = std::move(z);
        if (trace) trace->layer_values.push_back(h);
    }
    return h;
}

Eigen::VectorXd denoiser_forward(const DenoiserParameters& params, const Eigen::VectorXd& x_t,
                                 int t, const Eigen::VectorXd& cond) {
    const Eigen::MatrixXd input =
        denoiser_input(params.config, x_t, std::vector<int>{t}, cond);
    return denoiser_forward_batch(params, input).col(0);
}

DenoiserGradients denoiser_backward_batch(const DenoiserParameters& params,
                                          const ForwardTrace& trace,
                                          const Eigen::MatrixXd& output_grad) {
    const std::size_t layers = params.layer_count();
    if (trace.layer_values.size() != layers + 1)
        throw std::invalid_argument("trace does not match parameters");
    if (output_grad.rows() != trace.layer_values.back().rows() ||
        output_grad.cols() != trace.layer_values.back().cols())
        throw std::invalid_argument("output gradient shape mismatch");

    DenoiserGradients grads = DenoiserGradients::zeros_like(params);
    Eigen::MatrixXd dz = output_grad; // output layer is linear
    for (std::size_t l = layers; l-- > 0;) {
        grads.weights[l] = dz * trace.layer_values[l].transpose();
        grads.biases[l] = dz.rowwise().sum();
        if (l > 0) {
            Eigen::MatrixXd dh = params.weights[l].transpose() * dz;
            if (params.config.activation == Activation::Tanh) {
                const Eigen::MatrixXd& h = trace.layer_values[l]; // post-activation
                dz = (dh.array() * (1.0 - h.array().square())).matrix();
            } else {
                dz = std::move(dh);
            }
        }
    }
    return grads;
}

DenoiserGradients denoiser_backward(const DenoiserParameters& params, const Eigen::VectorXd& x_t,
                                    int t, const Eigen::VectorXd& cond,
                                    const Eigen::VectorXd& output_grad) {
    ForwardTrace trace;
    const Eigen::MatrixXd input =
        denoiser_input(params.config, x_t, std::vector<int>{t}, cond);
    denoiser_forward_batch(params, input, &trace);
    return denoiser_backward_batch(params, trace, output_grad);
}

std::uint64_t params_checksum(const DenoiserParameters& params) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& w : params.weights)
        h = fnv1a64(w.data(), static_cast<std::size_t>(w.size()) * sizeof(double), h);
    for (const auto& b : params.biases)
        h = fnv1a64(b.data(), static_cast<std::size_t>(b.size()) * sizeof(double), h);
    return h;
}

} // namespace gpa
