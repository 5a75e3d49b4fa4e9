#include "gpa/diffusion.hpp"

#include <cmath>
#include <stdexcept>

#include "gpa/common.hpp"

namespace gpa {

Eigen::VectorXd forward_noise(const Eigen::VectorXd& x0, int t, const Eigen::VectorXd& eps,
                              const NoiseSchedule& sched) {
    if (eps.size() != x0.size()) throw std::invalid_argument("eps dimension mismatch");
    const double ab = sched.alpha_bar_at(t);
    return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

double denoising_loss(const DenoiserParameters& params, const Eigen::VectorXd& x0, int t,
                      const Eigen::VectorXd& eps, const Eigen::VectorXd& cond,
                      const NoiseSchedule& sched) {
    const Eigen::VectorXd x_t = forward_noise(x0, t, eps, sched);
    const Eigen::VectorXd eps_hat = denoiser_forward(params, x_t, t, cond);
    return sched.lambda_at(t) * (eps_hat - eps).squaredNorm() /
           static_cast<double>(eps.size());
}

std::vector<int> ddim_timesteps(int T, int steps) {
    if (steps < 1 || steps > T) throw std::invalid_argument("invalid step count");
    std::vector<int> ts;
    ts.reserve(static_cast<std::size_t>(steps));
    if (steps == 1) {
        ts.push_back(T);
        return ts;
    }
    for (int k = 0; k < steps; ++k) {
        const double pos = static_cast<double>(T) -
                           static_cast<double>(k) * static_cast<double>(T - 1) /
                               static_cast<double>(steps - 1);
        const int t = static_cast<int>(std::lround(pos));
        if (ts.empty() || t < ts.back()) ts.push_back(t);
    }
    return ts;
}

namespace {

// One deterministic update from grid timestep t to t_next (0 = done).
void ddim_step(Eigen::MatrixXd& x, const Eigen::MatrixXd& eps_hat, int t, int t_next,
               const NoiseSchedule& sched) {
    const double ab = sched.alpha_bar_at(t);
    const double root_ab = std::sqrt(ab);
    if (root_ab < 1e-6) throw std::runtime_error("alpha_bar underflow in sampler");
    const Eigen::MatrixXd x0_hat = (x - std::sqrt(1.0 - ab) * eps_hat) / root_ab;
    if (t_next < 1) {
        x = x0_hat;
        return;
    }
    const double ab_next = sched.alpha_bar_at(t_next);
    x = std::sqrt(ab_next) * x0_hat + std::sqrt(1.0 - ab_next) * eps_hat;
}

} // namespace

Eigen::VectorXd ddim_sample_fn(const DenoiseFn& denoise, const Eigen::VectorXd& initial_noise,
                               const NoiseSchedule& sched, int steps) {
    const std::vector<int> ts = ddim_timesteps(sched.T, steps);
    Eigen::MatrixXd x = initial_noise;
    for (std::size_t k = 0; k < ts.size(); ++k) {
        const int t = ts[k];
        const int t_next = k + 1 < ts.size() ? ts[k + 1] : 0;
        const Eigen::MatrixXd eps_hat = denoise(x.col(0), t);
        ddim_step(x, eps_hat, t, t_next, sched);
    }
    return x.col(0);
}

Eigen::VectorXd ddim_sample(const DenoiserParameters& params, const Eigen::VectorXd& cond,
                            const Eigen::VectorXd& initial_noise, const NoiseSchedule& sched,
                            int steps) {
    return ddim_sample_group(params, cond, initial_noise, sched, steps).col(0);
}

Eigen::MatrixXd ddim_sample_group(const DenoiserParameters& params, const Eigen::VectorXd& cond,
                                  const Eigen::MatrixXd& initial_noise,
                                  const NoiseSchedule& sched, int steps) {
    if (initial_noise.rows() != params.config.pose_dim)
        throw std::invalid_argument("initial noise dimension mismatch");
    const Eigen::Index batch = initial_noise.cols();
    const Eigen::MatrixXd cond_cols = cond.replicate(1, batch);
    const std::vector<int> ts = ddim_timesteps(sched.T, steps);

    Eigen::MatrixXd x = initial_noise;
    std::vector<int> t_batch(static_cast<std::size_t>(batch));
    for (std::size_t k = 0; k < ts.size(); ++k) {
        const int t = ts[k];
        const int t_next = k + 1 < ts.size() ? ts[k + 1] : 0;
        std::fill(t_batch.begin(), t_batch.end(), t);
        const Eigen::MatrixXd input = denoiser_input(params.config, x, t_batch, cond_cols);
        const Eigen::MatrixXd eps_hat = denoiser_forward_batch(params, input);
        ddim_step(x, eps_hat, t, t_next, sched);
    }
    return x;
}

Eigen::VectorXd ancestral_sample_fn(const DenoiseFn& denoise, int dim, Rng& rng,
                                    const NoiseSchedule& sched) {
    Eigen::VectorXd x(dim);
    for (int i = 0; i < dim; ++i) x(i) = rng.normal();
    for (int t = sched.T; t >= 1; --t) {
        const Eigen::VectorXd eps_hat = denoise(x, t);
        const double ab = sched.alpha_bar_at(t);
        const double root_ab = std::sqrt(ab);
        if (root_ab < 1e-6) throw std::runtime_error("alpha_bar underflow in sampler");
        const Eigen::VectorXd x0_hat = (x - std::sqrt(1.0 - ab) * eps_hat) / root_ab;
        const double ab_prev = sched.alpha_bar_prev(t);
        const double sig = sched.sigma_at(t);
        const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sig * sig));
        x = std::sqrt(ab_prev) * x0_hat + dir * eps_hat;
        if (sig > 0.0) {
            for (int i = 0; i < dim; ++i) x(i) += sig * rng.normal();
        }
    }
    return x;
}

Eigen::VectorXd ancestral_sample(const DenoiserParameters& params, const Eigen::VectorXd& cond,
                                 std::uint64_t seed, const NoiseSchedule& sched) {
    Rng rng(seed);
    const DenoiseFn fn = [&](const Eigen::VectorXd& x, int t) {
        return denoiser_forward(params, x, t, cond);
    };
    return ancestral_sample_fn(fn, params.config.pose_dim, rng, sched);
}

DenoiserParameters train_reference(
    const std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>>& dataset,
    const NoiseSchedule& sched, const DenoiserConfig& config, const ReferenceTrainConfig& train,
    std::vector<TrainLogEntry>* log) {
    if (dataset.empty()) throw std::invalid_argument("empty dataset");

    DenoiserParameters params = DenoiserParameters::init(config, train.seed);
    if (train.steps <= 0) return params;

    OptimizerState opt = OptimizerState::zeros_like(params);
    const AdamConfig adam{.lr = train.lr};
    Rng rng(derive_seed(train.seed, fnv1a64("reference-train")));

    const int dim = config.pose_dim;
    const int batch = std::max(1, train.batch);
    const int epoch_steps =
        std::max(1, static_cast<int>(dataset.size()) / batch);
    const int log_every = train.log_every > 0 ? train.log_every : epoch_steps;

    Eigen::MatrixXd x_t(dim, batch), eps(dim, batch), cond(config.cond_dim, batch);
    std::vector<int> t_batch(static_cast<std::size_t>(batch));

    for (int step = 1; step <= train.steps; ++step) {
        for (int b = 0; b < batch; ++b) {
            const auto& sample = dataset[static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<std::int64_t>(dataset.size()) - 1))];
            const int t = static_cast<int>(rng.uniform_int(1, sched.T));
            t_batch[static_cast<std::size_t>(b)] = t;
            for (int i = 0; i < dim; ++i) eps(i, b) = rng.normal();
            x_t.col(b) = forward_noise(sample.first, t, eps.col(b), sched);
            cond.col(b) = sample.second;
        }
        ForwardTrace trace;
        const Eigen::MatrixXd input = denoiser_input(config, x_t, t_batch, cond);
        const Eigen::MatrixXd eps_hat = denoiser_forward_batch(params, input, &trace);

        double loss = 0.0;
        Eigen::MatrixXd dout(dim, batch);
        for (int b = 0; b < batch; ++b) {
            const double lam = sched.lambda_at(t_batch[static_cast<std::size_t>(b)]);
            const Eigen::VectorXd diff = eps_hat.col(b) - eps.col(b);
            loss += lam * diff.squaredNorm() / dim;
            dout.col(b) = lam * 2.0 * diff / (static_cast<double>(dim) * batch);
        }
        loss /= batch;
        if (!std::isfinite(loss)) throw std::runtime_error("diverged");

        const DenoiserGradients grads = denoiser_backward_batch(params, trace, dout);
        optimizer_step(params, grads, opt, adam);

        if (log && (step % log_every == 0 || step == train.steps))
            log->push_back({step, loss});
    }
    return params;
}

} // namespace gpa
