#include "gpa/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "gpa/common.hpp"
#include "gpa/stats.hpp"

namespace gpa {

std::vector<HypDraw> make_draws(Rng& rng, const NoiseSchedule& sched, int dim, int count,
                                bool shared) {
    std::vector<HypDraw> draws(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        if (shared && i > 0) {
            draws[static_cast<std::size_t>(i)] = draws[0];
            continue;
        }
        HypDraw& d = draws[static_cast<std::size_t>(i)];
        d.t = static_cast<int>(rng.uniform_int(1, sched.T));
        d.eps.resize(dim);
        for (int k = 0; k < dim; ++k) d.eps(k) = rng.normal();
    }
    return draws;
}

namespace {

struct GroupLosses {
    std::vector<double> theta;     // per-hypothesis L_theta (lambda included)
    std::vector<double> reference; // per-hypothesis L_ref
    ForwardTrace trace;            // theta forward trace
    Eigen::MatrixXd eps_hat_theta;
    Eigen::MatrixXd eps;
    std::vector<int> timesteps;
};

// Shared forward machinery: noise each hypothesis with its draw, run both
// networks batched, return per-hypothesis denoising losses.
GroupLosses group_losses(const DenoiserParameters& theta, const DenoiserParameters& ref,
                         const std::vector<Eigen::VectorXd>& hypotheses,
                         const Eigen::VectorXd& condition, const std::vector<HypDraw>& draws,
                         const NoiseSchedule& sched) {
    const int dim = theta.config.pose_dim;
    const int count = static_cast<int>(hypotheses.size());
    if (static_cast<int>(draws.size()) != count)
        throw std::invalid_argument("one draw per hypothesis required");

    GroupLosses out;
    out.timesteps.resize(static_cast<std::size_t>(count));
    out.eps.resize(dim, count);
    Eigen::MatrixXd x_t(dim, count);
    for (int i = 0; i < count; ++i) {
        const HypDraw& d = draws[static_cast<std::size_t>(i)];
        out.timesteps[static_cast<std::size_t>(i)] = d.t;
        out.eps.col(i) = d.eps;
        x_t.col(i) = forward_noise(hypotheses[static_cast<std::size_t>(i)], d.t, d.eps, sched);
    }
    const Eigen::MatrixXd cond_cols = condition.replicate(1, count);
    const Eigen::MatrixXd input = denoiser_input(theta.config, x_t, out.timesteps, cond_cols);
    out.eps_hat_theta = denoiser_forward_batch(theta, input, &out.trace);
    const Eigen::MatrixXd eps_hat_ref = denoiser_forward_batch(ref, input);

    out.theta.resize(static_cast<std::size_t>(count));
    out.reference.resize(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const double lam = sched.lambda_at(out.timesteps[static_cast<std::size_t>(i)]);
        out.theta[static_cast<std::size_t>(i)] =
            lam * (out.eps_hat_theta.col(i) - out.eps.col(i)).squaredNorm() / dim;
        out.reference[static_cast<std::size_t>(i)] =
            lam * (eps_hat_ref.col(i) - out.eps.col(i)).squaredNorm() / dim;
    }
    return out;
}

} // namespace

std::pair<double, DenoiserGradients> group_preference_loss(const DenoiserParameters& theta,
                                                           const DenoiserParameters& ref,
                                                           const GroupPreferenceEntry& entry,
                                                           const std::vector<HypDraw>& draws,
                                                           const NoiseSchedule& sched,
                                                           double beta) {
    const AdvantageVector adv = advantages(entry.scores);
    if (adv.degenerate)
        return {0.0, DenoiserGradients::zeros_like(theta)};

    GroupLosses losses = group_losses(theta, ref, entry.hypotheses, entry.condition, draws, sched);
    const int dim = theta.config.pose_dim;
    const int count = static_cast<int>(entry.hypotheses.size());
    const double scale = beta * static_cast<double>(sched.T);

    double loss = 0.0;
    Eigen::MatrixXd dout(dim, count);
    for (int i = 0; i < count; ++i) {
        const std::size_t si = static_cast<std::size_t>(i);
        const double lam = sched.lambda_at(losses.timesteps[si]);
        loss += scale * adv.values[si] * (losses.theta[si] - losses.reference[si]);
        // dLoss/d eps_hat_theta_i = scale * A_i * lambda * 2 (eps_hat - eps) / dim
        dout.col(i) = scale * adv.values[si] * lam * 2.0 *
                      (losses.eps_hat_theta.col(i) - losses.eps.col(i)) / dim;
    }
    if (!std::isfinite(loss)) throw std::runtime_error("diverged");
    DenoiserGradients grads = denoiser_backward_batch(theta, losses.trace, dout);
    if (!grads.all_finite()) throw std::runtime_error("diverged");
    return {loss, std::move(grads)};
}

std::pair<double, DenoiserGradients> dpo_pairwise_loss(const DenoiserParameters& theta,
                                                       const DenoiserParameters& ref,
                                                       const Eigen::VectorXd& winner,
                                                       const Eigen::VectorXd& loser,
                                                       const Eigen::VectorXd& condition,
                                                       const HypDraw& draw,
                                                       const NoiseSchedule& sched, double beta) {
    const std::vector<Eigen::VectorXd> pair{winner, loser};
    const std::vector<HypDraw> draws{draw, draw};
    GroupLosses losses = group_losses(theta, ref, pair, condition, draws, sched);

    const double lam = sched.lambda_at(draw.t);
    const double scale = beta * static_cast<double>(sched.T);
    const double margin =
        -scale * ((losses.theta[0] - losses.reference[0]) - (losses.theta[1] - losses.reference[1]));
    // -log sigmoid(margin), computed stably.
    const double loss = margin >= 0.0 ? std::log1p(std::exp(-margin))
                                      : -margin + std::log1p(std::exp(margin));
    if (!std::isfinite(loss)) throw std::runtime_error("diverged");

    const double sigmoid = 1.0 / (1.0 + std::exp(-margin));
    // dLoss/dL_theta_winner = (1 - sigmoid) * scale; loser gets the opposite.
    const double dwin = (1.0 - sigmoid) * scale;
    const int dim = theta.config.pose_dim;
    Eigen::MatrixXd dout(dim, 2);
    dout.col(0) = dwin * lam * 2.0 * (losses.eps_hat_theta.col(0) - losses.eps.col(0)) / dim;
    dout.col(1) = -dwin * lam * 2.0 * (losses.eps_hat_theta.col(1) - losses.eps.col(1)) / dim;
    DenoiserGradients grads = denoiser_backward_batch(theta, losses.trace, dout);
    if (!grads.all_finite()) throw std::runtime_error("diverged");
    return {loss, std::move(grads)};
}

namespace {

void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
        std::swap(idx[i - 1], idx[j]);
    }
}

using EntryStep = std::function<std::pair<double, DenoiserGradients>(
    const DenoiserParameters&, const GroupPreferenceEntry&, Rng&)>;

DenoiserParameters run_alignment_loop(const DenoiserParameters& ref,
                                      const PreferenceDataset& dataset,
                                      const AlignmentConfig& config, const EntryStep& entry_step,
                                      TrainingReport* report) {
    if (dataset.entries.empty()) throw std::invalid_argument("empty preference dataset");

    const std::uint64_t ref_checksum = params_checksum(ref);
    DenoiserParameters theta = ref;
    if (config.steps <= 0) return theta;

    OptimizerState opt = OptimizerState::zeros_like(theta);
    const AdamConfig adam{.lr = config.lr};
    Rng rng(derive_seed(config.seed, fnv1a64("alignment")));

    std::vector<std::size_t> order(dataset.entries.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t cursor = order.size(); // trigger shuffle on first use

    const int batch = std::max(1, config.batch_entries);
    for (int step = 1; step <= config.steps; ++step) {
        DenoiserGradients grads = DenoiserGradients::zeros_like(theta);
        double loss_sum = 0.0, gap_sum = 0.0;
        int used = 0;
        for (int b = 0; b < batch; ++b) {
            if (cursor >= order.size()) {
                shuffle_indices(order, rng);
                cursor = 0;
            }
            const GroupPreferenceEntry& entry = dataset.entries[order[cursor++]];
            if (config.skip_degenerate && entry.degenerate) continue;
            auto [loss, entry_grads] = entry_step(theta, entry, rng);
            loss_sum += loss;
            gap_sum += loss;
            grads.accumulate(entry_grads);
            used += 1;
        }
        if (used > 0) {
            grads.scale(1.0 / used);
            optimizer_step(theta, grads, opt, adam);
        }
        if (report) {
            report->steps.push_back(
                {step, used > 0 ? loss_sum / used : 0.0, used > 0 ? gap_sum / used : 0.0});
            if (config.eval_every > 0 && config.eval_hook &&
                (step % config.eval_every == 0 || step == config.steps))
                report->snapshots.push_back({step, config.eval_hook(theta)});
        }
    }

    if (params_checksum(ref) != ref_checksum)
        throw std::logic_error("reference parameters mutated during alignment");
    return theta;
}

} // namespace

DenoiserParameters align(const DenoiserParameters& ref, const PreferenceDataset& dataset,
                         const NoiseSchedule& sched, const AlignmentConfig& config,
                         TrainingReport* report) {
    const int dim = ref.config.pose_dim;
    const EntryStep step = [&, dim](const DenoiserParameters& theta,
                                    const GroupPreferenceEntry& entry, Rng& rng) {
        const std::vector<HypDraw> draws = make_draws(
            rng, sched, dim, static_cast<int>(entry.hypotheses.size()), config.shared_draws);
        return group_preference_loss(theta, ref, entry, draws, sched, config.beta);
    };
    return run_alignment_loop(ref, dataset, config, step, report);
}

DenoiserParameters align_dpo(const DenoiserParameters& ref, const PreferenceDataset& dataset,
                             const NoiseSchedule& sched, const AlignmentConfig& config,
                             TrainingReport* report) {
    const int dim = ref.config.pose_dim;
    const EntryStep step = [&, dim](const DenoiserParameters& theta,
                                    const GroupPreferenceEntry& entry, Rng& rng) {
        const auto best = std::max_element(entry.scores.begin(), entry.scores.end());
        const auto worst = std::min_element(entry.scores.begin(), entry.scores.end());
        const auto& winner =
            entry.hypotheses[static_cast<std::size_t>(best - entry.scores.begin())];
        const auto& loser =
            entry.hypotheses[static_cast<std::size_t>(worst - entry.scores.begin())];
        const std::vector<HypDraw> draws = make_draws(rng, sched, dim, 1, false);
        return dpo_pairwise_loss(theta, ref, winner, loser, entry.condition, draws[0], sched,
                                 config.dpo_beta);
    };
    return run_alignment_loop(ref, dataset, config, step, report);
}

DenoiserParameters supervised_finetune(
    const DenoiserParameters& ref,
    const std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>>& labeled,
    const NoiseSchedule& sched, const FinetuneConfig& config, TrainingReport* report) {
    if (labeled.empty()) throw std::invalid_argument("empty finetuning set");

    DenoiserParameters theta = ref;
    if (config.steps <= 0) return theta;

    OptimizerState opt = OptimizerState::zeros_like(theta);
    const AdamConfig adam{.lr = config.lr};
    Rng rng(derive_seed(config.seed, fnv1a64("supervised-finetune")));

    const int dim = theta.config.pose_dim;
    const int batch = std::max(1, config.batch);
    Eigen::MatrixXd x_t(dim, batch), eps(dim, batch), cond(theta.config.cond_dim, batch);
    std::vector<int> t_batch(static_cast<std::size_t>(batch));

    for (int step = 1; step <= config.steps; ++step) {
        for (int b = 0; b < batch; ++b) {
            const auto& sample = labeled[static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<std::int64_t>(labeled.size()) - 1))];
            Eigen::VectorXd x0 = sample.first;
            if (config.label_noise_std > 0.0) {
                for (int i = 0; i < dim; ++i) x0(i) += config.label_noise_std * rng.normal();
            }
            const int t = static_cast<int>(rng.uniform_int(1, sched.T));
            t_batch[static_cast<std::size_t>(b)] = t;
            for (int i = 0; i < dim; ++i) eps(i, b) = rng.normal();
            x_t.col(b) = forward_noise(x0, t, eps.col(b), sched);
            cond.col(b) = sample.second;
        }
        ForwardTrace trace;
        const Eigen::MatrixXd input = denoiser_input(theta.config, x_t, t_batch, cond);
        const Eigen::MatrixXd eps_hat = denoiser_forward_batch(theta, input, &trace);

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

        const DenoiserGradients grads = denoiser_backward_batch(theta, trace, dout);
        optimizer_step(theta, grads, opt, adam);
        if (report) report->steps.push_back({step, loss, 0.0});
    }
    return theta;
}

} // namespace gpa
