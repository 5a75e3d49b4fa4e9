#include <doctest.h>

#include <cmath>

#include "gpa/diffusion.hpp"
#include "gpa/rng.hpp"

using namespace gpa;

namespace {

Eigen::VectorXd random_vec(Rng& rng, int n) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = rng.normal();
    return v;
}

} // namespace

TEST_CASE("make_linear_schedule: hand cumulative product at T=2") {
    const NoiseSchedule s = make_linear_schedule(2, 0.1, 0.2);
    CHECK(s.alpha_bar_at(1) == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(s.alpha_bar_at(2) == doctest::Approx(0.72).epsilon(1e-12));
    CHECK(s.sigma_at(1) == 0.0);
    CHECK(s.lambda_at(1) == 1.0);
}

TEST_CASE("make_linear_schedule: alpha_bar strictly decreasing; default tail") {
    const NoiseSchedule s = make_linear_schedule(1000, 1e-4, 0.02);
    for (int t = 2; t <= s.T; ++t) CHECK(s.alpha_bar_at(t) < s.alpha_bar_at(t - 1));
    CHECK(s.alpha_bar_at(s.T) < 0.01);
}

TEST_CASE("make_linear_schedule: rejects invalid ranges") {
    CHECK_THROWS_AS(make_linear_schedule(1, 0.1, 0.2), std::invalid_argument);
    CHECK_THROWS_AS(make_linear_schedule(10, 0.0, 0.2), std::invalid_argument);
    CHECK_THROWS_AS(make_linear_schedule(10, 0.3, 0.2), std::invalid_argument);
    CHECK_THROWS_AS(make_linear_schedule(10, 0.3, 1.0), std::invalid_argument);
}

TEST_CASE("forward_noise: endpoint identities") {
    const NoiseSchedule s = make_linear_schedule(10, 0.05, 0.3);
    Rng rng(1);
    const Eigen::VectorXd x0 = random_vec(rng, 6);
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(6);

    const Eigen::VectorXd a = forward_noise(x0, 4, zero, s);
    CHECK((a - std::sqrt(s.alpha_bar_at(4)) * x0).cwiseAbs().maxCoeff() < 1e-15);

    const Eigen::VectorXd eps = random_vec(rng, 6);
    const Eigen::VectorXd b = forward_noise(zero, 7, eps, s);
    CHECK((b - std::sqrt(1.0 - s.alpha_bar_at(7)) * eps).cwiseAbs().maxCoeff() < 1e-15);

    CHECK_THROWS_AS(forward_noise(x0, 3, random_vec(rng, 5), s), std::invalid_argument);
}

TEST_CASE("forward_noise: Monte-Carlo moments at n=1e5") {
    const NoiseSchedule s = make_linear_schedule(50, 0.02, 0.35);
    Rng rng(2);
    const int dim = 4;
    const Eigen::VectorXd x0 = random_vec(rng, dim);
    const int t = 20;
    const int n = 100000;

    Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim), sumsq = Eigen::VectorXd::Zero(dim);
    for (int i = 0; i < n; ++i) {
        const Eigen::VectorXd x_t = forward_noise(x0, t, random_vec(rng, dim), s);
        sum += x_t;
        sumsq += x_t.cwiseAbs2();
    }
    const Eigen::VectorXd mean = sum / n;
    const Eigen::VectorXd var = sumsq / n - mean.cwiseAbs2();

    const double expected_var = 1.0 - s.alpha_bar_at(t);
    const Eigen::VectorXd expected_mean = std::sqrt(s.alpha_bar_at(t)) * x0;
    const double se_mean = std::sqrt(expected_var / n);
    const double se_var = expected_var * std::sqrt(2.0 / n);
    for (int i = 0; i < dim; ++i) {
        CHECK(std::abs(mean(i) - expected_mean(i)) < 3.0 * se_mean);
        CHECK(std::abs(var(i) - expected_var) < 3.0 * se_var);
    }
}

TEST_CASE("denoising_loss: oracle-denoiser zero, zero-net closed form, non-negative") {
    const NoiseSchedule s = make_linear_schedule(10, 0.05, 0.3);
    DenoiserConfig cfg;
    cfg.pose_dim = 5;
    cfg.cond_dim = 2;
    cfg.temb_dim = 4;
    cfg.hidden = {6};
    Rng rng(3);
    const Eigen::VectorXd x0 = random_vec(rng, 5), c = random_vec(rng, 2);
    const Eigen::VectorXd eps = random_vec(rng, 5);

    // All-zero net predicts 0: loss = lambda * mean(eps^2).
    const DenoiserParameters zeros = DenoiserParameters::zeros(cfg);
    const double loss0 = denoising_loss(zeros, x0, 4, eps, c, s);
    CHECK(loss0 == doctest::Approx(eps.squaredNorm() / 5.0).epsilon(1e-12));

    const DenoiserParameters params = DenoiserParameters::init(cfg, 5);
    for (int t = 1; t <= s.T; ++t) CHECK(denoising_loss(params, x0, t, eps, c, s) >= 0.0);
}

TEST_CASE("ddim_timesteps: full grid and endpoints") {
    const auto full = ddim_timesteps(10, 10);
    REQUIRE(full.size() == 10);
    CHECK(full.front() == 10);
    CHECK(full.back() == 1);
    for (std::size_t i = 1; i < full.size(); ++i) CHECK(full[i] == full[i - 1] - 1);

    const auto strided = ddim_timesteps(50, 10);
    CHECK(strided.front() == 50);
    CHECK(strided.back() == 1);
    for (std::size_t i = 1; i < strided.size(); ++i) CHECK(strided[i] < strided[i - 1]);

    CHECK(ddim_timesteps(50, 1) == std::vector<int>{50});
    CHECK_THROWS_AS(ddim_timesteps(10, 11), std::invalid_argument);
}

TEST_CASE("ddim_sample: deterministic across repeated runs") {
    const NoiseSchedule s = make_linear_schedule(20, 0.02, 0.3);
    DenoiserConfig cfg;
    cfg.pose_dim = 6;
    cfg.cond_dim = 3;
    cfg.temb_dim = 4;
    const DenoiserParameters params = DenoiserParameters::init(cfg, 6);
    Rng rng(7);
    const Eigen::VectorXd c = random_vec(rng, 3), z = random_vec(rng, 6);

    const Eigen::VectorXd a = ddim_sample(params, c, z, s, 10);
    const Eigen::VectorXd b = ddim_sample(params, c, z, s, 10);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("ddim_sample: exact-eps oracle recovers x0 in one step") {
    const NoiseSchedule s = make_linear_schedule(30, 0.02, 0.3);
    Rng rng(8);
    const Eigen::VectorXd x0 = random_vec(rng, 4);
    const Eigen::VectorXd eps = random_vec(rng, 4);
    const Eigen::VectorXd x_T = forward_noise(x0, s.T, eps, s);

    const DenoiseFn oracle = [&](const Eigen::VectorXd&, int) { return eps; };
    const Eigen::VectorXd out = ddim_sample_fn(oracle, x_T, s, 1);
    CHECK((out - x0).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("ddim_sample: exact-eps inversion recovers x0 at every t") {
    const NoiseSchedule s = make_linear_schedule(50, 0.02, 0.35);
    Rng rng(9);
    const Eigen::VectorXd x0 = random_vec(rng, 5);
    for (int t = 1; t <= s.T; ++t) {
        const Eigen::VectorXd eps = random_vec(rng, 5);
        const Eigen::VectorXd x_t = forward_noise(x0, t, eps, s);
        const double ab = s.alpha_bar_at(t);
        const Eigen::VectorXd rec = (x_t - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
        CHECK((rec - x0).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("ddim_sample: two hand-evaluated steps on a T=2 schedule") {
    const NoiseSchedule s = make_linear_schedule(2, 0.1, 0.2);
    // Denoiser predicts a fixed linear map of x: eps_hat = 0.5 x.
    const DenoiseFn lin = [](const Eigen::VectorXd& x, int) { return (0.5 * x).eval(); };
    Eigen::VectorXd z(2);
    z << 1.0, -2.0;

    // By hand: t=2 -> t=1 -> done.
    const double ab2 = 0.72, ab1 = 0.9;
    Eigen::VectorXd e2 = 0.5 * z;
    Eigen::VectorXd x0h = (z - std::sqrt(1.0 - ab2) * e2) / std::sqrt(ab2);
    Eigen::VectorXd x1 = std::sqrt(ab1) * x0h + std::sqrt(1.0 - ab1) * e2;
    Eigen::VectorXd e1 = 0.5 * x1;
    Eigen::VectorXd expect = (x1 - std::sqrt(1.0 - ab1) * e1) / std::sqrt(ab1);

    const Eigen::VectorXd got = ddim_sample_fn(lin, z, s, 2);
    CHECK((got - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("ancestral_sample: seeded reproducibility, seeds differ") {
    const NoiseSchedule s = make_linear_schedule(20, 0.02, 0.3);
    DenoiserConfig cfg;
    cfg.pose_dim = 5;
    cfg.cond_dim = 2;
    cfg.temb_dim = 4;
    const DenoiserParameters params = DenoiserParameters::init(cfg, 10);
    Rng rng(11);
    const Eigen::VectorXd c = random_vec(rng, 2);

    const Eigen::VectorXd a = ancestral_sample(params, c, 42, s);
    const Eigen::VectorXd b = ancestral_sample(params, c, 42, s);
    CHECK(a == b);

    int distinct = 0;
    Eigen::VectorXd prev = a;
    for (std::uint64_t seed = 100; seed < 200; ++seed) {
        const Eigen::VectorXd cur = ancestral_sample(params, c, seed, s);
        if ((cur - prev).cwiseAbs().maxCoeff() > 1e-12) ++distinct;
        prev = cur;
    }
    CHECK(distinct == 100);
}

TEST_CASE("ancestral_sample: sigma = 0 equals full-step deterministic sampling") {
    NoiseSchedule s = make_linear_schedule(25, 0.02, 0.3);
    std::fill(s.sigma.begin(), s.sigma.end(), 0.0);
    DenoiserConfig cfg;
    cfg.pose_dim = 4;
    cfg.cond_dim = 2;
    cfg.temb_dim = 4;
    const DenoiserParameters params = DenoiserParameters::init(cfg, 12);
    Rng rng(13);
    const Eigen::VectorXd c = random_vec(rng, 2);

    const std::uint64_t seed = 77;
    const Eigen::VectorXd anc = ancestral_sample(params, c, seed, s);

    Rng noise_rng(seed);
    Eigen::VectorXd z(4);
    for (int i = 0; i < 4; ++i) z(i) = noise_rng.normal();
    const Eigen::VectorXd det = ddim_sample(params, c, z, s, s.T);
    CHECK((anc - det).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("sampling never mutates parameters") {
    const NoiseSchedule s = make_linear_schedule(15, 0.02, 0.3);
    DenoiserConfig cfg;
    cfg.pose_dim = 4;
    cfg.cond_dim = 2;
    cfg.temb_dim = 4;
    const DenoiserParameters params = DenoiserParameters::init(cfg, 14);
    const std::uint64_t before = params_checksum(params);
    Rng rng(15);
    const Eigen::VectorXd c = random_vec(rng, 2);
    (void)ddim_sample(params, c, random_vec(rng, 4), s, 15);
    (void)ancestral_sample(params, c, 5, s);
    CHECK(params_checksum(params) == before);
}

TEST_CASE("denoising loss gradient matches finite differences") {
    const NoiseSchedule s = make_linear_schedule(10, 0.05, 0.3);
    Rng rng(16);
    for (int trial = 0; trial < 20; ++trial) {
        DenoiserConfig cfg;
        cfg.pose_dim = static_cast<int>(rng.uniform_int(2, 4));
        cfg.cond_dim = 2;
        cfg.temb_dim = 4;
        cfg.hidden = {static_cast<int>(rng.uniform_int(3, 6))};
        DenoiserParameters params = DenoiserParameters::init(cfg, 300 + trial);
        const Eigen::VectorXd x0 = random_vec(rng, cfg.pose_dim);
        const Eigen::VectorXd c = random_vec(rng, cfg.cond_dim);
        const Eigen::VectorXd eps = random_vec(rng, cfg.pose_dim);
        const int t = static_cast<int>(rng.uniform_int(1, s.T));

        const Eigen::VectorXd x_t = forward_noise(x0, t, eps, s);
        const Eigen::VectorXd eps_hat = denoiser_forward(params, x_t, t, c);
        const Eigen::VectorXd dout =
            s.lambda_at(t) * 2.0 * (eps_hat - eps) / cfg.pose_dim;
        const DenoiserGradients analytic = denoiser_backward(params, x_t, t, c, dout);

        const double h = 1e-5;
        double worst = 0.0;
        for (std::size_t l = 0; l < params.weights.size(); ++l) {
            for (Eigen::Index i = 0; i < params.weights[l].size(); ++i) {
                double& w = params.weights[l].data()[i];
                const double saved = w;
                w = saved + h;
                const double up = denoising_loss(params, x0, t, eps, c, s);
                w = saved - h;
                const double down = denoising_loss(params, x0, t, eps, c, s);
                w = saved;
                const double fd = (up - down) / (2.0 * h);
                const double g = analytic.weights[l].data()[i];
                const double denom = std::max({std::abs(fd), std::abs(g), 1e-6});
                worst = std::max(worst, std::abs(fd - g) / denom);
            }
        }
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("train_reference: zero steps returns the initialization") {
    const NoiseSchedule s = make_linear_schedule(10, 0.05, 0.3);
    DenoiserConfig cfg;
    cfg.pose_dim = 4;
    cfg.cond_dim = 2;
    cfg.temb_dim = 4;
    cfg.hidden = {8};
    Rng rng(17);
    std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>> data;
    for (int i = 0; i < 10; ++i) data.emplace_back(random_vec(rng, 4), random_vec(rng, 2));

    ReferenceTrainConfig train;
    train.steps = 0;
    train.seed = 21;
    const DenoiserParameters got = train_reference(data, s, cfg, train);
    CHECK(params_checksum(got) == params_checksum(DenoiserParameters::init(cfg, 21)));

    CHECK_THROWS_AS(train_reference({}, s, cfg, train), std::invalid_argument);
}

TEST_CASE("train_reference: probe loss decreases on the toy task") {
    const NoiseSchedule s = make_linear_schedule(10, 0.05, 0.3);
    DenoiserConfig cfg;
    cfg.pose_dim = 4;
    cfg.cond_dim = 2;
    cfg.temb_dim = 4;
    cfg.hidden = {16, 16};
    Rng rng(18);
    std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>> data;
    for (int i = 0; i < 64; ++i) {
        const Eigen::VectorXd c = random_vec(rng, 2);
        Eigen::VectorXd x0(4);
        x0 << c(0), c(1), c(0) - c(1), 0.5;
        data.emplace_back(x0, c);
    }

    auto probe = [&](const DenoiserParameters& p) {
        Rng prng(99);
        double total = 0.0;
        for (int i = 0; i < 128; ++i) {
            const auto& sample = data[static_cast<std::size_t>(prng.uniform_int(0, 63))];
            const int t = static_cast<int>(prng.uniform_int(1, s.T));
            total += denoising_loss(p, sample.first, t, random_vec(prng, 4), sample.second, s);
        }
        return total / 128.0;
    };

    ReferenceTrainConfig train;
    train.steps = 400;
    train.batch = 16;
    train.lr = 3e-3;
    train.seed = 5;
    std::vector<TrainLogEntry> log;
    const DenoiserParameters trained = train_reference(data, s, cfg, train, &log);
    const DenoiserParameters initial = DenoiserParameters::init(cfg, 5);
    CHECK(probe(trained) < probe(initial));
    CHECK(!log.empty());
}
