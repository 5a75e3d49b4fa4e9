#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "gpa/checkpoint.hpp"
#include "gpa/common.hpp"
#include "gpa/denoiser.hpp"
#include "gpa/optimizer.hpp"
#include "gpa/rng.hpp"

using namespace gpa;

namespace {

DenoiserConfig tiny_config(Rng& rng) {
    DenoiserConfig cfg;
    cfg.pose_dim = static_cast<int>(rng.uniform_int(2, 5));
    cfg.cond_dim = static_cast<int>(rng.uniform_int(1, 4));
    cfg.temb_dim = 4;
    const int depth = static_cast<int>(rng.uniform_int(0, 2));
    cfg.hidden.clear();
    for (int i = 0; i < depth; ++i) cfg.hidden.push_back(static_cast<int>(rng.uniform_int(3, 8)));
    return cfg;
}

Eigen::VectorXd random_vec(Rng& rng, int n) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = rng.normal();
    return v;
}

// Central finite differences of a scalar loss over every parameter.
double max_rel_grad_error(DenoiserParameters& params, const DenoiserGradients& analytic,
                          const std::function<double()>& loss, double h = 1e-5) {
    double worst = 0.0;
    auto probe = [&](double& w, double g) {
        const double saved = w;
        w = saved + h;
        const double up = loss();
        w = saved - h;
        const double down = loss();
        w = saved;
        const double fd = (up - down) / (2.0 * h);
        const double denom = std::max({std::abs(fd), std::abs(g), 1e-6});
        worst = std::max(worst, std::abs(fd - g) / denom);
    };
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
        for (Eigen::Index i = 0; i < params.weights[l].size(); ++i)
            probe(params.weights[l].data()[i], analytic.weights[l].data()[i]);
        for (Eigen::Index i = 0; i < params.biases[l].size(); ++i)
            probe(params.biases[l].data()[i], analytic.biases[l].data()[i]);
    }
    return worst;
}

} // namespace

TEST_CASE("timestep_embedding: deterministic, distinct, bounded") {
    const Eigen::VectorXd a = timestep_embedding(1, 16);
    const Eigen::VectorXd b = timestep_embedding(1, 16);
    CHECK(a == b);

    const Eigen::VectorXd c = timestep_embedding(2, 16);
    CHECK((a - c).cwiseAbs().maxCoeff() > 1e-6);

    CHECK(a.norm() <= std::sqrt(16.0) + 1e-12);
    CHECK(a.cwiseAbs().maxCoeff() <= 1.0 + 1e-12);

    CHECK_THROWS_AS(timestep_embedding(1, 7), std::invalid_argument);
}

TEST_CASE("denoiser_forward: zero weights give zero output") {
    DenoiserConfig cfg;
    cfg.pose_dim = 4;
    cfg.cond_dim = 2;
    cfg.temb_dim = 4;
    cfg.hidden = {6};
    const DenoiserParameters params = DenoiserParameters::zeros(cfg);
    Rng rng(3);
    const Eigen::VectorXd out =
        denoiser_forward(params, random_vec(rng, 4), 1, random_vec(rng, 2));
    CHECK(out.norm() == 0.0);
}

TEST_CASE("denoiser_forward: deterministic") {
    Rng rng(4);
    DenoiserConfig cfg;
    cfg.pose_dim = 3;
    cfg.cond_dim = 2;
    cfg.temb_dim = 4;
    const DenoiserParameters params = DenoiserParameters::init(cfg, 99);
    const Eigen::VectorXd x = random_vec(rng, 3), c = random_vec(rng, 2);
    const Eigen::VectorXd a = denoiser_forward(params, x, 5, c);
    const Eigen::VectorXd b = denoiser_forward(params, x, 5, c);
    CHECK(a == b);
}

TEST_CASE("denoiser_forward: identity-initialized linear net recovers x_t slice") {
    DenoiserConfig cfg;
    cfg.pose_dim = 4;
    cfg.cond_dim = 3;
    cfg.temb_dim = 4;
    cfg.hidden = {};
    cfg.activation = Activation::Identity;
    DenoiserParameters params = DenoiserParameters::zeros(cfg);
    // Single linear layer: pick out the x_t block of the input.
    params.weights[0].block(0, 0, 4, 4) = Eigen::MatrixXd::Identity(4, 4);

    Rng rng(5);
    const Eigen::VectorXd x = random_vec(rng, 4);
    const Eigen::VectorXd out = denoiser_forward(params, x, 7, random_vec(rng, 3));
    CHECK((out - x).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("denoiser_backward: zero output gradient gives zero parameter gradients") {
    Rng rng(6);
    DenoiserConfig cfg = tiny_config(rng);
    const DenoiserParameters params = DenoiserParameters::init(cfg, 1);
    const DenoiserGradients g = denoiser_backward(
        params, random_vec(rng, cfg.pose_dim), 1, random_vec(rng, cfg.cond_dim),
        Eigen::VectorXd::Zero(cfg.pose_dim));
    CHECK(g.squared_norm() == 0.0);
}

TEST_CASE("denoiser_backward: linear net matches closed-form outer products") {
    DenoiserConfig cfg;
    cfg.pose_dim = 3;
    cfg.cond_dim = 2;
    cfg.temb_dim = 4;
    cfg.hidden = {};
    cfg.activation = Activation::Identity;
    const DenoiserParameters params = DenoiserParameters::init(cfg, 7);

    Rng rng(8);
    const Eigen::VectorXd x = random_vec(rng, 3), c = random_vec(rng, 2);
    const Eigen::VectorXd dout = random_vec(rng, 3);
    const DenoiserGradients g = denoiser_backward(params, x, 4, c, dout);

    // y = W u + b, so dW = dout * u^T and db = dout.
    const Eigen::MatrixXd input = denoiser_input(cfg, x, {4}, c);
    const Eigen::MatrixXd expect = dout * input.col(0).transpose();
    CHECK((g.weights[0] - expect).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((g.biases[0] - dout).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("denoiser_backward: finite-difference agreement on random nets") {
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        DenoiserConfig cfg = tiny_config(rng);
        DenoiserParameters params = DenoiserParameters::init(cfg, 1000 + trial);
        const Eigen::VectorXd x = random_vec(rng, cfg.pose_dim);
        const Eigen::VectorXd c = random_vec(rng, cfg.cond_dim);
        const int t = static_cast<int>(rng.uniform_int(1, 10));
        const Eigen::VectorXd target = random_vec(rng, cfg.pose_dim);

        // loss = 0.5 || f(x) - target ||^2  =>  dLoss/dy = y - target
        const Eigen::VectorXd y = denoiser_forward(params, x, t, c);
        const DenoiserGradients analytic = denoiser_backward(params, x, t, c, y - target);
        const double err = max_rel_grad_error(params, analytic, [&] {
            return 0.5 * (denoiser_forward(params, x, t, c) - target).squaredNorm();
        });
        CHECK(err < 1e-4);
    }
}

TEST_CASE("optimizer: zero gradients leave parameters, bump the counter") {
    Rng rng(10);
    DenoiserConfig cfg = tiny_config(rng);
    DenoiserParameters params = DenoiserParameters::init(cfg, 2);
    const std::uint64_t before = params_checksum(params);
    OptimizerState state = OptimizerState::zeros_like(params);
    optimizer_step(params, DenoiserGradients::zeros_like(params), state, AdamConfig{});
    CHECK(params_checksum(params) == before);
    CHECK(state.step == 1);
}

TEST_CASE("optimizer: lr = 0 is the identity") {
    Rng rng(11);
    DenoiserConfig cfg = tiny_config(rng);
    DenoiserParameters params = DenoiserParameters::init(cfg, 3);
    const std::uint64_t before = params_checksum(params);
    OptimizerState state = OptimizerState::zeros_like(params);
    DenoiserGradients g = DenoiserGradients::zeros_like(params);
    for (auto& w : g.weights) w.setConstant(0.5);
    optimizer_step(params, g, state, AdamConfig{.lr = 0.0});
    CHECK(params_checksum(params) == before);
}

TEST_CASE("optimizer: non-finite gradient raises diverged") {
    Rng rng(12);
    DenoiserConfig cfg = tiny_config(rng);
    DenoiserParameters params = DenoiserParameters::init(cfg, 4);
    OptimizerState state = OptimizerState::zeros_like(params);
    DenoiserGradients g = DenoiserGradients::zeros_like(params);
    g.weights[0](0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_WITH_AS(optimizer_step(params, g, state, AdamConfig{}), "diverged",
                         std::runtime_error);
}

TEST_CASE("optimizer: descends a scalar square and converges on a quadratic") {
    // Single 1x1 weight acting as a free scalar: f(w) = (w - w*)^2.
    DenoiserConfig cfg;
    cfg.pose_dim = 1;
    cfg.cond_dim = 0;
    cfg.temb_dim = 0;
    cfg.hidden = {};
    DenoiserParameters params = DenoiserParameters::zeros(cfg);
    params.weights[0](0, 0) = 1.0;
    OptimizerState state = OptimizerState::zeros_like(params);
    const double target = 0.3;
    auto f = [&] {
        const double d = params.weights[0](0, 0) - target;
        return d * d;
    };
    auto grad = [&] {
        DenoiserGradients g = DenoiserGradients::zeros_like(params);
        g.weights[0](0, 0) = 2.0 * (params.weights[0](0, 0) - target);
        return g;
    };

    const double f0 = f();
    optimizer_step(params, grad(), state, AdamConfig{.lr = 1e-2});
    CHECK(f() < f0); // one step from w=1 decreases f

    for (int i = 0; i < 2000; ++i) optimizer_step(params, grad(), state, AdamConfig{.lr = 1e-2});
    CHECK(std::abs(params.weights[0](0, 0) - target) < 1e-6);
}

TEST_CASE("checkpoint: bit-exact round trip") {
    Rng rng(13);
    DenoiserConfig cfg;
    cfg.pose_dim = 6;
    cfg.cond_dim = 4;
    cfg.temb_dim = 8;
    cfg.hidden = {10, 10};
    Checkpoint c;
    c.params = DenoiserParameters::init(cfg, 77);
    OptimizerState opt = OptimizerState::zeros_like(c.params);
    opt.step = 42;
    for (auto& m : opt.m_weights) m.setRandom();
    c.optimizer = opt;
    c.rng_seed = 123456789ull;
    c.schedule_id = "linear:T=50:b0=0.02:b1=0.35";
    c.config_hash = "deadbeef";

    const auto dir = std::filesystem::temp_directory_path() / "gpa_ckpt_test";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "ref.ckpt.json").string();
    save_checkpoint(path, c);
    const Checkpoint back = load_checkpoint(path);

    CHECK(params_checksum(back.params) == params_checksum(c.params));
    CHECK(back.rng_seed == c.rng_seed);
    CHECK(back.schedule_id == c.schedule_id);
    REQUIRE(back.optimizer.has_value());
    CHECK(back.optimizer->step == 42);
    CHECK(back.optimizer->m_weights[0] == opt.m_weights[0]);

    // Byte-identical re-serialization.
    CHECK(checkpoint_to_json(back) == read_file(path));
    std::filesystem::remove_all(dir);
}

TEST_CASE("dense tensor validates shape against data") {
    DenseTensor t;
    t.shape = {2, 3};
    t.data.assign(5, 0.0);
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
    t.data.push_back(0.0);
    CHECK_NOTHROW(t.validate());
    CHECK(t.size() == 6);
}
