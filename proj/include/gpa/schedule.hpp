#pragma once

#include <string>
#include <vector>

namespace gpa {

// Precomputed noise-schedule tables, indexed by timestep t in 1..T
// through the *_at accessors (internal storage is 0-based).
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;      // beta_t
    std::vector<double> alpha;     // 1 - beta_t
    std::vector<double> alpha_bar; // cumulative product of alpha
    std::vector<double> sigma;     // posterior std; sigma_1 = 0
    std::vector<double> lambda_w;  // per-timestep loss weight
    std::string id;

    double beta_at(int t) const { return beta[check(t)]; }
    double alpha_at(int t) const { return alpha[check(t)]; }
    double alpha_bar_at(int t) const { return alpha_bar[check(t)]; }
    double sigma_at(int t) const { return sigma[check(t)]; }
    double lambda_at(int t) const { return lambda_w[check(t)]; }
    // alpha_bar at t-1 with the closed-form convention alpha_bar_0 = 1.
    double alpha_bar_prev(int t) const { return t <= 1 ? 1.0 : alpha_bar[check(t) - 1]; }

private:
    std::size_t check(int t) const;
};

// Linearly spaced beta in [beta_start, beta_end]; sigma_t is the standard
// posterior std sqrt(beta_t * (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t));
// lambda_t = 1 for all t.
NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end);

} // namespace gpa
