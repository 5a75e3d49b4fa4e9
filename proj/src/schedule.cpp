#include "gpa/schedule.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace gpa {

std::size_t NoiseSchedule::check(int t) const {
    if (t < 1 || t > T) throw std::out_of_range("timestep out of range");
    return static_cast<std::size_t>(t - 1);
}

NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end) {
    if (T < 2) throw std::invalid_argument("schedule needs T >= 2");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw std::invalid_argument("invalid beta range");

    NoiseSchedule s;
    s.T = T;
    s.beta.resize(T);
    s.alpha.resize(T);
    s.alpha_bar.resize(T);
    s.sigma.resize(T);
    s.lambda_w.assign(T, 1.0);

    double cum = 1.0;
    for (int i = 0; i < T; ++i) {
        s.beta[i] = beta_start + (beta_end - beta_start) * static_cast<double>(i) /
                                     static_cast<double>(T - 1);
        s.alpha[i] = 1.0 - s.beta[i];
        cum *= s.alpha[i];
        s.alpha_bar[i] = cum;
        const double ab_prev = i == 0 ? 1.0 : s.alpha_bar[i - 1];
        s.sigma[i] = std::sqrt(s.beta[i] * (1.0 - ab_prev) / (1.0 - s.alpha_bar[i]));
    }

    char buf[96];
    std::snprintf(buf, sizeof(buf), "linear:T=%d:b0=%.6g:b1=%.6g", T, beta_start, beta_end);
    s.id = buf;
    return s;
}

} // namespace gpa
