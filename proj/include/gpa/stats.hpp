#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace gpa {

// Within-group standardized scores. `degenerate` marks groups whose score
// spread fell below the epsilon guard; their advantages are all zero and
// trainers skip them.
struct AdvantageVector {
    std::vector<double> values;
    bool degenerate = false;
};

// A_i = (s_i - mean) / std, population (divide-by-G) std.
AdvantageVector advantages(std::span<const double> scores, double eps = 1e-8);

// Correlations return nullopt when undefined (constant input); they never
// report 0 for an undefined value. Length mismatch or n < 2 throws.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);
// Kendall tau-b (tie-corrected), O(n log n) merge-sort counting.
std::optional<double> kendall(std::span<const double> x, std::span<const double> y);

// Average ranks (1-based); ties receive the mean of their rank range.
std::vector<double> average_ranks(std::span<const double> v);

struct CorrelationReport {
    std::optional<double> plcc;
    std::optional<double> srcc;
    std::optional<double> krcc;
    std::size_t n = 0;
};

CorrelationReport correlation_report(std::span<const double> scores,
                                     std::span<const double> quality);

// Least-squares scale-and-shift with the scale clamped to be non-negative.
struct AffineCalibration {
    double scale = 1.0;
    double shift = 0.0;
    double apply(double raw) const { return scale * raw + shift; }
};

// Minimizes sum((a*raw + b - target)^2) subject to a >= 0. Constant raw
// falls back to a = 0, b = mean(target).
AffineCalibration fit_calibration(std::span<const double> raw,
                                  std::span<const double> target);

} // namespace gpa
