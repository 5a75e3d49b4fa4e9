#include "gpa/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace gpa {

namespace {

double mean_of(std::span<const double> v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

void check_pair(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw std::invalid_argument("length mismatch");
    if (x.size() < 2) throw std::invalid_argument("need at least 2 samples");
}

// Merge sort over `y` counting exchanges, i.e. pairs out of order.
std::uint64_t merge_count(std::vector<double>& v, std::vector<double>& buf,
                          std::size_t lo, std::size_t hi) {
    if (hi - lo < 2) return 0;
    const std::size_t mid = lo + (hi - lo) / 2;
    std::uint64_t swaps = merge_count(v, buf, lo, mid) + merge_count(v, buf, mid, hi);
    std::size_t i = lo, j = mid, k = lo;
    while (i < mid && j < hi) {
        if (v[j] < v[i]) {
            swaps += mid - i;
            buf[k++] = v[j++];
        } else {
            buf[k++] = v[i++];
        }
    }
    while (i < mid) buf[k++] = v[i++];
    while (j < hi) buf[k++] = v[j++];
    std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo),
              buf.begin() + static_cast<std::ptrdiff_t>(hi),
              v.begin() + static_cast<std::ptrdiff_t>(lo));
    return swaps;
}

std::uint64_t tie_pairs(std::span<const double> sorted_keys) {
    std::uint64_t pairs = 0;
    std::size_t i = 0;
    while (i < sorted_keys.size()) {
        std::size_t j = i;
        while (j < sorted_keys.size() && sorted_keys[j] == sorted_keys[i]) ++j;
        const std::uint64_t t = j - i;
        pairs += t * (t - 1) / 2;
        i = j;
    }
    return pairs;
}

} // namespace

AdvantageVector advantages(std::span<const double> scores, double eps) {
    if (scores.empty()) throw std::invalid_argument("empty group");
    if (eps <= 0.0) throw std::invalid_argument("eps must be positive");
    for (double s : scores)
        if (!std::isfinite(s)) throw std::invalid_argument("non-finite score");

    const double mean = mean_of(scores);
    double var = 0.0;
    for (double s : scores) var += (s - mean) * (s - mean);
    var /= static_cast<double>(scores.size());
    const double std_dev = std::sqrt(var);

    AdvantageVector out;
    out.values.resize(scores.size());
    if (std_dev < eps) {
        out.degenerate = true;
        std::fill(out.values.begin(), out.values.end(), 0.0);
        return out;
    }
    for (std::size_t i = 0; i < scores.size(); ++i)
        out.values[i] = (scores[i] - mean) / std_dev;
    return out;
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
    check_pair(x, y);
    const double mx = mean_of(x);
    const double my = mean_of(y);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0) return std::nullopt; // undefined correlation
    return sxy / std::sqrt(sxx * syy);
}

std::vector<double> average_ranks(std::span<const double> v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && v[order[j]] == v[order[i]]) ++j;
        // Positions i..j-1 share the average of 1-based ranks i+1..j.
        const double r = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k) ranks[order[k]] = r;
        i = j;
    }
    return ranks;
}

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
    check_pair(x, y);
    const std::vector<double> rx = average_ranks(x);
    const std::vector<double> ry = average_ranks(y);
    return pearson(rx, ry);
}

std::optional<double> kendall(std::span<const double> x, std::span<const double> y) {
    check_pair(x, y);
    const std::size_t n = x.size();

    // Sort by (x, y); within x-ties y is non-decreasing, so exchanges
    // counted below come only from pairs with strictly different x.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (x[a] != x[b]) return x[a] < x[b];
        return y[a] < y[b];
    });

    std::vector<double> xs(n), ys(n);
    for (std::size_t i = 0; i < n; ++i) {
        xs[i] = x[order[i]];
        ys[i] = y[order[i]];
    }

    const std::uint64_t n0 = static_cast<std::uint64_t>(n) * (n - 1) / 2;
    const std::uint64_t n1 = tie_pairs(xs);

    // Joint ties in (x, y).
    std::uint64_t n3 = 0;
    {
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j < n && xs[j] == xs[i] && ys[j] == ys[i]) ++j;
            const std::uint64_t t = j - i;
            n3 += t * (t - 1) / 2;
            i = j;
        }
    }

    std::vector<double> ybuf(ys), tmp(n);
    const std::uint64_t swaps = merge_count(ybuf, tmp, 0, n);

    std::vector<double> ysorted(ys);
    std::sort(ysorted.begin(), ysorted.end());
    const std::uint64_t n2 = tie_pairs(ysorted);

    if (n1 == n0 || n2 == n0) return std::nullopt; // all tied on one side

    const double num = static_cast<double>(n0) - static_cast<double>(n1) -
                       static_cast<double>(n2) + static_cast<double>(n3) -
                       2.0 * static_cast<double>(swaps);
    const double den = std::sqrt(static_cast<double>(n0 - n1)) *
                       std::sqrt(static_cast<double>(n0 - n2));
    return num / den;
}

CorrelationReport correlation_report(std::span<const double> scores,
                                     std::span<const double> quality) {
    CorrelationReport r;
    r.n = scores.size();
    r.plcc = pearson(scores, quality);
    r.srcc = spearman(scores, quality);
    r.krcc = kendall(scores, quality);
    return r;
}

AffineCalibration fit_calibration(std::span<const double> raw,
                                  std::span<const double> target) {
    check_pair(raw, target);
    const double mr = mean_of(raw);
    const double mt = mean_of(target);
    double srr = 0.0, srt = 0.0;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const double dr = raw[i] - mr;
        srr += dr * dr;
        srt += dr * (target[i] - mt);
    }
    AffineCalibration cal;
    if (srr <= 0.0) {
        cal.scale = 0.0; // constant input: fall back to the target mean
    } else {
        cal.scale = std::max(0.0, srt / srr);
    }
    cal.shift = mt - cal.scale * mr;
    return cal;
}

} // namespace gpa
