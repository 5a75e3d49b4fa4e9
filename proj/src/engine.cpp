#include "gpa/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <nlohmann/json.hpp>

#include "gpa/common.hpp"
#include "gpa/rng.hpp"
#include "gpa/stats.hpp"

namespace gpa {

using nlohmann::json;

namespace {

std::uint64_t condition_key(const Eigen::VectorXd& condition) {
    return fnv1a64(condition.data(),
                   static_cast<std::size_t>(condition.size()) * sizeof(double));
}

std::string quality_phrase(double score) {
    if (score >= 80.0) return "close fit to the observation";
    if (score >= 55.0) return "plausible but imprecise";
    if (score >= 30.0) return "visibly misaligned";
    return "poor reconstruction";
}

} // namespace

void OracleEngine::register_ground_truth(const Condition& condition, const ToyPose& pose) {
    ground_truth_.emplace_back(condition.encode(), pose);
}

void OracleEngine::register_ground_truth(const std::vector<WorldSample>& samples) {
    ground_truth_.reserve(ground_truth_.size() + samples.size());
    for (const auto& s : samples) register_ground_truth(s.condition, s.pose);
}

JudgeResult OracleEngine::judge(const JudgeContext& context) {
    const ToyPose* gt = nullptr;
    for (const auto& [cond, pose] : ground_truth_) {
        if (cond.size() == context.condition.size() && cond == context.condition) {
            gt = &pose;
            break;
        }
    }
    if (!gt) throw EngineError("oracle engine: unknown condition (no ground truth registered)");

    JudgeResult out;
    out.scores.reserve(context.hypotheses.size());
    out.critiques.reserve(context.hypotheses.size());
    const std::uint64_t cond_hash = condition_key(context.condition);
    for (std::size_t j = 0; j < context.hypotheses.size(); ++j) {
        ToyPose hyp{context.hypotheses[j]};
        const double err = mpjpe(hyp, *gt);
        double score = 100.0 - config_.score_slope * err;
        if (config_.noise_std > 0.0) {
            // Noise depends only on (seed, condition, index): the same
            // group judged twice gets identical scores, and a noise-std
            // sweep scales one fixed draw.
            Rng rng(derive_seed(config_.seed, cond_hash, j));
            score += config_.noise_std * rng.normal();
        }
        score = std::clamp(score, 0.0, 100.0);
        out.scores.push_back(score);
        char buf[96];
        std::snprintf(buf, sizeof(buf), "hypothesis %zu: %s", j + 1,
                      quality_phrase(score).c_str());
        out.critiques.emplace_back(buf);
    }
    return out;
}

std::vector<RuleDraft> OracleEngine::reflect(const DiscrepancySummary& summary) {
    // Canned, parameterized rule templates keyed by the dominant error
    // pattern visible in the (score, metric) pairs.
    std::vector<RuleDraft> out;
    const auto& pairs = summary.per_hypothesis;
    if (pairs.empty()) return out;

    std::vector<double> metrics;
    metrics.reserve(pairs.size());
    for (const auto& [score, metric] : pairs) metrics.push_back(metric);
    std::vector<double> sorted_metrics = metrics;
    std::sort(sorted_metrics.begin(), sorted_metrics.end());
    const double median_metric = sorted_metrics[sorted_metrics.size() / 2];

    char buf[160];
    if (!summary.spearman.has_value()) {
        out.push_back({"Spread scores across at least a 20-point range when group members "
                       "differ visibly in alignment quality.",
                       {"rough-aligned", "mid-quality"}});
        return out;
    }

    std::vector<double> scores;
    scores.reserve(pairs.size());
    for (const auto& [score, metric] : pairs) scores.push_back(score);
    std::vector<double> sorted_scores = scores;
    std::sort(sorted_scores.begin(), sorted_scores.end());
    const double median_score = sorted_scores[sorted_scores.size() / 2];

    bool overrated = false, underrated = false;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (metrics[i] > median_metric && scores[i] > median_score) overrated = true;
        if (metrics[i] < median_metric && scores[i] < median_score) underrated = true;
    }

    if (*summary.spearman < 0.2) {
        out.push_back({"Re-rank the group by reprojection residual before assigning final "
                       "scores.",
                       {"misaligned", "rough-aligned"}});
    }
    if (overrated && out.size() < 2) {
        std::snprintf(buf, sizeof(buf),
                      "Cap the score of a hypothesis whose joint error exceeds %.2f when "
                      "others in the group align better.",
                      median_metric);
        out.push_back({buf, {"misaligned", "low-quality"}});
    }
    if (underrated && out.size() < 2) {
        out.push_back({"Raise the relative score of hypotheses with near-zero reprojection "
                       "residual and typical bone proportions.",
                       {"aligned", "high-quality"}});
    }
    if (out.empty()) {
        std::snprintf(buf, sizeof(buf),
                      "Keep score gaps proportional to joint-error gaps around the %.2f "
                      "error level.",
                      median_metric);
        out.push_back({buf, {"mid-quality", "proportional"}});
    }
    if (out.size() > 2) out.resize(2);
    return out;
}

std::vector<RuleDraft> seed_rule_drafts() {
    return {
        {"Score 2D alignment first: hypotheses whose projection matches the observed "
         "points deserve the upper half of the range.",
         {"aligned", "high-quality"}},
        {"Penalize limb proportions that deviate strongly from the group's typical bone "
         "lengths.",
         {"distorted", "low-quality"}},
        {"When two hypotheses project equally well, prefer the depth arrangement that "
         "matches typical poses.",
         {"aligned", "mid-quality"}},
        {"Reserve scores below 20 for reconstructions that are both misaligned and "
         "distorted.",
         {"misaligned", "distorted"}},
    };
}

} // namespace gpa
