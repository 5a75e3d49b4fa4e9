#include "gpa/agent.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "gpa/common.hpp"

namespace gpa {

CritiqueAgent::CritiqueAgent(std::shared_ptr<ScoringEngine> engine, AgentConfig config,
                             MemoryStore memory)
    : engine_(std::move(engine)), config_(config), memory_(std::move(memory)) {
    if (!engine_) throw std::invalid_argument("agent needs a scoring engine");
    if (config_.top_k_prototypes < 1 || config_.max_rules < 1 || config_.ucb_c < 0.0)
        throw std::invalid_argument("invalid agent config");
}

Assessment CritiqueAgent::score_group(const Condition& condition,
                                      const std::vector<ToyPose>& hypotheses) {
    if (hypotheses.empty()) throw std::invalid_argument("empty hypothesis group");

    // Group query embedding: normalized centroid of the hypothesis embeddings.
    Eigen::VectorXd query = Eigen::VectorXd::Zero(embed_hypothesis(condition, hypotheses[0]).size());
    for (const auto& h : hypotheses) query += embed_hypothesis(condition, h);
    query /= query.norm();

    const std::vector<Prototype> protos =
        retrieve_prototypes(memory_, query, config_.top_k_prototypes);
    std::set<std::string> query_tags;
    for (const auto& p : protos) query_tags.insert(p.tags.begin(), p.tags.end());

    const std::vector<Rule> rules =
        select_rules(memory_, query_tags, config_.ucb_c, config_.max_rules);

    JudgeContext ctx;
    ctx.condition = condition.encode();
    ctx.hypotheses.reserve(hypotheses.size());
    for (const auto& h : hypotheses) ctx.hypotheses.push_back(h.coords);
    for (const auto& r : rules) ctx.rules.push_back(r.text);
    for (const auto& p : protos)
        ctx.prototypes.emplace_back(p.rationale, rationale_score(p.rationale));

    const JudgeResult draft = engine_->judge(ctx);
    if (draft.scores.size() != hypotheses.size())
        throw EngineError("engine returned wrong score count");

    Assessment out;
    out.scores.reserve(draft.scores.size());
    for (double s : draft.scores) {
        if (!std::isfinite(s)) throw EngineError("engine returned non-finite score");
        if (s < 0.0 || s > 100.0) out.clamped = true;
        double v = std::clamp(s, 0.0, 100.0);
        if (calibration_) v = std::clamp(calibration_->apply(v), 0.0, 100.0);
        out.scores.push_back(v);
    }
    out.critiques = draft.critiques;
    out.critiques.resize(hypotheses.size());
    for (const auto& r : rules) out.rule_ids.push_back(r.id);
    for (const auto& p : protos) out.prototype_ids.push_back(p.id);

    if (!memory_.frozen()) memory_.record_use(out.rule_ids);
    return out;
}

ExplorationReport CritiqueAgent::exploration_step(const std::vector<ExplorationItem>& batch,
                                                  double tau) {
    if (memory_.frozen()) throw std::runtime_error("memory frozen");

    ExplorationReport report;
    double spearman_sum = 0.0;
    for (const auto& item : batch) {
        if (item.hypotheses.size() < 2)
            throw std::invalid_argument("exploration group needs at least 2 hypotheses");

        // (1) memory-augmented scoring; counts usage of the applied rules.
        const Assessment assessment = score_group(item.condition, item.hypotheses);
        report.groups += 1;

        // (2) write back the salient examples: best- and worst-scored.
        const auto best_it = std::max_element(assessment.scores.begin(), assessment.scores.end());
        const auto worst_it = std::min_element(assessment.scores.begin(), assessment.scores.end());
        const std::size_t best = static_cast<std::size_t>(best_it - assessment.scores.begin());
        const std::size_t worst = static_cast<std::size_t>(worst_it - assessment.scores.begin());
        for (std::size_t idx : {best, worst}) {
            const ToyPose& pose = item.hypotheses[idx];
            const double score = assessment.scores[idx];
            memory_.add_prototype(embed_hypothesis(item.condition, pose),
                                  make_rationale(score, assessment.critiques[idx]),
                                  derive_tags(item.condition, pose, score));
            report.prototypes_added += 1;
        }

        // (3) rank agreement against the ground-truth quality signal.
        std::vector<double> quality;
        quality.reserve(item.hypotheses.size());
        for (const auto& h : item.hypotheses) quality.push_back(-mpjpe(h, item.ground_truth));
        const std::optional<double> rho = spearman(assessment.scores, quality);
        if (rho.has_value()) {
            spearman_sum += *rho;
            if (*rho > tau) {
                memory_.record_success(assessment.rule_ids);
                report.successes += 1;
            }
        } else {
            report.undefined_groups += 1; // constant scores: treated as failure
        }

        // (4) mine new rules from the discrepancy.
        DiscrepancySummary summary;
        summary.spearman = rho;
        for (std::size_t j = 0; j < item.hypotheses.size(); ++j)
            summary.per_hypothesis.emplace_back(assessment.scores[j], -quality[j]);
        std::vector<RuleDraft> drafts = engine_->reflect(summary);
        if (drafts.size() > 2) drafts.resize(2);
        for (const auto& d : drafts) {
            if (memory_.has_rule_text(d.text)) continue;
            memory_.add_rule(d.text, d.tags);
            report.rules_added += 1;
        }
    }
    const int defined = report.groups - report.undefined_groups;
    report.mean_spearman = defined > 0 ? spearman_sum / defined : 0.0;
    return report;
}

void CritiqueAgent::freeze() { memory_.freeze(); }

AffineCalibration CritiqueAgent::calibrate(std::span<const double> raw_scores,
                                           std::span<const double> reference_scores) {
    const AffineCalibration cal = fit_calibration(raw_scores, reference_scores);
    calibration_ = cal;
    return cal;
}

void CritiqueAgent::set_calibration(std::optional<AffineCalibration> calibration) {
    calibration_ = calibration;
}

std::uint64_t CritiqueAgent::memory_checksum() const {
    return fnv1a64(memory_to_json(memory_, calibration_));
}

void CritiqueAgent::save(const std::string& path) const {
    save_memory(path, memory_, calibration_);
}

CritiqueAgent CritiqueAgent::load(const std::string& path, std::shared_ptr<ScoringEngine> engine,
                                  AgentConfig config) {
    auto [store, calibration] = load_memory(path);
    CritiqueAgent agent(std::move(engine), config, std::move(store));
    agent.set_calibration(calibration);
    return agent;
}

} // namespace gpa
