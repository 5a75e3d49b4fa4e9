#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "gpa/stats.hpp"

namespace gpa {

struct Rule {
    std::int64_t id = 0;
    std::string text;
    std::set<std::string> tags;
    std::int64_t use_count = 0;
    std::int64_t success_count = 0;
};

struct Prototype {
    std::int64_t id = 0;
    Eigen::VectorXd embedding; // unit norm
    std::string rationale;     // includes the assigned score
    std::set<std::string> tags;
};

// Combined rationale helpers; the wire protocol exposes the prototype's
// score separately, so it is encoded recoverably.
std::string make_rationale(double score, const std::string& critique);
double rationale_score(const std::string& rationale);

// Dual memory: judging rules with use/success counters plus embedded
// precedents. Once frozen, every mutation throws.
class MemoryStore {
public:
    const std::vector<Rule>& rules() const { return rules_; }
    const std::vector<Prototype>& prototypes() const { return prototypes_; }
    bool frozen() const { return frozen_; }
    void freeze() { frozen_ = true; }

    std::int64_t add_rule(const std::string& text, const std::set<std::string>& tags);
    std::int64_t add_prototype(const Eigen::VectorXd& embedding, const std::string& rationale,
                               const std::set<std::string>& tags);
    bool has_rule_text(const std::string& text) const;

    // Deserialization entry points: insert an entity with its persisted id.
    void restore_rule(Rule rule);
    void restore_prototype(Prototype prototype);

    void record_use(std::span<const std::int64_t> rule_ids);
    void record_success(std::span<const std::int64_t> rule_ids);

    // 1 + sum of use counts.
    std::int64_t n_total() const;

    const Rule* find_rule(std::int64_t id) const;

private:
    void ensure_mutable() const;

    std::vector<Rule> rules_;
    std::vector<Prototype> prototypes_;
    bool frozen_ = false;
    std::int64_t next_rule_id_ = 0;
    std::int64_t next_prototype_id_ = 0;
};

// |query_tags ∩ rule_tags|
int relevance(const std::set<std::string>& query_tags, const std::set<std::string>& rule_tags);

// success_rate + C * sqrt(ln(N_total) / (use_count + 1)); the success rate
// of an unused rule counts as 0.
double ucb_score(const Rule& rule, std::int64_t n_total, double exploration_c);

// Rules ranked by relevance + UCB, descending, ties broken by ascending
// id; at most r_max returned. An empty rule memory yields an empty result.
std::vector<Rule> select_rules(const MemoryStore& store, const std::set<std::string>& query_tags,
                               double exploration_c, int r_max);

// Top-k prototypes by cosine similarity (descending, ties by ascending id);
// all of them when fewer than k are stored.
std::vector<Prototype> retrieve_prototypes(const MemoryStore& store, const Eigen::VectorXd& query,
                                           int k);

// Versioned JSON persistence; round-trips are bit-exact.
std::string memory_to_json(const MemoryStore& store,
                           const std::optional<AffineCalibration>& calibration);
std::pair<MemoryStore, std::optional<AffineCalibration>> memory_from_json(const std::string& text);

void save_memory(const std::string& path, const MemoryStore& store,
                 const std::optional<AffineCalibration>& calibration);
std::pair<MemoryStore, std::optional<AffineCalibration>> load_memory(const std::string& path);

} // namespace gpa
