#include "gpa/memory.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <numeric>
#include <stdexcept>

#include "gpa/common.hpp"

namespace gpa {

using nlohmann::json;

std::string make_rationale(double score, const std::string& critique) {
    char head[48];
    std::snprintf(head, sizeof(head), "score=%.4f; ", score);
    return std::string(head) + critique;
}

double rationale_score(const std::string& rationale) {
    double score = 0.0;
    if (std::sscanf(rationale.c_str(), "score=%lf;", &score) != 1)
        throw std::invalid_argument("rationale carries no score: " + rationale);
    return score;
}

void MemoryStore::ensure_mutable() const {
    if (frozen_) throw std::runtime_error("memory frozen");
}

std::int64_t MemoryStore::add_rule(const std::string& text, const std::set<std::string>& tags) {
    ensure_mutable();
    if (tags.empty()) throw std::invalid_argument("rule tags must be non-empty");
    Rule r;
    r.id = next_rule_id_++;
    r.text = text;
    r.tags = tags;
    rules_.push_back(std::move(r));
    return rules_.back().id;
}

std::int64_t MemoryStore::add_prototype(const Eigen::VectorXd& embedding,
                                        const std::string& rationale,
                                        const std::set<std::string>& tags) {
    ensure_mutable();
    const double norm = embedding.norm();
    if (!(norm > 1e-12)) throw std::invalid_argument("prototype embedding must be non-zero");
    if (std::abs(norm - 1.0) > 1e-6)
        throw std::invalid_argument("prototype embedding must be unit norm");
    Prototype p;
    p.id = next_prototype_id_++;
    p.embedding = embedding / norm;
    p.rationale = rationale;
    p.tags = tags;
    prototypes_.push_back(std::move(p));
    return prototypes_.back().id;
}

bool MemoryStore::has_rule_text(const std::string& text) const {
    return std::any_of(rules_.begin(), rules_.end(),
                       [&](const Rule& r) { return r.text == text; });
}

void MemoryStore::restore_rule(Rule rule) {
    ensure_mutable();
    if (rule.tags.empty()) throw std::invalid_argument("rule tags must be non-empty");
    if (rule.success_count > rule.use_count || rule.use_count < 0)
        throw std::invalid_argument("corrupt rule counters");
    if (find_rule(rule.id)) throw std::invalid_argument("duplicate rule id");
    next_rule_id_ = std::max(next_rule_id_, rule.id + 1);
    rules_.push_back(std::move(rule));
}

void MemoryStore::restore_prototype(Prototype prototype) {
    ensure_mutable();
    if (std::abs(prototype.embedding.norm() - 1.0) > 1e-6)
        throw std::invalid_argument("prototype embedding must be unit norm");
    for (const auto& p : prototypes_)
        if (p.id == prototype.id) throw std::invalid_argument("duplicate prototype id");
    next_prototype_id_ = std::max(next_prototype_id_, prototype.id + 1);
    prototypes_.push_back(std::move(prototype));
}

void MemoryStore::record_use(std::span<const std::int64_t> rule_ids) {
    ensure_mutable();
    for (auto& r : rules_)
        if (std::find(rule_ids.begin(), rule_ids.end(), r.id) != rule_ids.end())
            r.use_count += 1;
}

void MemoryStore::record_success(std::span<const std::int64_t> rule_ids) {
    ensure_mutable();
    for (auto& r : rules_) {
        if (std::find(rule_ids.begin(), rule_ids.end(), r.id) != rule_ids.end()) {
            if (r.success_count + 1 > r.use_count)
                throw std::logic_error("success count would exceed use count");
            r.success_count += 1;
        }
    }
}

std::int64_t MemoryStore::n_total() const {
    return 1 + std::accumulate(rules_.begin(), rules_.end(), std::int64_t{0},
                               [](std::int64_t acc, const Rule& r) { return acc + r.use_count; });
}

const Rule* MemoryStore::find_rule(std::int64_t id) const {
    for (const auto& r : rules_)
        if (r.id == id) return &r;
    return nullptr;
}

int relevance(const std::set<std::string>& query_tags, const std::set<std::string>& rule_tags) {
    int n = 0;
    for (const auto& t : query_tags) n += rule_tags.count(t) ? 1 : 0;
    return n;
}

double ucb_score(const Rule& rule, std::int64_t n_total, double exploration_c) {
    if (n_total < 1) throw std::invalid_argument("n_total must be >= 1");
    if (exploration_c < 0.0) throw std::invalid_argument("exploration constant must be >= 0");
    const double rate =
        rule.use_count > 0
            ? static_cast<double>(rule.success_count) / static_cast<double>(rule.use_count)
            : 0.0;
    return rate + exploration_c * std::sqrt(std::log(static_cast<double>(n_total)) /
                                            static_cast<double>(rule.use_count + 1));
}

std::vector<Rule> select_rules(const MemoryStore& store, const std::set<std::string>& query_tags,
                               double exploration_c, int r_max) {
    if (r_max < 1) throw std::invalid_argument("r_max must be >= 1");
    const std::int64_t total = store.n_total();
    std::vector<std::pair<double, std::size_t>> ranked;
    ranked.reserve(store.rules().size());
    for (std::size_t i = 0; i < store.rules().size(); ++i) {
        const Rule& r = store.rules()[i];
        ranked.emplace_back(relevance(query_tags, r.tags) + ucb_score(r, total, exploration_c), i);
    }
    std::sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return store.rules()[a.second].id < store.rules()[b.second].id;
    });
    std::vector<Rule> out;
    const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(r_max), ranked.size());
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) out.push_back(store.rules()[ranked[i].second]);
    return out;
}

std::vector<Prototype> retrieve_prototypes(const MemoryStore& store, const Eigen::VectorXd& query,
                                           int k) {
    if (k < 1) throw std::invalid_argument("k must be >= 1");
    std::vector<std::pair<double, std::size_t>> ranked;
    ranked.reserve(store.prototypes().size());
    for (std::size_t i = 0; i < store.prototypes().size(); ++i)
        ranked.emplace_back(query.dot(store.prototypes()[i].embedding), i);

    const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), ranked.size());
    std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(take),
                      ranked.end(), [&](const auto& a, const auto& b) {
                          if (a.first != b.first) return a.first > b.first;
                          return store.prototypes()[a.second].id < store.prototypes()[b.second].id;
                      });
    std::vector<Prototype> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) out.push_back(store.prototypes()[ranked[i].second]);
    return out;
}

namespace {
constexpr int kMemoryFormatVersion = 1;
}

std::string memory_to_json(const MemoryStore& store,
                           const std::optional<AffineCalibration>& calibration) {
    json j;
    j["format_version"] = kMemoryFormatVersion;
    json rules = json::array();
    for (const auto& r : store.rules()) {
        rules.push_back(json{{"id", r.id},
                             {"text", r.text},
                             {"tags", r.tags},
                             {"use", r.use_count},
                             {"success", r.success_count}});
    }
    j["rules"] = rules;
    json protos = json::array();
    for (const auto& p : store.prototypes()) {
        protos.push_back(json{
            {"id", p.id},
            {"embedding", std::vector<double>(p.embedding.data(),
                                              p.embedding.data() + p.embedding.size())},
            {"rationale", p.rationale},
            {"tags", p.tags}});
    }
    j["prototypes"] = protos;
    j["frozen"] = store.frozen();
    if (calibration)
        j["calibration"] = json{{"a", calibration->scale}, {"b", calibration->shift}};
    else
        j["calibration"] = nullptr;
    return j.dump();
}

std::pair<MemoryStore, std::optional<AffineCalibration>> memory_from_json(
    const std::string& text) {
    const json j = json::parse(text);
    if (j.at("format_version").get<int>() != kMemoryFormatVersion)
        throw std::runtime_error("unsupported memory format version");

    MemoryStore store;
    for (const auto& r : j.at("rules")) {
        Rule rule;
        rule.id = r.at("id").get<std::int64_t>();
        rule.text = r.at("text").get<std::string>();
        rule.tags = r.at("tags").get<std::set<std::string>>();
        rule.use_count = r.at("use").get<std::int64_t>();
        rule.success_count = r.at("success").get<std::int64_t>();
        store.restore_rule(std::move(rule));
    }
    for (const auto& p : j.at("prototypes")) {
        Prototype proto;
        proto.id = p.at("id").get<std::int64_t>();
        const auto data = p.at("embedding").get<std::vector<double>>();
        proto.embedding =
            Eigen::Map<const Eigen::VectorXd>(data.data(), static_cast<Eigen::Index>(data.size()));
        proto.rationale = p.at("rationale").get<std::string>();
        proto.tags = p.at("tags").get<std::set<std::string>>();
        store.restore_prototype(std::move(proto));
    }

    std::optional<AffineCalibration> calibration;
    if (j.contains("calibration") && !j.at("calibration").is_null()) {
        AffineCalibration c;
        c.scale = j.at("calibration").at("a").get<double>();
        c.shift = j.at("calibration").at("b").get<double>();
        calibration = c;
    }
    if (j.at("frozen").get<bool>()) store.freeze();
    return {std::move(store), calibration};
}

void save_memory(const std::string& path, const MemoryStore& store,
                 const std::optional<AffineCalibration>& calibration) {
    write_file(path, memory_to_json(store, calibration));
}

std::pair<MemoryStore, std::optional<AffineCalibration>> load_memory(const std::string& path) {
    return memory_from_json(read_file(path));
}

} // namespace gpa
