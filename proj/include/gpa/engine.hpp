#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gpa/world.hpp"

namespace gpa {

// Everything a scoring engine sees for one group judgement.
struct JudgeContext {
    Eigen::VectorXd condition;
    std::vector<Eigen::VectorXd> hypotheses;
    std::vector<std::string> rules;                       // selected rule texts
    std::vector<std::pair<std::string, double>> prototypes; // (rationale, score)
    int format_version = 1;
};

struct JudgeResult {
    std::vector<double> scores;
    std::vector<std::string> critiques;
};

// What reflection gets to look at: the rank agreement and the per-
// hypothesis (assigned score, ground-truth metric) pairs.
struct DiscrepancySummary {
    std::optional<double> spearman;
    std::vector<std::pair<double, double>> per_hypothesis; // (score, metric)
};

struct RuleDraft {
    std::string text;
    std::set<std::string> tags;
};

class EngineError : public std::runtime_error {
public:
    explicit EngineError(const std::string& what) : std::runtime_error(what) {}
};

class ScoringEngine {
public:
    virtual ~ScoringEngine() = default;
    virtual JudgeResult judge(const JudgeContext& context) = 0;
    virtual std::vector<RuleDraft> reflect(const DiscrepancySummary& summary) = 0;
    virtual std::string kind() const = 0;
    virtual bool uses_ground_truth() const = 0;
};

// Offline stand-in for a VLM scorer. Scores each hypothesis as
// clamp(100 - slope * mpjpe(h, gt) + noise, 0, 100) against ground truth
// registered per condition; the noise is derived from (seed, condition,
// hypothesis index), so judgements are reproducible and independent of
// call order.
struct OracleEngineConfig {
    double score_slope = 10.0;
    double noise_std = 0.0;
    std::uint64_t seed = 0;
};

class OracleEngine : public ScoringEngine {
public:
    explicit OracleEngine(OracleEngineConfig config) : config_(config) {}

    void register_ground_truth(const Condition& condition, const ToyPose& pose);
    void register_ground_truth(const std::vector<WorldSample>& samples);

    JudgeResult judge(const JudgeContext& context) override;
    std::vector<RuleDraft> reflect(const DiscrepancySummary& summary) override;
    std::string kind() const override { return "oracle"; }
    bool uses_ground_truth() const override { return true; }

    const OracleEngineConfig& config() const { return config_; }

private:
    OracleEngineConfig config_;
    std::vector<std::pair<Eigen::VectorXd, ToyPose>> ground_truth_;
};

// Starter rules matching the oracle's reflection vocabulary.
std::vector<RuleDraft> seed_rule_drafts();

// HTTP client for an external scoring engine. POST /judge and POST
// /reflect with JSON bodies; malformed responses raise EngineError.
struct RemoteEngineConfig {
    std::string endpoint;     // e.g. "http://127.0.0.1:8080"
    double timeout_sec = 10.0;
    int retries = 2;          // additional attempts on transport errors / 5xx
    std::string auth_token;
};

class RemoteEngine : public ScoringEngine {
public:
    explicit RemoteEngine(RemoteEngineConfig config);

    JudgeResult judge(const JudgeContext& context) override;
    std::vector<RuleDraft> reflect(const DiscrepancySummary& summary) override;
    std::string kind() const override { return "remote"; }
    bool uses_ground_truth() const override { return false; }

private:
    std::string post_json(const std::string& path, const std::string& body);

    RemoteEngineConfig config_;
};

// Serves any ScoringEngine over the wire protocol; used by tests and the
// serve-engine command.
class EngineServer {
public:
    EngineServer(std::shared_ptr<ScoringEngine> engine, const std::string& host, int port);
    ~EngineServer();

    EngineServer(const EngineServer&) = delete;
    EngineServer& operator=(const EngineServer&) = delete;

    int port() const { return port_; }
    std::string endpoint() const;
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    std::string host_;
    int port_ = 0;
};

// JSON codecs for the wire protocol, shared by client and server.
std::string judge_request_to_json(const JudgeContext& context);
JudgeContext judge_request_from_json(const std::string& body);
std::string judge_response_to_json(const JudgeResult& result);
JudgeResult judge_response_from_json(const std::string& body, std::size_t expected);
std::string reflect_request_to_json(const DiscrepancySummary& summary);
DiscrepancySummary reflect_request_from_json(const std::string& body);
std::string reflect_response_to_json(const std::vector<RuleDraft>& rules);
std::vector<RuleDraft> reflect_response_from_json(const std::string& body);

} // namespace gpa
