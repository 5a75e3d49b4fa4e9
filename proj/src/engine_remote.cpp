#include "gpa/engine.hpp"

// httplib drags in resolv.h, whose `res` macro breaks Eigen headers;
// keep it after anything that includes Eigen.
#include <httplib.h>

#include <chrono>
#include <nlohmann/json.hpp>
#include <thread>

namespace gpa {

using nlohmann::json;

namespace {

std::vector<double> to_vec(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd from_vec(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

} // namespace

std::string judge_request_to_json(const JudgeContext& context) {
    json j;
    j["condition"] = to_vec(context.condition);
    json hyps = json::array();
    for (const auto& h : context.hypotheses) hyps.push_back(to_vec(h));
    j["hypotheses"] = hyps;
    j["rules"] = context.rules;
    json protos = json::array();
    for (const auto& [rationale, score] : context.prototypes)
        protos.push_back(json{{"rationale", rationale}, {"score", score}});
    j["prototypes"] = protos;
    j["format_version"] = context.format_version;
    return j.dump();
}

JudgeContext judge_request_from_json(const std::string& body) {
    const json j = json::parse(body);
    JudgeContext c;
    c.condition = from_vec(j.at("condition").get<std::vector<double>>());
    for (const auto& h : j.at("hypotheses"))
        c.hypotheses.push_back(from_vec(h.get<std::vector<double>>()));
    c.rules = j.at("rules").get<std::vector<std::string>>();
    for (const auto& p : j.at("prototypes"))
        c.prototypes.emplace_back(p.at("rationale").get<std::string>(),
                                  p.at("score").get<double>());
    c.format_version = j.at("format_version").get<int>();
    return c;
}

std::string judge_response_to_json(const JudgeResult& result) {
    return json{{"scores", result.scores}, {"critiques", result.critiques}}.dump();
}

JudgeResult judge_response_from_json(const std::string& body, std::size_t expected) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::exception& e) {
        throw EngineError(std::string("malformed judge response: ") + e.what());
    }
    JudgeResult r;
    try {
        r.scores = j.at("scores").get<std::vector<double>>();
        if (j.contains("critiques")) r.critiques = j.at("critiques").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw EngineError(std::string("malformed judge response: ") + e.what());
    }
    if (r.scores.size() != expected)
        throw EngineError("judge response score count mismatch");
    for (double s : r.scores)
        if (!std::isfinite(s)) throw EngineError("judge response carries non-finite score");
    if (r.critiques.empty()) r.critiques.assign(expected, "");
    if (r.critiques.size() != expected)
        throw EngineError("judge response critique count mismatch");
    return r;
}

std::string reflect_request_to_json(const DiscrepancySummary& summary) {
    json per = json::array();
    for (const auto& [score, metric] : summary.per_hypothesis)
        per.push_back(json{{"score", score}, {"metric", metric}});
    json d;
    d["spearman"] = summary.spearman ? json(*summary.spearman) : json(nullptr);
    d["per_hypothesis"] = per;
    return json{{"discrepancy", d}}.dump();
}

DiscrepancySummary reflect_request_from_json(const std::string& body) {
    const json j = json::parse(body);
    const json& d = j.at("discrepancy");
    DiscrepancySummary s;
    if (!d.at("spearman").is_null()) s.spearman = d.at("spearman").get<double>();
    for (const auto& p : d.at("per_hypothesis"))
        s.per_hypothesis.emplace_back(p.at("score").get<double>(), p.at("metric").get<double>());
    return s;
}

std::string reflect_response_to_json(const std::vector<RuleDraft>& rules) {
    json arr = json::array();
    for (const auto& r : rules) arr.push_back(json{{"text", r.text}, {"tags", r.tags}});
    return json{{"rules", arr}}.dump();
}

std::vector<RuleDraft> reflect_response_from_json(const std::string& body) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::exception& e) {
        throw EngineError(std::string("malformed reflect response: ") + e.what());
    }
    std::vector<RuleDraft> out;
    try {
        for (const auto& r : j.at("rules")) {
            RuleDraft d;
            d.text = r.at("text").get<std::string>();
            d.tags = r.at("tags").get<std::set<std::string>>();
            if (d.text.empty() || d.tags.empty())
                throw EngineError("reflect response rule missing text or tags");
            out.push_back(std::move(d));
            if (out.size() == 2) break; // at most two rules accepted
        }
    } catch (const json::exception& e) {
        throw EngineError(std::string("malformed reflect response: ") + e.what());
    }
    return out;
}

RemoteEngine::RemoteEngine(RemoteEngineConfig config) : config_(std::move(config)) {
    if (config_.endpoint.empty()) throw std::invalid_argument("remote engine endpoint empty");
}

std::string RemoteEngine::post_json(const std::string& path, const std::string& body) {
    httplib::Client client(config_.endpoint);
    const auto timeout = std::chrono::milliseconds(
        static_cast<long>(config_.timeout_sec * 1000.0));
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    if (!config_.auth_token.empty())
        client.set_default_headers({{"Authorization", "Bearer " + config_.auth_token}});

    std::string last_error;
    for (int attempt = 0; attempt <= config_.retries; ++attempt) {
        auto res = client.Post(path, body, "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status == 200) return res->body;
        last_error = "http status " + std::to_string(res->status) + ": " + res->body;
        if (res->status < 500) break; // no point retrying client errors
    }
    throw EngineError("remote engine " + path + " failed (" + last_error + ")");
}

JudgeResult RemoteEngine::judge(const JudgeContext& context) {
    const std::string body = post_json("/judge", judge_request_to_json(context));
    return judge_response_from_json(body, context.hypotheses.size());
}

std::vector<RuleDraft> RemoteEngine::reflect(const DiscrepancySummary& summary) {
    const std::string body = post_json("/reflect", reflect_request_to_json(summary));
    return reflect_response_from_json(body);
}

struct EngineServer::Impl {
    httplib::Server server;
    std::thread worker;
    std::shared_ptr<ScoringEngine> engine;
};

EngineServer::EngineServer(std::shared_ptr<ScoringEngine> engine, const std::string& host,
                           int port)
    : impl_(std::make_unique<Impl>()), host_(host) {
    impl_->engine = std::move(engine);

    impl_->server.Post("/judge", [this](const httplib::Request& req, httplib::Response& res) {
        try {
            const JudgeContext ctx = judge_request_from_json(req.body);
            const JudgeResult result = impl_->engine->judge(ctx);
            res.set_content(judge_response_to_json(result), "application/json");
        } catch (const std::exception& e) {
            res.status = 500;
            res.set_content(json{{"error", e.what()}}.dump(), "application/json");
        }
    });
    impl_->server.Post("/reflect", [this](const httplib::Request& req, httplib::Response& res) {
        try {
            const DiscrepancySummary summary = reflect_request_from_json(req.body);
            const auto rules = impl_->engine->reflect(summary);
            res.set_content(reflect_response_to_json(rules), "application/json");
        } catch (const std::exception& e) {
            res.status = 500;
            res.set_content(json{{"error", e.what()}}.dump(), "application/json");
        }
    });

    if (port == 0) {
        port_ = impl_->server.bind_to_any_port(host.c_str());
        if (port_ <= 0) throw std::runtime_error("engine server failed to bind");
    } else {
        if (!impl_->server.bind_to_port(host.c_str(), port))
            throw std::runtime_error("engine server failed to bind port " + std::to_string(port));
        port_ = port;
    }
    impl_->worker = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
}

EngineServer::~EngineServer() { stop(); }

void EngineServer::stop() {
    if (impl_ && impl_->worker.joinable()) {
        impl_->server.stop();
        impl_->worker.join();
    }
}

std::string EngineServer::endpoint() const {
    return "http://" + host_ + ":" + std::to_string(port_);
}

} // namespace gpa
