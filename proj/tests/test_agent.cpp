#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "gpa/agent.hpp"
#include "gpa/common.hpp"
#include "gpa/embedding.hpp"
#include "gpa/memory.hpp"
#include "gpa/rng.hpp"

using namespace gpa;

namespace {

Eigen::VectorXd unit_vec(Rng& rng, int n) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = rng.normal();
    return v / v.norm();
}

WorldConfig agent_world() {
    WorldConfig cfg;
    cfg.joints = 8;
    cfg.modes = 4;
    cfg.train_size = 30;
    cfg.test_size = 5;
    cfg.obs_noise_std = 0.0;
    cfg.seed = 31;
    return cfg;
}

// A frozen world sample plus a few perturbed hypotheses around it.
struct GroupFixture {
    Condition condition;
    ToyPose gt;
    std::vector<ToyPose> hypotheses;
};

GroupFixture make_group(const ToyWorld& world, std::uint64_t seed, int count,
                        double noise = 0.35) {
    GroupFixture f;
    const WorldSample s = world.sample(seed);
    f.condition = s.condition;
    f.gt = s.pose;
    Rng rng(derive_seed(seed, 555));
    for (int i = 0; i < count; ++i) {
        ToyPose h = s.pose;
        const double level = noise * static_cast<double>(i) / std::max(1, count - 1);
        for (int k = 0; k < h.coords.size(); ++k) h.coords(k) += level * rng.normal();
        f.hypotheses.push_back(std::move(h));
    }
    return f;
}

std::shared_ptr<OracleEngine> make_oracle(const ToyWorld& world,
                                          const std::vector<std::uint64_t>& seeds,
                                          double noise_std = 0.0) {
    OracleEngineConfig cfg;
    cfg.score_slope = 10.0;
    cfg.noise_std = noise_std;
    cfg.seed = 2024;
    auto engine = std::make_shared<OracleEngine>(cfg);
    for (auto s : seeds) {
        const WorldSample ws = world.sample(s);
        engine->register_ground_truth(ws.condition, ws.pose);
    }
    return engine;
}

} // namespace

TEST_CASE("embed_hypothesis: deterministic unit vectors") {
    const ToyWorld world(agent_world());
    const WorldSample s = world.sample(1);
    const Eigen::VectorXd a = embed_hypothesis(s.condition, s.pose);
    const Eigen::VectorXd b = embed_hypothesis(s.condition, s.pose);
    CHECK(a == b);
    CHECK(std::abs(a.norm() - 1.0) < 1e-9);
}

TEST_CASE("embed_hypothesis: cosine falls monotonically with reprojection residual") {
    const ToyWorld world(agent_world());
    const WorldSample s = world.sample(2);
    const Eigen::VectorXd base = embed_hypothesis(s.condition, s.pose);

    double prev_cos = 1.0 + 1e-12;
    for (int k = 1; k <= 10; ++k) {
        ToyPose shifted = s.pose;
        for (int j = 0; j < shifted.joints(); ++j) shifted.coords(3 * j) += 0.05 * k;
        const double cos = base.dot(embed_hypothesis(s.condition, shifted));
        CHECK(cos < prev_cos);
        prev_cos = cos;
    }
}

TEST_CASE("relevance: set intersections") {
    CHECK(relevance({"a", "b", "c"}, {"b", "c", "d"}) == 2);
    CHECK(relevance({"a"}, {"b"}) == 0);
    CHECK(relevance({"a", "b", "c"}, {"a", "b", "c"}) == 3);
}

TEST_CASE("ucb_score: pinned values") {
    Rule fresh;
    fresh.use_count = 0;
    fresh.success_count = 0;
    CHECK(ucb_score(fresh, 1, 1.0) == 0.0); // ln 1 = 0

    Rule seasoned;
    seasoned.use_count = 4;
    seasoned.success_count = 3;
    const double expect = 0.75 + std::sqrt(std::log(101.0) / 5.0);
    CHECK(ucb_score(seasoned, 101, 1.0) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(expect == doctest::Approx(1.7107).epsilon(1e-4));
    CHECK(ucb_score(seasoned, 101, 0.0) == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("select_rules: relevance dominates with equal counters") {
    MemoryStore store;
    const auto hit = store.add_rule("match", {"x", "y"});
    const auto miss = store.add_rule("mismatch", {"z"});
    const auto top = select_rules(store, {"x", "y"}, 1.0, 1);
    REQUIRE(top.size() == 1);
    CHECK(top[0].id == hit);
    CHECK(top[0].id != miss);
}

TEST_CASE("select_rules: exploration bonus prefers the less-used rule") {
    MemoryStore store;
    const auto seldom = store.add_rule("seldom", {"t"});
    const auto often = store.add_rule("often", {"t"});
    // Equal success rates (1/2), unequal use counts.
    for (int i = 0; i < 2; ++i) store.record_use(std::vector<std::int64_t>{seldom});
    store.record_success(std::vector<std::int64_t>{seldom});
    for (int i = 0; i < 8; ++i) store.record_use(std::vector<std::int64_t>{often});
    for (int i = 0; i < 4; ++i) store.record_success(std::vector<std::int64_t>{often});

    const auto ranked = select_rules(store, {"t"}, 1.0, 2);
    REQUIRE(ranked.size() == 2);
    CHECK(ranked[0].id == seldom);
}

TEST_CASE("select_rules: matches exhaustive ranking on random stores") {
    Rng rng(41);
    const std::vector<std::string> vocab{"a", "b", "c", "d", "e"};
    MemoryStore store;
    for (int i = 0; i < 100; ++i) {
        std::set<std::string> tags;
        const int k = static_cast<int>(rng.uniform_int(1, 3));
        while (static_cast<int>(tags.size()) < k)
            tags.insert(vocab[static_cast<std::size_t>(rng.uniform_int(0, 4))]);
        const auto id = store.add_rule("rule " + std::to_string(i), tags);
        const int uses = static_cast<int>(rng.uniform_int(0, 12));
        for (int u = 0; u < uses; ++u) store.record_use(std::vector<std::int64_t>{id});
        const int wins = static_cast<int>(rng.uniform_int(0, uses));
        for (int w = 0; w < wins; ++w) store.record_success(std::vector<std::int64_t>{id});
    }

    const std::set<std::string> query{"a", "c"};
    const double c = 1.3;
    const auto got = select_rules(store, query, c, 7);

    // Exhaustive psi computation with the same tie rule.
    std::vector<std::pair<double, std::int64_t>> psi;
    for (const auto& r : store.rules())
        psi.emplace_back(relevance(query, r.tags) + ucb_score(r, store.n_total(), c), r.id);
    std::sort(psi.begin(), psi.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    REQUIRE(got.size() == 7);
    for (int i = 0; i < 7; ++i) CHECK(got[static_cast<std::size_t>(i)].id == psi[static_cast<std::size_t>(i)].second);
}

TEST_CASE("retrieve_prototypes: exact-match first, short stores, brute-force parity") {
    Rng rng(42);
    MemoryStore store;
    std::vector<Eigen::VectorXd> embeddings;
    for (int i = 0; i < 200; ++i) {
        embeddings.push_back(unit_vec(rng, 16));
        store.add_prototype(embeddings.back(), make_rationale(50.0, "p"), {"t"});
    }

    const auto hit = retrieve_prototypes(store, embeddings[57], 1);
    REQUIRE(hit.size() == 1);
    CHECK(hit[0].id == 57);

    MemoryStore two;
    two.add_prototype(unit_vec(rng, 16), make_rationale(1.0, "a"), {"t"});
    two.add_prototype(unit_vec(rng, 16), make_rationale(2.0, "b"), {"t"});
    CHECK(retrieve_prototypes(two, unit_vec(rng, 16), 5).size() == 2);

    const Eigen::VectorXd query = unit_vec(rng, 16);
    const auto got = retrieve_prototypes(store, query, 10);
    std::vector<std::pair<double, std::int64_t>> sims;
    for (const auto& p : store.prototypes()) sims.emplace_back(query.dot(p.embedding), p.id);
    std::sort(sims.begin(), sims.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    REQUIRE(got.size() == 10);
    for (int i = 0; i < 10; ++i) CHECK(got[static_cast<std::size_t>(i)].id == sims[static_cast<std::size_t>(i)].second);
}

TEST_CASE("memory: counters and freeze semantics") {
    MemoryStore store;
    const auto id = store.add_rule("r", {"t"});
    store.record_use(std::vector<std::int64_t>{id});
    CHECK(store.n_total() == 2); // 1 + sum(use)
    store.record_success(std::vector<std::int64_t>{id});
    CHECK(store.rules()[0].success_count == 1);
    // Crediting past the use count is a bookkeeping bug.
    CHECK_THROWS_AS(store.record_success(std::vector<std::int64_t>{id}), std::logic_error);

    store.freeze();
    CHECK_THROWS_WITH_AS(store.add_rule("x", {"t"}), "memory frozen", std::runtime_error);
    CHECK_THROWS_WITH_AS(store.record_use(std::vector<std::int64_t>{id}), "memory frozen",
                         std::runtime_error);
}

TEST_CASE("memory: persistence round trip is bit-exact") {
    Rng rng(43);
    MemoryStore store;
    for (int i = 0; i < 5; ++i) {
        const auto id = store.add_rule("rule " + std::to_string(i), {"a", "b"});
        for (int u = 0; u <= i; ++u) store.record_use(std::vector<std::int64_t>{id});
    }
    for (int i = 0; i < 7; ++i)
        store.add_prototype(unit_vec(rng, 12), make_rationale(10.0 * i, "note"), {"q"});
    store.freeze();

    AffineCalibration cal{1.25, -3.5};
    const std::string text = memory_to_json(store, cal);
    auto [back, cal_back] = memory_from_json(text);
    CHECK(memory_to_json(back, cal_back) == text);
    CHECK(back.frozen());
    REQUIRE(cal_back.has_value());
    CHECK(cal_back->scale == 1.25);
    CHECK(back.prototypes()[3].embedding == store.prototypes()[3].embedding);
}

TEST_CASE("oracle engine: ground truth scores 100, ranking follows mpjpe") {
    const ToyWorld world(agent_world());
    auto engine = make_oracle(world, {11});
    const WorldSample s = world.sample(11);

    GroupFixture f = make_group(world, 11, 4);
    f.hypotheses[0] = s.pose; // exact ground truth
    JudgeContext ctx;
    ctx.condition = f.condition.encode();
    for (const auto& h : f.hypotheses) ctx.hypotheses.push_back(h.coords);
    const JudgeResult r = engine->judge(ctx);
    REQUIRE(r.scores.size() == 4);
    CHECK(r.scores[0] == 100.0);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            if (mpjpe(f.hypotheses[i], s.pose) < mpjpe(f.hypotheses[j], s.pose))
                CHECK(r.scores[i] > r.scores[j]);
}

TEST_CASE("agent: frozen scoring is pure and repeatable") {
    const ToyWorld world(agent_world());
    auto engine = make_oracle(world, {21}, 5.0);
    CritiqueAgent agent(engine);
    agent.freeze();

    const GroupFixture f = make_group(world, 21, 6);
    const std::uint64_t checksum = agent.memory_checksum();
    const Assessment a = agent.score_group(f.condition, f.hypotheses);
    const Assessment b = agent.score_group(f.condition, f.hypotheses);
    CHECK(a.scores == b.scores);
    CHECK(a.critiques == b.critiques);
    CHECK(agent.memory_checksum() == checksum);
    for (double s : a.scores) {
        CHECK(s >= 0.0);
        CHECK(s <= 100.0);
    }
}

TEST_CASE("agent: unfrozen scoring counts rule usage once per group") {
    const ToyWorld world(agent_world());
    auto engine = make_oracle(world, {22});
    MemoryStore memory;
    for (const auto& d : seed_rule_drafts()) memory.add_rule(d.text, d.tags);
    CritiqueAgent agent(engine, {}, std::move(memory));

    const GroupFixture f = make_group(world, 22, 5);
    const Assessment a = agent.score_group(f.condition, f.hypotheses);
    CHECK(!a.rule_ids.empty());
    for (auto id : a.rule_ids) CHECK(agent.memory().find_rule(id)->use_count == 1);
}

TEST_CASE("agent: exploration with a perfect oracle credits every applied rule") {
    const ToyWorld world(agent_world());
    std::vector<std::uint64_t> seeds{101, 102, 103, 104, 105, 106};
    auto engine = make_oracle(world, seeds, 0.0);
    MemoryStore memory;
    for (const auto& d : seed_rule_drafts()) memory.add_rule(d.text, d.tags);
    CritiqueAgent agent(engine, {}, std::move(memory));

    std::vector<ExplorationItem> batch;
    for (auto s : seeds) {
        const GroupFixture f = make_group(world, s, 5);
        batch.push_back({f.condition, f.hypotheses, f.gt});
    }
    const ExplorationReport report = agent.exploration_step(batch, 0.6);

    CHECK(report.groups == 6);
    CHECK(report.prototypes_added == 2 * 6);
    CHECK(report.rules_added <= 2 * 6);
    CHECK(report.successes == 6); // perfect oracle ranks exactly
    CHECK(report.mean_spearman == doctest::Approx(1.0).epsilon(1e-12));
    for (const auto& r : agent.memory().rules()) CHECK(r.success_count == r.use_count);
    CHECK(agent.memory().prototypes().size() == 12);
}

TEST_CASE("agent: constant engine scores give undefined rank agreement, no credit") {
    struct ConstantEngine : ScoringEngine {
        JudgeResult judge(const JudgeContext& ctx) override {
            return {std::vector<double>(ctx.hypotheses.size(), 50.0),
                    std::vector<std::string>(ctx.hypotheses.size(), "flat")};
        }
        std::vector<RuleDraft> reflect(const DiscrepancySummary&) override {
            return {{"spread the scores", {"mid-quality"}}};
        }
        std::string kind() const override { return "constant"; }
        bool uses_ground_truth() const override { return false; }
    };

    const ToyWorld world(agent_world());
    MemoryStore memory;
    for (const auto& d : seed_rule_drafts()) memory.add_rule(d.text, d.tags);
    CritiqueAgent agent(std::make_shared<ConstantEngine>(), {}, std::move(memory));

    const GroupFixture f = make_group(world, 300, 5);
    const ExplorationReport report =
        agent.exploration_step({{f.condition, f.hypotheses, f.gt}}, 0.6);
    CHECK(report.undefined_groups == 1);
    CHECK(report.successes == 0);
    for (const auto& r : agent.memory().rules()) CHECK(r.success_count == 0);
}

TEST_CASE("agent: freeze stops exploration but not scoring; freeze is idempotent") {
    const ToyWorld world(agent_world());
    auto engine = make_oracle(world, {31});
    CritiqueAgent agent(engine);
    agent.freeze();
    agent.freeze();
    CHECK(agent.frozen());

    const GroupFixture f = make_group(world, 31, 4);
    CHECK_THROWS_WITH_AS(agent.exploration_step({{f.condition, f.hypotheses, f.gt}}, 0.6),
                         "memory frozen", std::runtime_error);
    const std::uint64_t checksum = agent.memory_checksum();
    CHECK_NOTHROW(agent.score_group(f.condition, f.hypotheses));
    CHECK(agent.memory_checksum() == checksum);
}

TEST_CASE("agent: calibration is applied to subsequent assessments") {
    const ToyWorld world(agent_world());
    auto engine = make_oracle(world, {41});
    CritiqueAgent agent(engine);
    agent.freeze();

    const GroupFixture f = make_group(world, 41, 3);
    const Assessment raw = agent.score_group(f.condition, f.hypotheses);

    // A pure shift: fit to targets = raw + 5.
    std::vector<double> target(raw.scores);
    for (auto& t : target) t += 5.0;
    const AffineCalibration cal = agent.calibrate(raw.scores, target);
    CHECK(cal.scale == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(cal.shift == doctest::Approx(5.0).epsilon(1e-9));

    const Assessment adjusted = agent.score_group(f.condition, f.hypotheses);
    for (std::size_t i = 0; i < raw.scores.size(); ++i) {
        const double expect = std::min(100.0, raw.scores[i] + 5.0);
        CHECK(adjusted.scores[i] == doctest::Approx(expect).epsilon(1e-9));
    }
}

TEST_CASE("agent: save/load preserves memory bit-exactly") {
    const ToyWorld world(agent_world());
    std::vector<std::uint64_t> seeds{51, 52, 53};
    auto engine = make_oracle(world, seeds);
    MemoryStore memory;
    for (const auto& d : seed_rule_drafts()) memory.add_rule(d.text, d.tags);
    CritiqueAgent agent(engine, {}, std::move(memory));
    std::vector<ExplorationItem> batch;
    for (auto s : seeds) {
        const GroupFixture f = make_group(world, s, 4);
        batch.push_back({f.condition, f.hypotheses, f.gt});
    }
    agent.exploration_step(batch, 0.6);
    agent.freeze();

    const auto dir = std::filesystem::temp_directory_path() / "gpa_agent_test";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "memory.json").string();
    agent.save(path);
    const CritiqueAgent back = CritiqueAgent::load(path, engine);
    CHECK(back.memory_checksum() == agent.memory_checksum());
    CHECK(back.frozen());
    std::filesystem::remove_all(dir);
}

TEST_CASE("bandit property: every rule tried within 200 rounds") {
    MemoryStore store;
    std::vector<std::int64_t> ids;
    for (int i = 0; i < 10; ++i) ids.push_back(store.add_rule("arm " + std::to_string(i), {"t"}));

    // Fixed success pattern: arms 0..4 always succeed, 5..9 never do.
    std::set<std::int64_t> tried;
    for (int round = 0; round < 200; ++round) {
        const auto pick = select_rules(store, {"t"}, 1.0, 1);
        REQUIRE(pick.size() == 1);
        const std::int64_t id = pick[0].id;
        tried.insert(id);
        store.record_use(std::vector<std::int64_t>{id});
        if (id < 5) store.record_success(std::vector<std::int64_t>{id});
    }
    CHECK(tried.size() == 10);
}
