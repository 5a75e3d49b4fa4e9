#include "gpa/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "gpa/checkpoint.hpp"
#include "gpa/common.hpp"
#include "gpa/preference.hpp"
#include "gpa/stats.hpp"

namespace gpa {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::vector<std::string>& allowed,
                const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw std::invalid_argument("unknown config key '" + key + "' in " + where);
    }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

} // namespace

json config_to_json(const ExperimentConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["out_dir"] = c.out_dir;
    j["sampling_steps"] = c.sampling_steps;
    j["world"] = {{"joints", c.world.joints},
                  {"modes", c.world.modes},
                  {"depth_ambiguity", c.world.depth_ambiguity},
                  {"obs_noise_std", c.world.obs_noise_std},
                  {"mode_jitter", c.world.mode_jitter},
                  {"coord_bound", c.world.coord_bound},
                  {"train_size", c.world.train_size},
                  {"test_size", c.world.test_size}};
    j["schedule"] = {{"T", c.schedule.T},
                     {"beta_start", c.schedule.beta_start},
                     {"beta_end", c.schedule.beta_end}};
    j["reference"] = {{"steps", c.reference.steps},
                      {"batch", c.reference.batch},
                      {"lr", c.reference.lr},
                      {"temb_dim", c.reference.temb_dim},
                      {"hidden", c.reference.hidden}};
    j["agent"] = {{"top_k", c.agent.top_k},
                  {"max_rules", c.agent.max_rules},
                  {"ucb_c", c.agent.ucb_c},
                  {"tau", c.agent.tau},
                  {"seed_rules", c.agent.seed_rules},
                  {"explore_conditions", c.agent.explore_conditions},
                  {"explore_group", c.agent.explore_group},
                  {"explore_epochs", c.agent.explore_epochs},
                  {"engine",
                   {{"kind", c.agent.engine.kind},
                    {"score_slope", c.agent.engine.score_slope},
                    {"noise_std", c.agent.engine.noise_std},
                    {"endpoint", c.agent.engine.endpoint},
                    {"timeout_sec", c.agent.engine.timeout_sec},
                    {"retries", c.agent.engine.retries}}}};
    j["prefs"] = {{"group_size", c.prefs.group_size}, {"conditions", c.prefs.conditions}};
    j["alignment"] = {{"beta", c.alignment.beta},
                      {"batch_entries", c.alignment.batch_entries},
                      {"lr", c.alignment.lr},
                      {"epochs", c.alignment.epochs},
                      {"shared_draws", c.alignment.shared_draws},
                      {"dpo_beta", c.alignment.dpo_beta},
                      {"dpo_epochs", c.alignment.dpo_epochs},
                      {"sft_steps", c.alignment.sft_steps},
                      {"sft_batch", c.alignment.sft_batch},
                      {"sft_lr", c.alignment.sft_lr},
                      {"sft_label_noise", c.alignment.sft_label_noise}};
    j["evaluation"] = {{"m_values", c.evaluation.m_values},
                       {"conditions", c.evaluation.conditions},
                       {"pointwise_samples", c.evaluation.pointwise_samples},
                       {"groupwise_conditions", c.evaluation.groupwise_conditions},
                       {"groupwise_k", c.evaluation.groupwise_k}};
    return j;
}

ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    check_keys(j, {"seed", "out_dir", "sampling_steps", "world", "schedule", "reference", "agent",
                   "prefs", "alignment", "evaluation"},
               "config");
    read(j, "seed", c.seed);
    read(j, "out_dir", c.out_dir);
    read(j, "sampling_steps", c.sampling_steps);

    if (j.contains("world")) {
        const json& w = j.at("world");
        check_keys(w, {"joints", "modes", "depth_ambiguity", "obs_noise_std", "mode_jitter",
                       "coord_bound", "train_size", "test_size"},
                   "world");
        read(w, "joints", c.world.joints);
        read(w, "modes", c.world.modes);
        read(w, "depth_ambiguity", c.world.depth_ambiguity);
        read(w, "obs_noise_std", c.world.obs_noise_std);
        read(w, "mode_jitter", c.world.mode_jitter);
        read(w, "coord_bound", c.world.coord_bound);
        read(w, "train_size", c.world.train_size);
        read(w, "test_size", c.world.test_size);
    }
    if (j.contains("schedule")) {
        const json& s = j.at("schedule");
        check_keys(s, {"T", "beta_start", "beta_end"}, "schedule");
        read(s, "T", c.schedule.T);
        read(s, "beta_start", c.schedule.beta_start);
        read(s, "beta_end", c.schedule.beta_end);
    }
    if (j.contains("reference")) {
        const json& r = j.at("reference");
        check_keys(r, {"steps", "batch", "lr", "temb_dim", "hidden"}, "reference");
        read(r, "steps", c.reference.steps);
        read(r, "batch", c.reference.batch);
        read(r, "lr", c.reference.lr);
        read(r, "temb_dim", c.reference.temb_dim);
        read(r, "hidden", c.reference.hidden);
    }
    if (j.contains("agent")) {
        const json& a = j.at("agent");
        check_keys(a, {"top_k", "max_rules", "ucb_c", "tau", "seed_rules", "explore_conditions",
                       "explore_group", "explore_epochs", "engine"},
                   "agent");
        read(a, "top_k", c.agent.top_k);
        read(a, "max_rules", c.agent.max_rules);
        read(a, "ucb_c", c.agent.ucb_c);
        read(a, "tau", c.agent.tau);
        read(a, "seed_rules", c.agent.seed_rules);
        read(a, "explore_conditions", c.agent.explore_conditions);
        read(a, "explore_group", c.agent.explore_group);
        read(a, "explore_epochs", c.agent.explore_epochs);
        if (a.contains("engine")) {
            const json& e = a.at("engine");
            check_keys(e, {"kind", "score_slope", "noise_std", "endpoint", "timeout_sec",
                           "retries"},
                       "agent.engine");
            read(e, "kind", c.agent.engine.kind);
            read(e, "score_slope", c.agent.engine.score_slope);
            read(e, "noise_std", c.agent.engine.noise_std);
            read(e, "endpoint", c.agent.engine.endpoint);
            read(e, "timeout_sec", c.agent.engine.timeout_sec);
            read(e, "retries", c.agent.engine.retries);
        }
    }
    if (j.contains("prefs")) {
        const json& p = j.at("prefs");
        check_keys(p, {"group_size", "conditions"}, "prefs");
        read(p, "group_size", c.prefs.group_size);
        read(p, "conditions", c.prefs.conditions);
    }
    if (j.contains("alignment")) {
        const json& a = j.at("alignment");
        check_keys(a, {"beta", "batch_entries", "lr", "epochs", "shared_draws", "dpo_beta",
                       "dpo_epochs", "sft_steps", "sft_batch", "sft_lr", "sft_label_noise"},
                   "alignment");
        read(a, "beta", c.alignment.beta);
        read(a, "batch_entries", c.alignment.batch_entries);
        read(a, "lr", c.alignment.lr);
        read(a, "epochs", c.alignment.epochs);
        read(a, "shared_draws", c.alignment.shared_draws);
        read(a, "dpo_beta", c.alignment.dpo_beta);
        read(a, "dpo_epochs", c.alignment.dpo_epochs);
        read(a, "sft_steps", c.alignment.sft_steps);
        read(a, "sft_batch", c.alignment.sft_batch);
        read(a, "sft_lr", c.alignment.sft_lr);
        read(a, "sft_label_noise", c.alignment.sft_label_noise);
    }
    if (j.contains("evaluation")) {
        const json& e = j.at("evaluation");
        check_keys(e, {"m_values", "conditions", "pointwise_samples", "groupwise_conditions",
                       "groupwise_k"},
                   "evaluation");
        read(e, "m_values", c.evaluation.m_values);
        read(e, "conditions", c.evaluation.conditions);
        read(e, "pointwise_samples", c.evaluation.pointwise_samples);
        read(e, "groupwise_conditions", c.evaluation.groupwise_conditions);
        read(e, "groupwise_k", c.evaluation.groupwise_k);
    }

    // The world seed is derived from the experiment seed.
    c.world.seed = derive_seed(c.seed, fnv1a64("world"));
    return c;
}

ExperimentConfig load_config_file(const std::string& path) {
    return config_from_json(json::parse(read_file(path)));
}

std::string config_hash_hex(const ExperimentConfig& config) {
    return to_hex(fnv1a64(config_to_json(config).dump()));
}

std::string world_hash_hex(const ExperimentConfig& config) {
    json j = config_to_json(config).at("world");
    j["seed"] = config.world.seed;
    return to_hex(fnv1a64(j.dump()));
}

std::string schedule_hash_hex(const ExperimentConfig& config) {
    return to_hex(fnv1a64(config_to_json(config).at("schedule").dump()));
}

ArtifactPaths::ArtifactPaths(const std::string& out_dir) : dir_(out_dir) {
    world_train = dir_ + "/world_train.jsonl";
    world_test = dir_ + "/world_test.jsonl";
    ref_checkpoint = dir_ + "/ref.ckpt.json";
    ref_train_log = dir_ + "/ref_train_log.json";
    agent_memory = dir_ + "/agent_memory.json";
    exploration_report = dir_ + "/exploration_report.json";
    agent_eval = dir_ + "/agent_eval.json";
    prefs = dir_ + "/prefs.jsonl";
    report_json = dir_ + "/report.json";
    report_md = dir_ + "/report.md";
}

std::string ArtifactPaths::aligned_checkpoint(const std::string& mode) const {
    return dir_ + "/aligned_" + mode + ".ckpt.json";
}
std::string ArtifactPaths::align_report(const std::string& mode) const {
    return dir_ + "/align_" + mode + "_report.json";
}
std::string ArtifactPaths::eval_result(const std::string& model) const {
    return dir_ + "/eval_" + model + ".json";
}

NoiseSchedule make_schedule(const ExperimentConfig& config) {
    return make_linear_schedule(config.schedule.T, config.schedule.beta_start,
                                config.schedule.beta_end);
}

std::shared_ptr<ScoringEngine> make_engine(const ExperimentConfig& config,
                                           const std::vector<WorldSample>& gt_samples) {
    const EngineSettings& e = config.agent.engine;
    if (e.kind == "oracle") {
        OracleEngineConfig ocfg;
        ocfg.score_slope = e.score_slope;
        ocfg.noise_std = e.noise_std;
        ocfg.seed = derive_seed(config.seed, fnv1a64("engine"));
        auto engine = std::make_shared<OracleEngine>(ocfg);
        engine->register_ground_truth(gt_samples);
        return engine;
    }
    if (e.kind == "remote") {
        RemoteEngineConfig rcfg;
        rcfg.endpoint = e.endpoint;
        if (const char* env = std::getenv("GPA_ENGINE_ENDPOINT")) rcfg.endpoint = env;
        if (const char* env = std::getenv("GPA_ENGINE_TOKEN")) rcfg.auth_token = env;
        rcfg.timeout_sec = e.timeout_sec;
        rcfg.retries = e.retries;
        return std::make_shared<RemoteEngine>(rcfg);
    }
    throw std::invalid_argument("unknown engine kind: " + e.kind);
}

namespace {

json artifact_meta(const ExperimentConfig& config) {
    return json{{"config_hash", config_hash_hex(config)},
                {"world_hash", world_hash_hex(config)},
                {"schedule_hash", schedule_hash_hex(config)},
                {"seed", config.seed},
                {"version", std::string(kVersion)}};
}

AgentConfig agent_core_config(const ExperimentConfig& config) {
    AgentConfig a;
    a.top_k_prototypes = config.agent.top_k;
    a.max_rules = config.agent.max_rules;
    a.ucb_c = config.agent.ucb_c;
    a.spearman_tau = config.agent.tau;
    return a;
}

DenoiserConfig denoiser_config(const ExperimentConfig& config) {
    DenoiserConfig d;
    d.pose_dim = 3 * config.world.joints;
    d.cond_dim = 2 * config.world.joints;
    d.temb_dim = config.reference.temb_dim;
    d.hidden = config.reference.hidden;
    return d;
}

std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>> to_pairs(
    const std::vector<WorldSample>& samples) {
    std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.emplace_back(s.pose.coords, s.condition.encode());
    return out;
}

DenoiserParameters load_params(const std::string& path) {
    return load_checkpoint(path).params;
}

json correlation_json(const std::optional<double>& v) {
    return v.has_value() ? json(*v) : json(nullptr);
}

} // namespace

void cmd_gen_world(const ExperimentConfig& config) {
    std::filesystem::create_directories(config.out_dir);
    const ArtifactPaths paths(config.out_dir);
    const auto [train, test] = make_splits(config.world);
    save_world_jsonl(paths.world_train, train, config.world, "train", config_hash_hex(config));
    save_world_jsonl(paths.world_test, test, config.world, "test", config_hash_hex(config));
    std::printf("gen-world: %zu train / %zu test samples -> %s\n", train.size(), test.size(),
                config.out_dir.c_str());
}

void cmd_train_ref(const ExperimentConfig& config) {
    const ArtifactPaths paths(config.out_dir);
    const auto train = load_world_jsonl(paths.world_train);
    const NoiseSchedule sched = make_schedule(config);

    ReferenceTrainConfig rt;
    rt.steps = config.reference.steps;
    rt.batch = config.reference.batch;
    rt.lr = config.reference.lr;
    rt.seed = derive_seed(config.seed, fnv1a64("train-ref"));

    std::vector<TrainLogEntry> log;
    const DenoiserParameters params =
        train_reference(to_pairs(train), sched, denoiser_config(config), rt, &log);

    Checkpoint ckpt;
    ckpt.params = params;
    ckpt.rng_seed = rt.seed;
    ckpt.schedule_id = sched.id;
    ckpt.config_hash = config_hash_hex(config);
    save_checkpoint(paths.ref_checkpoint, ckpt);

    json jlog;
    jlog["meta"] = artifact_meta(config);
    json entries = json::array();
    for (const auto& e : log) entries.push_back(json{{"step", e.step}, {"loss", e.loss}});
    jlog["loss_by_step"] = entries;
    write_file(paths.ref_train_log, jlog.dump(2));
    std::printf("train-ref: %d steps, final loss %.6f -> %s\n", rt.steps,
                log.empty() ? 0.0 : log.back().loss, paths.ref_checkpoint.c_str());
}

void cmd_explore_agent(const ExperimentConfig& config) {
    const ArtifactPaths paths(config.out_dir);
    const auto train = load_world_jsonl(paths.world_train);
    const NoiseSchedule sched = make_schedule(config);
    const DenoiserParameters ref = load_params(paths.ref_checkpoint);

    MemoryStore memory;
    if (config.agent.seed_rules)
        for (const auto& d : seed_rule_drafts()) memory.add_rule(d.text, d.tags);
    CritiqueAgent agent(make_engine(config, train), agent_core_config(config), std::move(memory));

    const int n = std::min<int>(config.agent.explore_conditions,
                                static_cast<int>(train.size()));
    std::vector<ExplorationItem> batch(static_cast<std::size_t>(n));
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
        const WorldSample& s = train[i];
        const auto group = generate_group(ref, sched, config.sampling_steps, s.condition.encode(),
                                          config.agent.explore_group,
                                          derive_seed(config.seed, fnv1a64("explore"), i));
        ExplorationItem item;
        item.condition = s.condition;
        for (const auto& h : group) item.hypotheses.push_back(ToyPose{h});
        item.ground_truth = s.pose;
        batch[i] = std::move(item);
    });

    json epochs = json::array();
    for (int epoch = 0; epoch < config.agent.explore_epochs; ++epoch) {
        const ExplorationReport r = agent.exploration_step(batch, config.agent.tau);
        epochs.push_back(json{{"epoch", epoch},
                              {"groups", r.groups},
                              {"prototypes_added", r.prototypes_added},
                              {"rules_added", r.rules_added},
                              {"successes", r.successes},
                              {"undefined_groups", r.undefined_groups},
                              {"mean_spearman", r.mean_spearman}});
        std::printf("explore-agent: epoch %d mean spearman %.4f, +%d rules, +%d prototypes\n",
                    epoch, r.mean_spearman, r.rules_added, r.prototypes_added);
    }
    agent.freeze();
    agent.save(paths.agent_memory);

    json jr;
    jr["meta"] = artifact_meta(config);
    jr["epochs"] = epochs;
    jr["rules"] = agent.memory().rules().size();
    jr["prototypes"] = agent.memory().prototypes().size();
    write_file(paths.exploration_report, jr.dump(2));
}

void cmd_eval_agent(const ExperimentConfig& config) {
    const ArtifactPaths paths(config.out_dir);
    const auto test = load_world_jsonl(paths.world_test);
    const NoiseSchedule sched = make_schedule(config);
    const DenoiserParameters ref = load_params(paths.ref_checkpoint);
    CritiqueAgent agent =
        CritiqueAgent::load(paths.agent_memory, make_engine(config, test), agent_core_config(config));
    if (!agent.frozen()) throw std::runtime_error("agent memory must be frozen for evaluation");

    const double slope = config.agent.engine.score_slope;

    // Point-wise protocol: graded perturbations of held-out poses, scored
    // one at a time; even indices fit the calibration, odd indices score it.
    const std::vector<double> levels{0.05, 0.1, 0.2, 0.4, 0.8};
    const int np = std::min<int>(config.evaluation.pointwise_samples,
                                 static_cast<int>(test.size()));
    std::vector<double> raw(static_cast<std::size_t>(np)), target(static_cast<std::size_t>(np));
    for (int i = 0; i < np; ++i) {
        const WorldSample& s = test[static_cast<std::size_t>(i)];
        Rng rng(derive_seed(config.seed, fnv1a64("pointwise"), static_cast<std::uint64_t>(i)));
        ToyPose perturbed = s.pose;
        const double level = levels[static_cast<std::size_t>(i) % levels.size()];
        for (int k = 0; k < perturbed.coords.size(); ++k)
            perturbed.coords(k) += level * rng.normal();
        const Assessment a = agent.score_group(s.condition, {perturbed});
        raw[static_cast<std::size_t>(i)] = a.scores[0];
        target[static_cast<std::size_t>(i)] = 100.0 - slope * mpjpe(perturbed, s.pose);
    }
    std::vector<double> calib_raw, calib_target, eval_raw, eval_target;
    for (int i = 0; i < np; ++i) {
        if (i % 2 == 0) {
            calib_raw.push_back(raw[static_cast<std::size_t>(i)]);
            calib_target.push_back(target[static_cast<std::size_t>(i)]);
        } else {
            eval_raw.push_back(raw[static_cast<std::size_t>(i)]);
            eval_target.push_back(target[static_cast<std::size_t>(i)]);
        }
    }
    const AffineCalibration cal = fit_calibration(calib_raw, calib_target);
    std::vector<double> eval_calibrated(eval_raw);
    for (auto& v : eval_calibrated) v = cal.apply(v);
    const CorrelationReport pointwise = correlation_report(eval_calibrated, eval_target);

    // Group-wise protocol: score K reference-model hypotheses per
    // condition, correlate within each group, average across groups.
    const int ng = std::min<int>(config.evaluation.groupwise_conditions,
                                 static_cast<int>(test.size()));
    const int k = std::max(2, config.evaluation.groupwise_k);
    double srcc_sum = 0.0, krcc_sum = 0.0, plcc_sum = 0.0;
    int defined = 0, undefined = 0;
    for (int i = 0; i < ng; ++i) {
        const WorldSample& s = test[static_cast<std::size_t>(i)];
        const auto group =
            generate_group(ref, sched, config.sampling_steps, s.condition.encode(), k,
                           derive_seed(config.seed, fnv1a64("groupwise"), static_cast<std::uint64_t>(i)));
        std::vector<ToyPose> hyps;
        for (const auto& h : group) hyps.push_back(ToyPose{h});
        const Assessment a = agent.score_group(s.condition, hyps);
        std::vector<double> quality;
        for (const auto& h : hyps) quality.push_back(-mpjpe(h, s.pose));
        const CorrelationReport r = correlation_report(a.scores, quality);
        if (r.srcc && r.krcc && r.plcc) {
            srcc_sum += *r.srcc;
            krcc_sum += *r.krcc;
            plcc_sum += *r.plcc;
            defined += 1;
        } else {
            undefined += 1;
        }
    }

    json j;
    j["meta"] = artifact_meta(config);
    j["pointwise"] = {{"n", pointwise.n},
                      {"plcc", correlation_json(pointwise.plcc)},
                      {"srcc", correlation_json(pointwise.srcc)},
                      {"krcc", correlation_json(pointwise.krcc)},
                      {"calibration", {{"a", cal.scale}, {"b", cal.shift}}}};
    j["groupwise"] = {{"groups", ng},
                      {"defined", defined},
                      {"undefined", undefined},
                      {"k", k},
                      {"mean_srcc", defined ? json(srcc_sum / defined) : json(nullptr)},
                      {"mean_krcc", defined ? json(krcc_sum / defined) : json(nullptr)},
                      {"mean_plcc", defined ? json(plcc_sum / defined) : json(nullptr)}};
    write_file(paths.agent_eval, j.dump(2));
    std::printf("eval-agent: pointwise srcc %.4f | groupwise mean srcc %.4f (%d/%d defined)\n",
                pointwise.srcc.value_or(0.0), defined ? srcc_sum / defined : 0.0, defined, ng);
}

void cmd_build_prefs(const ExperimentConfig& config) {
    const ArtifactPaths paths(config.out_dir);
    const auto train = load_world_jsonl(paths.world_train);
    const NoiseSchedule sched = make_schedule(config);
    const DenoiserParameters ref = load_params(paths.ref_checkpoint);
    CritiqueAgent agent = CritiqueAgent::load(paths.agent_memory, make_engine(config, train),
                                              agent_core_config(config));

    const int n = config.prefs.conditions > 0
                      ? std::min<int>(config.prefs.conditions, static_cast<int>(train.size()))
                      : static_cast<int>(train.size());
    std::vector<Condition> conditions;
    conditions.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) conditions.push_back(train[static_cast<std::size_t>(i)].condition);

    const PreferenceDataset ds =
        build_dataset(ref, sched, config.sampling_steps, agent, conditions,
                      config.prefs.group_size, derive_seed(config.seed, fnv1a64("prefs")),
                      config_hash_hex(config));
    save_preference_jsonl(paths.prefs, ds);

    int degenerate = 0;
    for (const auto& e : ds.entries) degenerate += e.degenerate ? 1 : 0;
    std::printf("build-prefs: %zu groups of %d (%d degenerate) -> %s\n", ds.entries.size(),
                config.prefs.group_size, degenerate, paths.prefs.c_str());
}

namespace {

void save_align_artifacts(const ExperimentConfig& config, const std::string& mode,
                          const DenoiserParameters& params, const TrainingReport& report,
                          std::uint64_t run_seed) {
    const ArtifactPaths paths(config.out_dir);
    Checkpoint ckpt;
    ckpt.params = params;
    ckpt.rng_seed = run_seed;
    ckpt.schedule_id = make_schedule(config).id;
    ckpt.config_hash = config_hash_hex(config);
    save_checkpoint(paths.aligned_checkpoint(mode), ckpt);

    json j;
    j["meta"] = artifact_meta(config);
    j["mode"] = mode;
    json steps = json::array();
    for (const auto& s : report.steps)
        steps.push_back(json{{"step", s.step}, {"loss", s.loss}, {"mean_gap", s.mean_gap}});
    j["steps"] = steps;
    json snaps = json::array();
    for (const auto& s : report.snapshots)
        snaps.push_back(json{{"step", s.step}, {"min_of_10_mpjpe", s.value}});
    j["snapshots"] = snaps;
    write_file(paths.align_report(mode), j.dump(2));
}

} // namespace

void cmd_align(const ExperimentConfig& config, const std::string& mode) {
    const ArtifactPaths paths(config.out_dir);
    const NoiseSchedule sched = make_schedule(config);
    const DenoiserParameters ref = load_params(paths.ref_checkpoint);
    const std::uint64_t run_seed = derive_seed(config.seed, fnv1a64("align-" + mode));

    if (mode == "sft") {
        const auto train = load_world_jsonl(paths.world_train);
        FinetuneConfig fcfg;
        fcfg.steps = config.alignment.sft_steps;
        fcfg.batch = config.alignment.sft_batch;
        fcfg.lr = config.alignment.sft_lr;
        fcfg.label_noise_std = config.alignment.sft_label_noise;
        fcfg.seed = run_seed;
        TrainingReport report;
        const DenoiserParameters tuned =
            supervised_finetune(ref, to_pairs(train), sched, fcfg, &report);
        save_align_artifacts(config, mode, tuned, report, run_seed);
        std::printf("align(sft): %d steps -> %s\n", fcfg.steps,
                    paths.aligned_checkpoint(mode).c_str());
        return;
    }

    const PreferenceDataset ds = load_preference_jsonl(paths.prefs);
    const int entries = static_cast<int>(ds.entries.size());
    const int per_epoch =
        (entries + config.alignment.batch_entries - 1) / std::max(1, config.alignment.batch_entries);

    AlignmentConfig acfg;
    acfg.beta = config.alignment.beta;
    acfg.batch_entries = config.alignment.batch_entries;
    acfg.lr = config.alignment.lr;
    acfg.shared_draws = config.alignment.shared_draws;
    acfg.dpo_beta = config.alignment.dpo_beta;
    acfg.seed = run_seed;

    TrainingReport report;
    DenoiserParameters tuned;
    if (mode == "group") {
        acfg.steps = per_epoch * config.alignment.epochs;
        tuned = align(ref, ds, sched, acfg, &report);
    } else if (mode == "dpo") {
        acfg.steps = per_epoch * config.alignment.dpo_epochs;
        tuned = align_dpo(ref, ds, sched, acfg, &report);
    } else {
        throw std::invalid_argument("unknown align mode: " + mode);
    }
    save_align_artifacts(config, mode, tuned, report, run_seed);
    std::printf("align(%s): %d steps -> %s\n", mode.c_str(), acfg.steps,
                paths.aligned_checkpoint(mode).c_str());
}

std::vector<MinOfMRow> evaluate_min_of_m(const DenoiserParameters& params,
                                         const NoiseSchedule& sched, int sampling_steps,
                                         const std::vector<WorldSample>& test,
                                         const std::vector<int>& m_values, std::uint64_t seed) {
    if (m_values.empty()) throw std::invalid_argument("no M values");
    if (test.empty()) throw std::invalid_argument("empty test set");
    const int max_m = std::max(2, *std::max_element(m_values.begin(), m_values.end()));

    // Per-condition metric arrays for nested min-of-M evaluation.
    std::vector<std::vector<double>> mpjpe_all(test.size()), pa_all(test.size());
    parallel_for(test.size(), [&](std::size_t i) {
        const WorldSample& s = test[i];
        const auto group = generate_group(params, sched, sampling_steps, s.condition.encode(),
                                          max_m, derive_seed(seed, i));
        mpjpe_all[i].reserve(group.size());
        pa_all[i].reserve(group.size());
        for (const auto& h : group) {
            const ToyPose hyp{h};
            mpjpe_all[i].push_back(mpjpe(hyp, s.pose));
            pa_all[i].push_back(pa_mpjpe(hyp, s.pose));
        }
    });

    std::vector<MinOfMRow> rows;
    for (int m : m_values) {
        const int take = std::min(m, max_m);
        MinOfMRow row;
        row.m = m;
        for (std::size_t i = 0; i < test.size(); ++i) {
            row.mpjpe_mean += *std::min_element(mpjpe_all[i].begin(), mpjpe_all[i].begin() + take);
            row.pa_mpjpe_mean += *std::min_element(pa_all[i].begin(), pa_all[i].begin() + take);
        }
        row.mpjpe_mean /= static_cast<double>(test.size());
        row.pa_mpjpe_mean /= static_cast<double>(test.size());
        rows.push_back(row);
    }
    return rows;
}

void cmd_evaluate(const ExperimentConfig& config, const std::string& model) {
    const ArtifactPaths paths(config.out_dir);
    const NoiseSchedule sched = make_schedule(config);
    const std::string ckpt_path =
        model == "ref" ? paths.ref_checkpoint : paths.aligned_checkpoint(model);
    const DenoiserParameters params = load_params(ckpt_path);

    auto test = load_world_jsonl(paths.world_test);
    if (config.evaluation.conditions > 0 &&
        static_cast<int>(test.size()) > config.evaluation.conditions)
        test.resize(static_cast<std::size_t>(config.evaluation.conditions));

    const auto rows =
        evaluate_min_of_m(params, sched, config.sampling_steps, test, config.evaluation.m_values,
                          derive_seed(config.seed, fnv1a64("evaluate-" + model)));

    json j;
    j["meta"] = artifact_meta(config);
    j["model"] = model;
    j["checkpoint"] = ckpt_path;
    j["conditions"] = test.size();
    json table = json::array();
    for (const auto& r : rows) {
        table.push_back(
            json{{"m", r.m}, {"mpjpe", r.mpjpe_mean}, {"pa_mpjpe", r.pa_mpjpe_mean}});
        std::printf("evaluate(%s): min-of-%d mpjpe %.4f, pa-mpjpe %.4f\n", model.c_str(), r.m,
                    r.mpjpe_mean, r.pa_mpjpe_mean);
    }
    j["min_of_m"] = table;
    write_file(paths.eval_result(model), j.dump(2));
}

void cmd_report(const ExperimentConfig& config) {
    const ArtifactPaths paths(config.out_dir);

    json report;
    report["meta"] = artifact_meta(config);

    std::string world_hash, schedule_hash;
    auto check_meta = [&](const json& j, const std::string& name) {
        const json& meta = j.at("meta");
        const std::string w = meta.at("world_hash").get<std::string>();
        const std::string s = meta.at("schedule_hash").get<std::string>();
        if (world_hash.empty()) {
            world_hash = w;
            schedule_hash = s;
        } else if (w != world_hash || s != schedule_hash) {
            throw std::runtime_error("artifact " + name +
                                     " was produced under a different world/schedule");
        }
    };

    json models = json::object();
    for (const std::string model : {"ref", "group", "dpo", "sft"}) {
        const std::string path = paths.eval_result(model);
        if (!std::filesystem::exists(path)) continue;
        const json j = json::parse(read_file(path));
        check_meta(j, path);
        models[model] = j.at("min_of_m");
    }
    report["min_of_m"] = models;

    if (std::filesystem::exists(paths.agent_eval)) {
        const json j = json::parse(read_file(paths.agent_eval));
        check_meta(j, paths.agent_eval);
        report["agent"] = {{"pointwise", j.at("pointwise")}, {"groupwise", j.at("groupwise")}};
    }

    // Directional ablation at the smallest evaluated M.
    auto min_mpjpe_at = [&](const std::string& model, int m) -> std::optional<double> {
        if (!models.contains(model)) return std::nullopt;
        for (const auto& row : models.at(model))
            if (row.at("m").get<int>() == m) return row.at("mpjpe").get<double>();
        return std::nullopt;
    };
    const int m0 = *std::min_element(config.evaluation.m_values.begin(),
                                     config.evaluation.m_values.end());
    const auto ref_v = min_mpjpe_at("ref", m0);
    const auto group_v = min_mpjpe_at("group", m0);
    const auto dpo_v = min_mpjpe_at("dpo", m0);
    if (ref_v && group_v) {
        json ablation;
        ablation["m"] = m0;
        ablation["reference_mpjpe"] = *ref_v;
        ablation["group_mpjpe"] = *group_v;
        if (dpo_v) ablation["dpo_mpjpe"] = *dpo_v;
        ablation["group_vs_reference_improvement"] = (*ref_v - *group_v) / *ref_v;
        ablation["ordering_group_best"] =
            dpo_v ? (*group_v < *dpo_v && *dpo_v < *ref_v) : (*group_v < *ref_v);
        report["ablation"] = ablation;
    }

    write_file(paths.report_json, report.dump(2));

    // Markdown tables.
    std::ostringstream md;
    md << "# Experiment report\n\n";
    md << "seed " << config.seed << ", config " << config_hash_hex(config) << ", "
       << kVersion << "\n\n";
    md << "## Min-of-M metrics (held-out)\n\n";
    md << "| model | M | MPJPE | PA-MPJPE |\n|---|---|---|---|\n";
    for (const auto& [model, table] : models.items()) {
        for (const auto& row : table) {
            char buf[128];
            std::snprintf(buf, sizeof(buf), "| %s | %d | %.4f | %.4f |\n", model.c_str(),
                          row.at("m").get<int>(), row.at("mpjpe").get<double>(),
                          row.at("pa_mpjpe").get<double>());
            md << buf;
        }
    }
    if (report.contains("agent")) {
        const json& a = report.at("agent");
        md << "\n## Critique agent\n\n";
        md << "| protocol | PLCC | SRCC | KRCC |\n|---|---|---|---|\n";
        char buf[160];
        const json& p = a.at("pointwise");
        auto num = [](const json& v) { return v.is_null() ? 0.0 : v.get<double>(); };
        std::snprintf(buf, sizeof(buf), "| point-wise | %.4f | %.4f | %.4f |\n",
                      num(p.at("plcc")), num(p.at("srcc")), num(p.at("krcc")));
        md << buf;
        const json& g = a.at("groupwise");
        std::snprintf(buf, sizeof(buf), "| group-wise (mean) | %.4f | %.4f | %.4f |\n",
                      num(g.at("mean_plcc")), num(g.at("mean_srcc")), num(g.at("mean_krcc")));
        md << buf;
    }
    if (report.contains("ablation")) {
        const json& ab = report.at("ablation");
        md << "\n## Ablation (min-of-" << ab.at("m").get<int>() << " MPJPE)\n\n";
        char buf[200];
        std::snprintf(buf, sizeof(buf),
                      "reference %.4f, group %.4f (%.1f%% better)%s\n",
                      ab.at("reference_mpjpe").get<double>(), ab.at("group_mpjpe").get<double>(),
                      100.0 * ab.at("group_vs_reference_improvement").get<double>(),
                      ab.contains("dpo_mpjpe") ? "" : " [dpo not evaluated]");
        md << buf;
        if (ab.contains("dpo_mpjpe")) {
            std::snprintf(buf, sizeof(buf), "dpo %.4f; ordering group < dpo < reference: %s\n",
                          ab.at("dpo_mpjpe").get<double>(),
                          ab.at("ordering_group_best").get<bool>() ? "yes" : "no");
            md << buf;
        }
    }
    write_file(paths.report_md, md.str());
    std::printf("report -> %s\n", paths.report_json.c_str());
}

void cmd_run_all(const ExperimentConfig& config) {
    cmd_gen_world(config);
    cmd_train_ref(config);
    cmd_explore_agent(config);
    cmd_eval_agent(config);
    cmd_build_prefs(config);
    cmd_align(config, "group");
    cmd_align(config, "dpo");
    cmd_align(config, "sft");
    for (const std::string model : {"ref", "group", "dpo", "sft"}) cmd_evaluate(config, model);
    cmd_report(config);
}

} // namespace gpa
