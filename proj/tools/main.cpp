#include "gpa/experiment.hpp"

#include <CLI11.hpp>
#include <csignal>
#include <cstdio>
#include <thread>

#include "gpa/common.hpp"

namespace {

volatile std::sig_atomic_t g_stop = 0;
void handle_signal(int) { g_stop = 1; }

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Group preference alignment for a diffusion pose lifter"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir_override;
    std::uint64_t seed_override = 0;
    bool seed_set = false;
    app.add_option("-c,--config", config_path, "JSON config file (defaults used when absent)");
    app.add_option("-o,--out", out_dir_override, "output directory override");
    app.add_option("-s,--seed", seed_override, "seed override")->each([&](const std::string&) {
        seed_set = true;
    });

    auto* gen_world = app.add_subcommand("gen-world", "generate the synthetic datasets");
    auto* train_ref = app.add_subcommand("train-ref", "train the reference denoiser");
    auto* explore = app.add_subcommand("explore-agent", "run agent exploration and save memory");
    auto* eval_agent = app.add_subcommand("eval-agent", "point-wise and group-wise scorer evaluation");
    auto* build_prefs = app.add_subcommand("build-prefs", "build the group preference dataset");

    auto* align_cmd = app.add_subcommand("align", "finetune from the preference dataset");
    std::string align_mode = "group";
    align_cmd->add_option("-m,--mode", align_mode, "group | dpo | sft")
        ->check(CLI::IsMember({"group", "dpo", "sft"}));

    auto* evaluate = app.add_subcommand("evaluate", "min-of-M metrics for a checkpoint");
    std::string eval_model = "ref";
    evaluate->add_option("-m,--model", eval_model, "ref | group | dpo | sft")
        ->check(CLI::IsMember({"ref", "group", "dpo", "sft"}));

    auto* report = app.add_subcommand("report", "aggregate artifacts into report.json/report.md");
    auto* run_all = app.add_subcommand("run-all", "full pipeline in dependency order");

    auto* serve = app.add_subcommand("serve-engine", "serve the configured oracle engine over HTTP");
    int serve_port = 8080;
    std::string serve_split = "train";
    serve->add_option("-p,--port", serve_port, "port to bind (default 8080)");
    serve->add_option("--split", serve_split, "world split whose ground truth the oracle sees")
        ->check(CLI::IsMember({"train", "test", "both"}));

    CLI11_PARSE(app, argc, argv);

    try {
        gpa::ExperimentConfig config = config_path.empty()
                                           ? gpa::config_from_json(nlohmann::json::object())
                                           : gpa::load_config_file(config_path);
        if (!out_dir_override.empty()) config.out_dir = out_dir_override;
        if (seed_set) {
            nlohmann::json j = gpa::config_to_json(config);
            j["seed"] = seed_override;
            config = gpa::config_from_json(j); // re-derive dependent seeds
        }

        if (gen_world->parsed()) gpa::cmd_gen_world(config);
        if (train_ref->parsed()) gpa::cmd_train_ref(config);
        if (explore->parsed()) gpa::cmd_explore_agent(config);
        if (eval_agent->parsed()) gpa::cmd_eval_agent(config);
        if (build_prefs->parsed()) gpa::cmd_build_prefs(config);
        if (align_cmd->parsed()) gpa::cmd_align(config, align_mode);
        if (evaluate->parsed()) gpa::cmd_evaluate(config, eval_model);
        if (report->parsed()) gpa::cmd_report(config);
        if (run_all->parsed()) gpa::cmd_run_all(config);

        if (serve->parsed()) {
            const gpa::ArtifactPaths paths(config.out_dir);
            std::vector<gpa::WorldSample> samples;
            if (serve_split == "train" || serve_split == "both") {
                const auto t = gpa::load_world_jsonl(paths.world_train);
                samples.insert(samples.end(), t.begin(), t.end());
            }
            if (serve_split == "test" || serve_split == "both") {
                const auto t = gpa::load_world_jsonl(paths.world_test);
                samples.insert(samples.end(), t.begin(), t.end());
            }
            auto engine = gpa::make_engine(config, samples);
            gpa::EngineServer server(engine, "127.0.0.1", serve_port);
            std::printf("engine server listening on %s (%zu conditions registered)\n",
                        server.endpoint().c_str(), samples.size());
            std::signal(SIGINT, handle_signal);
            std::signal(SIGTERM, handle_signal);
            while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
            server.stop();
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
