#include "gpa/preference.hpp"

#include <nlohmann/json.hpp>
#include <sstream>
#include <stdexcept>

#include "gpa/common.hpp"
#include "gpa/stats.hpp"

namespace gpa {

using nlohmann::json;

std::vector<Eigen::VectorXd> generate_group(const DenoiserParameters& ref_params,
                                            const NoiseSchedule& sched, int ddim_steps,
                                            const Eigen::VectorXd& condition, int group_size,
                                            std::uint64_t base_seed) {
    if (group_size < 2) throw std::invalid_argument("group size must be >= 2");
    const int dim = ref_params.config.pose_dim;

    Eigen::MatrixXd noise(dim, group_size);
    for (int g = 0; g < group_size; ++g) {
        Rng rng(base_seed + static_cast<std::uint64_t>(g));
        for (int i = 0; i < dim; ++i) noise(i, g) = rng.normal();
    }
    const Eigen::MatrixXd samples =
        ddim_sample_group(ref_params, condition, noise, sched, ddim_steps);

    std::vector<Eigen::VectorXd> out;
    out.reserve(static_cast<std::size_t>(group_size));
    for (int g = 0; g < group_size; ++g) out.push_back(samples.col(g));
    return out;
}

PreferenceDataset build_dataset(const DenoiserParameters& ref_params, const NoiseSchedule& sched,
                                int ddim_steps, CritiqueAgent& agent,
                                const std::vector<Condition>& conditions, int group_size,
                                std::uint64_t seed, const std::string& config_hash) {
    if (conditions.empty()) throw std::invalid_argument("no conditions to annotate");
    if (!agent.frozen()) throw std::runtime_error("agent must be frozen for annotation");

    const std::uint64_t ref_checksum = params_checksum(ref_params);

    PreferenceDataset dataset;
    dataset.entries.resize(conditions.size());

    // Generation fans out across conditions; each group owns a disjoint
    // seed range, so the result is independent of scheduling.
    parallel_for(conditions.size(), [&](std::size_t i) {
        GroupPreferenceEntry& entry = dataset.entries[i];
        entry.condition = conditions[i].encode();
        entry.seed = seed + static_cast<std::uint64_t>(i) * static_cast<std::uint64_t>(group_size);
        entry.hypotheses = generate_group(ref_params, sched, ddim_steps, entry.condition,
                                          group_size, entry.seed);
    });

    // Scoring is sequential: remote engines own their own rate limits.
    for (std::size_t i = 0; i < conditions.size(); ++i) {
        GroupPreferenceEntry& entry = dataset.entries[i];
        std::vector<ToyPose> hyps;
        hyps.reserve(entry.hypotheses.size());
        for (const auto& h : entry.hypotheses) hyps.push_back(ToyPose{h});
        const Assessment assessment = agent.score_group(conditions[i], hyps);
        entry.scores = assessment.scores;
        entry.degenerate = advantages(entry.scores).degenerate;
    }

    if (params_checksum(ref_params) != ref_checksum)
        throw std::logic_error("reference parameters mutated during dataset build");

    dataset.provenance.reference_checkpoint_id = to_hex(ref_checksum);
    dataset.provenance.agent_memory_id = to_hex(agent.memory_checksum());
    dataset.provenance.engine_kind = agent.engine().kind();
    dataset.provenance.gt_free = !agent.engine().uses_ground_truth();
    dataset.provenance.group_size = group_size;
    dataset.provenance.ddim_steps = ddim_steps;
    dataset.provenance.base_seed = seed;
    dataset.provenance.schedule_id = sched.id;
    dataset.provenance.config_hash = config_hash;
    return dataset;
}

namespace {

std::vector<double> to_vec(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd from_vec(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

} // namespace

void save_preference_jsonl(const std::string& path, const PreferenceDataset& dataset) {
    std::ostringstream out;
    const DatasetProvenance& p = dataset.provenance;
    json header;
    header["provenance"] = {
        {"kind", "group-preference-dataset"},
        {"reference_checkpoint_id", p.reference_checkpoint_id},
        {"agent_memory_id", p.agent_memory_id},
        {"engine_kind", p.engine_kind},
        {"gt_free", p.gt_free},
        {"group_size", p.group_size},
        {"ddim_steps", p.ddim_steps},
        {"base_seed", p.base_seed},
        {"schedule_id", p.schedule_id},
        {"config_hash", p.config_hash},
        {"version", std::string(kVersion)},
    };
    out << header.dump() << "\n";
    for (const auto& e : dataset.entries) {
        json rec;
        rec["condition"] = to_vec(e.condition);
        json hyps = json::array();
        for (const auto& h : e.hypotheses) hyps.push_back(to_vec(h));
        rec["hypotheses"] = hyps;
        rec["scores"] = e.scores;
        rec["seed"] = e.seed;
        rec["degenerate"] = e.degenerate;
        out << rec.dump() << "\n";
    }
    write_file(path, out.str());
}

PreferenceDataset load_preference_jsonl(const std::string& path) {
    std::istringstream in(read_file(path));
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty dataset file: " + path);
    const json header = json::parse(line);
    const json& p = header.at("provenance");

    PreferenceDataset dataset;
    dataset.provenance.reference_checkpoint_id = p.at("reference_checkpoint_id").get<std::string>();
    dataset.provenance.agent_memory_id = p.at("agent_memory_id").get<std::string>();
    dataset.provenance.engine_kind = p.at("engine_kind").get<std::string>();
    dataset.provenance.gt_free = p.at("gt_free").get<bool>();
    dataset.provenance.group_size = p.at("group_size").get<int>();
    dataset.provenance.ddim_steps = p.at("ddim_steps").get<int>();
    dataset.provenance.base_seed = p.at("base_seed").get<std::uint64_t>();
    dataset.provenance.schedule_id = p.at("schedule_id").get<std::string>();
    dataset.provenance.config_hash = p.value("config_hash", "");

    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json rec = json::parse(line);
        GroupPreferenceEntry e;
        e.condition = from_vec(rec.at("condition").get<std::vector<double>>());
        for (const auto& h : rec.at("hypotheses"))
            e.hypotheses.push_back(from_vec(h.get<std::vector<double>>()));
        e.scores = rec.at("scores").get<std::vector<double>>();
        e.seed = rec.at("seed").get<std::uint64_t>();
        e.degenerate = rec.at("degenerate").get<bool>();
        if (e.hypotheses.size() != e.scores.size() ||
            static_cast<int>(e.hypotheses.size()) != dataset.provenance.group_size)
            throw std::runtime_error("corrupt dataset entry: group size mismatch");
        dataset.entries.push_back(std::move(e));
    }
    return dataset;
}

} // namespace gpa
