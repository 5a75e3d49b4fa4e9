#include "gpa/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include "gpa/common.hpp"

namespace gpa {

using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

json tensor_to_json(const DenseTensor& t) {
    return json{{"shape", t.shape}, {"data", t.data}};
}

DenseTensor tensor_from_json(const json& j) {
    DenseTensor t;
    t.shape = j.at("shape").get<std::vector<std::size_t>>();
    t.data = j.at("data").get<std::vector<double>>();
    t.validate();
    return t;
}

json moments_to_json(const std::vector<Eigen::MatrixXd>& mw,
                     const std::vector<Eigen::VectorXd>& mb) {
    json arr = json::array();
    for (std::size_t l = 0; l < mw.size(); ++l) {
        DenseTensor w;
        w.shape = {static_cast<std::size_t>(mw[l].rows()), static_cast<std::size_t>(mw[l].cols())};
        w.data.assign(mw[l].data(), mw[l].data() + mw[l].size());
        DenseTensor b;
        b.shape = {static_cast<std::size_t>(mb[l].size())};
        b.data.assign(mb[l].data(), mb[l].data() + mb[l].size());
        arr.push_back(json{{"w", tensor_to_json(w)}, {"b", tensor_to_json(b)}});
    }
    return arr;
}

void moments_from_json(const json& arr, std::vector<Eigen::MatrixXd>& mw,
                       std::vector<Eigen::VectorXd>& mb) {
    if (arr.size() != mw.size()) throw std::invalid_argument("optimizer layer count mismatch");
    for (std::size_t l = 0; l < mw.size(); ++l) {
        const DenseTensor w = tensor_from_json(arr[l].at("w"));
        const DenseTensor b = tensor_from_json(arr[l].at("b"));
        if (w.shape[0] != static_cast<std::size_t>(mw[l].rows()) ||
            w.shape[1] != static_cast<std::size_t>(mw[l].cols()))
            throw std::invalid_argument("optimizer moment shape mismatch");
        std::copy(w.data.begin(), w.data.end(), mw[l].data());
        std::copy(b.data.begin(), b.data.end(), mb[l].data());
    }
}

} // namespace

std::string checkpoint_to_json(const Checkpoint& c) {
    json j;
    j["format_version"] = kFormatVersion;
    j["version"] = c.version.empty() ? std::string(kVersion) : c.version;
    j["rng_seed"] = c.rng_seed;
    j["schedule_id"] = c.schedule_id;
    j["config_hash"] = c.config_hash;

    json d;
    d["pose_dim"] = c.params.config.pose_dim;
    d["cond_dim"] = c.params.config.cond_dim;
    d["temb_dim"] = c.params.config.temb_dim;
    d["hidden"] = c.params.config.hidden;
    d["activation"] = activation_name(c.params.config.activation);
    json layers = json::array();
    const auto tensors = c.params.to_tensors();
    for (std::size_t l = 0; l < c.params.layer_count(); ++l) {
        layers.push_back(json{{"w", tensor_to_json(tensors[2 * l])},
                              {"b", tensor_to_json(tensors[2 * l + 1])}});
    }
    d["layers"] = layers;
    j["denoiser"] = d;

    if (c.optimizer) {
        json o;
        o["step"] = c.optimizer->step;
        o["m"] = moments_to_json(c.optimizer->m_weights, c.optimizer->m_biases);
        o["v"] = moments_to_json(c.optimizer->v_weights, c.optimizer->v_biases);
        j["optimizer"] = o;
    }
    return j.dump();
}

Checkpoint checkpoint_from_json(const std::string& text) {
    const json j = json::parse(text);
    if (j.at("format_version").get<int>() != kFormatVersion)
        throw std::runtime_error("unsupported checkpoint format version");

    Checkpoint c;
    c.version = j.value("version", "");
    c.rng_seed = j.at("rng_seed").get<std::uint64_t>();
    c.schedule_id = j.at("schedule_id").get<std::string>();
    c.config_hash = j.value("config_hash", "");

    const json& d = j.at("denoiser");
    DenoiserConfig cfg;
    cfg.pose_dim = d.at("pose_dim").get<int>();
    cfg.cond_dim = d.at("cond_dim").get<int>();
    cfg.temb_dim = d.at("temb_dim").get<int>();
    cfg.hidden = d.at("hidden").get<std::vector<int>>();
    cfg.activation = activation_from_name(d.at("activation").get<std::string>());
    c.params = DenoiserParameters::zeros(cfg);

    std::vector<DenseTensor> tensors;
    for (const auto& layer : d.at("layers")) {
        tensors.push_back(tensor_from_json(layer.at("w")));
        tensors.push_back(tensor_from_json(layer.at("b")));
    }
    c.params.from_tensors(tensors);

    if (j.contains("optimizer")) {
        OptimizerState s = OptimizerState::zeros_like(c.params);
        const json& o = j.at("optimizer");
        s.step = o.at("step").get<std::int64_t>();
        moments_from_json(o.at("m"), s.m_weights, s.m_biases);
        moments_from_json(o.at("v"), s.v_weights, s.v_biases);
        c.optimizer = std::move(s);
    }
    return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
    write_file(path, checkpoint_to_json(c));
}

Checkpoint load_checkpoint(const std::string& path) {
    return checkpoint_from_json(read_file(path));
}

} // namespace gpa
