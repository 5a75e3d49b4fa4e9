#include "gpa/world.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <nlohmann/json.hpp>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "gpa/common.hpp"

namespace gpa {

using nlohmann::json;

ToyPose depth_twin(const ToyPose& pose) {
    ToyPose out = pose;
    for (int j = 0; j < out.joints(); ++j) out.coords(3 * j + 2) = -out.coords(3 * j + 2);
    return out;
}

Condition project(const ToyPose& pose, double noise_std, Rng& rng) {
    const int J = pose.joints();
    Condition c;
    c.noise_std = noise_std;
    c.observed.resize(2 * J);
    for (int j = 0; j < J; ++j) {
        c.observed(2 * j) = pose.coords(3 * j);
        c.observed(2 * j + 1) = pose.coords(3 * j + 1);
    }
    if (noise_std > 0.0) {
        for (int i = 0; i < c.observed.size(); ++i) c.observed(i) += noise_std * rng.normal();
    }
    return c;
}

ToyWorld::ToyWorld(WorldConfig config) : config_(std::move(config)) {
    if (config_.joints < 3 || config_.modes < 1 || config_.obs_noise_std < 0.0 ||
        config_.mode_jitter < 0.0)
        throw std::invalid_argument("invalid world config");

    // Mode anchors are part of the world identity, derived from the seed.
    // Depth coordinates stay away from zero so mirrored twins are distinct.
    Rng rng(derive_seed(config_.seed, fnv1a64("world-anchors")));
    anchors_.reserve(static_cast<std::size_t>(config_.modes));
    for (int m = 0; m < config_.modes; ++m) {
        ToyPose anchor;
        anchor.coords.resize(3 * config_.joints);
        for (int j = 0; j < config_.joints; ++j) {
            anchor.coords(3 * j) = rng.uniform(-1.0, 1.0);
            anchor.coords(3 * j + 1) = rng.uniform(-1.0, 1.0);
            anchor.coords(3 * j + 2) = rng.uniform(0.4, 1.2);
        }
        anchors_.push_back(std::move(anchor));
    }
}

ToyWorld::PoseDraw ToyWorld::sample_pose(Rng& rng) const {
    PoseDraw draw;
    draw.mode = static_cast<int>(rng.uniform_int(0, config_.modes - 1));
    draw.pose = anchors_[static_cast<std::size_t>(draw.mode)];
    for (int i = 0; i < draw.pose.coords.size(); ++i)
        draw.pose.coords(i) += config_.mode_jitter * rng.normal();
    if (config_.depth_ambiguity && rng.uniform_int(0, 1) == 1) {
        draw.twin = 1;
        draw.pose = depth_twin(draw.pose);
    }
    return draw;
}

WorldSample ToyWorld::sample(std::uint64_t sample_seed) const {
    Rng rng(sample_seed);
    WorldSample s;
    PoseDraw draw = sample_pose(rng);
    s.pose = std::move(draw.pose);
    s.condition = project(s.pose, config_.obs_noise_std, rng);
    s.meta = {draw.mode, draw.twin, sample_seed};
    return s;
}

double mpjpe(const ToyPose& pred, const ToyPose& gt) {
    if (pred.joints() != gt.joints() || pred.coords.size() != gt.coords.size())
        throw std::invalid_argument("joint count mismatch");
    double total = 0.0;
    for (int j = 0; j < pred.joints(); ++j) total += (pred.joint(j) - gt.joint(j)).norm();
    return total / pred.joints();
}

ToyPose procrustes_align(const ToyPose& pred, const ToyPose& gt) {
    const int J = pred.joints();
    if (J != gt.joints()) throw std::invalid_argument("joint count mismatch");
    if (J < 3) throw std::invalid_argument("need at least 3 joints");

    Eigen::Matrix3Xd P(3, J), G(3, J);
    for (int j = 0; j < J; ++j) {
        P.col(j) = pred.joint(j);
        G.col(j) = gt.joint(j);
    }
    const Eigen::Vector3d mu_p = P.rowwise().mean();
    const Eigen::Vector3d mu_g = G.rowwise().mean();
    P.colwise() -= mu_p;
    G.colwise() -= mu_g;

    const double var_p = P.squaredNorm() / J;

    // Collinear or collapsed point sets leave the rotation underdetermined.
    auto rank2_check = [](const Eigen::Matrix3Xd& M) {
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
        const auto& sv = svd.singularValues();
        return sv(1) > 1e-9 * (sv(0) + 1e-300);
    };
    if (var_p <= 0.0 || !rank2_check(P) || !rank2_check(G))
        throw std::runtime_error("rank-deficient alignment");

    const Eigen::Matrix3d cov = G * P.transpose() / J;
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Vector3d d = Eigen::Vector3d::Ones();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2) = -1.0;

    const Eigen::Matrix3d rot = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
    const double scale = svd.singularValues().dot(d) / var_p;
    const Eigen::Vector3d trans = mu_g - scale * rot * mu_p;

    ToyPose aligned;
    aligned.coords.resize(3 * J);
    for (int j = 0; j < J; ++j)
        aligned.set_joint(j, scale * rot * pred.joint(j) + trans);
    return aligned;
}

double pa_mpjpe(const ToyPose& pred, const ToyPose& gt) {
    return mpjpe(procrustes_align(pred, gt), gt);
}

double min_of_m(const std::vector<ToyPose>& preds, const ToyPose& gt, const PoseMetric& metric) {
    if (preds.empty()) throw std::invalid_argument("empty prediction list");
    double best = metric(preds[0], gt);
    for (std::size_t i = 1; i < preds.size(); ++i) best = std::min(best, metric(preds[i], gt));
    return best;
}

std::pair<std::vector<WorldSample>, std::vector<WorldSample>> make_splits(
    const WorldConfig& config) {
    if (config.train_size < 1 || config.test_size < 1)
        throw std::invalid_argument("split sizes must be >= 1");
    const ToyWorld world(config);

    auto generate = [&](std::string_view split, int count) {
        std::vector<WorldSample> out(static_cast<std::size_t>(count));
        const std::uint64_t split_seed = derive_seed(config.seed, fnv1a64(split));
        parallel_for(out.size(), [&](std::size_t i) {
            out[i] = world.sample(derive_seed(split_seed, i));
        });
        return out;
    };
    auto train = generate("train-split", config.train_size);
    auto test = generate("test-split", config.test_size);

    // Exact pose collisions across splits would defeat the held-out set.
    std::unordered_set<std::uint64_t> train_keys;
    train_keys.reserve(train.size());
    for (const auto& s : train)
        train_keys.insert(fnv1a64(s.pose.coords.data(),
                                  static_cast<std::size_t>(s.pose.coords.size()) * sizeof(double)));
    for (const auto& s : test) {
        const std::uint64_t k = fnv1a64(
            s.pose.coords.data(), static_cast<std::size_t>(s.pose.coords.size()) * sizeof(double));
        if (train_keys.count(k)) throw std::runtime_error("train/test pose overlap");
    }
    return {std::move(train), std::move(test)};
}

namespace {

std::vector<double> to_vec(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

Eigen::VectorXd from_vec(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

} // namespace

void save_world_jsonl(const std::string& path, const std::vector<WorldSample>& samples,
                      const WorldConfig& config, const std::string& split,
                      const std::string& config_hash) {
    std::ostringstream out;
    json header;
    header["provenance"] = {
        {"kind", "world-dataset"},
        {"split", split},
        {"joints", config.joints},
        {"modes", config.modes},
        {"depth_ambiguity", config.depth_ambiguity},
        {"obs_noise_std", config.obs_noise_std},
        {"mode_jitter", config.mode_jitter},
        {"coord_bound", config.coord_bound},
        {"seed", config.seed},
        {"config_hash", config_hash},
        {"version", std::string(kVersion)},
    };
    out << header.dump() << "\n";
    for (const auto& s : samples) {
        json rec;
        rec["pose"] = to_vec(s.pose.coords);
        rec["condition"] = to_vec(s.condition.observed);
        rec["meta"] = {{"mode", s.meta.mode}, {"twin_id", s.meta.twin}, {"seed", s.meta.seed}};
        out << rec.dump() << "\n";
    }
    write_file(path, out.str());
}

std::vector<WorldSample> load_world_jsonl(const std::string& path) {
    std::istringstream in(read_file(path));
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty dataset file: " + path);
    const json header = json::parse(line);
    const double noise_std = header.at("provenance").at("obs_noise_std").get<double>();

    std::vector<WorldSample> samples;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json rec = json::parse(line);
        WorldSample s;
        s.pose.coords = from_vec(rec.at("pose").get<std::vector<double>>());
        s.condition.observed = from_vec(rec.at("condition").get<std::vector<double>>());
        s.condition.noise_std = noise_std;
        const json& meta = rec.at("meta");
        s.meta.mode = meta.at("mode").get<int>();
        s.meta.twin = meta.at("twin_id").get<int>();
        s.meta.seed = meta.at("seed").get<std::uint64_t>();
        samples.push_back(std::move(s));
    }
    return samples;
}

} // namespace gpa
