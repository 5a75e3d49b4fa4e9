#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "gpa/rng.hpp"

namespace gpa {

// J joints in 3D, flattened row-major (x0,y0,z0, x1,y1,z1, ...); this flat
// vector is the diffusion state.
struct ToyPose {
    Eigen::VectorXd coords;

    int joints() const { return static_cast<int>(coords.size()) / 3; }
    Eigen::Vector3d joint(int j) const { return coords.segment<3>(3 * j); }
    void set_joint(int j, const Eigen::Vector3d& p) { coords.segment<3>(3 * j) = p; }
};

// 2D observation of a pose: orthographic projection plus isotropic noise.
// `observed` (length 2J) is the conditioning vector fed to the denoiser.
struct Condition {
    Eigen::VectorXd observed;
    double noise_std = 0.0;

    const Eigen::VectorXd& encode() const { return observed; }
    Eigen::Vector2d point(int j) const { return observed.segment<2>(2 * j); }
};

struct WorldConfig {
    int joints = 8;
    int modes = 4;
    bool depth_ambiguity = true;
    double obs_noise_std = 0.02;
    double mode_jitter = 0.12;
    double coord_bound = 2.0;
    int train_size = 2000;
    int test_size = 200;
    std::uint64_t seed = 0;
};

struct SampleMeta {
    int mode = 0;
    int twin = 0;
    std::uint64_t seed = 0;
};

struct WorldSample {
    ToyPose pose;
    Condition condition;
    SampleMeta meta;
};

// Flip every joint's depth; projects identically under orthographic view.
ToyPose depth_twin(const ToyPose& pose);

Condition project(const ToyPose& pose, double noise_std, Rng& rng);

// Synthetic pose distribution: a finite mixture of jittered mode anchors;
// with depth ambiguity on, each mode has a mirrored-depth twin.
class ToyWorld {
public:
    explicit ToyWorld(WorldConfig config);

    const WorldConfig& config() const { return config_; }
    const std::vector<ToyPose>& anchors() const { return anchors_; }

    struct PoseDraw {
        ToyPose pose;
        int mode = 0;
        int twin = 0;
    };
    PoseDraw sample_pose(Rng& rng) const;

    WorldSample sample(std::uint64_t sample_seed) const;

private:
    WorldConfig config_;
    std::vector<ToyPose> anchors_;
};

double mpjpe(const ToyPose& pred, const ToyPose& gt);

// Similarity (rotation + uniform scale + translation) alignment of pred
// onto gt minimizing total squared error, with a reflection guard.
ToyPose procrustes_align(const ToyPose& pred, const ToyPose& gt);

double pa_mpjpe(const ToyPose& pred, const ToyPose& gt);

using PoseMetric = std::function<double(const ToyPose&, const ToyPose&)>;

double min_of_m(const std::vector<ToyPose>& preds, const ToyPose& gt, const PoseMetric& metric);

// Seeded disjoint train/test splits.
std::pair<std::vector<WorldSample>, std::vector<WorldSample>> make_splits(const WorldConfig& config);

// JSON Lines: a provenance header line followed by one record per sample.
void save_world_jsonl(const std::string& path, const std::vector<WorldSample>& samples,
                      const WorldConfig& config, const std::string& split,
                      const std::string& config_hash);
std::vector<WorldSample> load_world_jsonl(const std::string& path);

} // namespace gpa
