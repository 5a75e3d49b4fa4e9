#include "gpa/embedding.hpp"

#include <cmath>
#include <stdexcept>

namespace gpa {

double mean_reprojection_residual(const Condition& condition, const ToyPose& pose) {
    const int J = pose.joints();
    if (condition.observed.size() != 2 * J)
        throw std::invalid_argument("condition/pose joint mismatch");
    double total = 0.0;
    for (int j = 0; j < J; ++j) {
        const Eigen::Vector2d proj(pose.coords(3 * j), pose.coords(3 * j + 1));
        total += (proj - condition.point(j)).norm();
    }
    return total / J;
}

Eigen::VectorXd embed_hypothesis(const Condition& condition, const ToyPose& pose) {
    const int J = pose.joints();
    if (condition.observed.size() != 2 * J)
        throw std::invalid_argument("condition/pose joint mismatch");

    Eigen::VectorXd features(3 * J + J + (J - 1) + 1);
    int at = 0;

    // Centred joints, scaled by RMS radius.
    Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
    for (int j = 0; j < J; ++j) centroid += pose.joint(j);
    centroid /= J;
    double rms = 0.0;
    for (int j = 0; j < J; ++j) rms += (pose.joint(j) - centroid).squaredNorm();
    rms = std::sqrt(rms / J);
    const double scale = rms > 1e-12 ? 1.0 / rms : 1.0;
    for (int j = 0; j < J; ++j) {
        const Eigen::Vector3d p = scale * (pose.joint(j) - centroid);
        features(at++) = p.x();
        features(at++) = p.y();
        features(at++) = p.z();
    }

    for (int j = 0; j < J; ++j) {
        const Eigen::Vector2d proj(pose.coords(3 * j), pose.coords(3 * j + 1));
        features(at++) = (proj - condition.point(j)).norm();
    }

    for (int j = 0; j + 1 < J; ++j)
        features(at++) = (pose.joint(j + 1) - pose.joint(j)).norm();

    features(at++) = 1.0; // keeps the vector away from zero
    return features / features.norm();
}

std::set<std::string> derive_tags(const Condition& condition, const ToyPose& pose, double score) {
    std::set<std::string> tags;
    if (score >= 75.0)
        tags.insert("high-quality");
    else if (score >= 45.0)
        tags.insert("mid-quality");
    else
        tags.insert("low-quality");

    const double residual = mean_reprojection_residual(condition, pose);
    if (residual < 0.08)
        tags.insert("aligned");
    else if (residual > 0.3)
        tags.insert("misaligned");
    else
        tags.insert("rough-aligned");

    double mean_bone = 0.0;
    for (int j = 0; j + 1 < pose.joints(); ++j)
        mean_bone += (pose.joint(j + 1) - pose.joint(j)).norm();
    mean_bone /= std::max(1, pose.joints() - 1);
    if (mean_bone < 0.6 || mean_bone > 2.2)
        tags.insert("distorted");
    else
        tags.insert("proportional");

    return tags;
}

} // namespace gpa
