#pragma once

#include <Eigen/Dense>
#include <set>
#include <string>

#include "gpa/world.hpp"

namespace gpa {

// Mean over joints of the 2D distance between the pose's projection and
// the observed points.
double mean_reprojection_residual(const Condition& condition, const ToyPose& pose);

// Deterministic unit-norm feature vector for a (condition, hypothesis)
// pair: centred joint coordinates, per-joint reprojection residuals,
// consecutive-joint distances and a constant component.
Eigen::VectorXd embed_hypothesis(const Condition& condition, const ToyPose& pose);

// Semantic tags used by prototypes and rules: a quality band from the
// score plus alignment and proportion bands from the geometry.
std::set<std::string> derive_tags(const Condition& condition, const ToyPose& pose, double score);

} // namespace gpa
