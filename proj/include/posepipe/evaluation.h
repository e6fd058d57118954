#pragma once

#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "posepipe/local_ba.h"
#include "posepipe/scene.h"

namespace posepipe {

struct AteResult {
  double rmse = 0.0;
  // truth ~= scale * rotation * estimate + translation
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
};

// Absolute trajectory error of camera centers after a least-squares
// similarity alignment. Throws kTooFewFrames below 3 frames.
AteResult AbsoluteTrajectoryError(std::span<const Eigen::Vector3d> estimate,
                                  std::span<const Eigen::Vector3d> truth);
// Uses frames that have an estimate.
AteResult AbsoluteTrajectoryError(std::span<const std::optional<Pose>> estimate,
                                  std::span<const Pose> truth);

struct ReprojectionStats {
  double cost = 0.0;  // sum of squared pixel errors
  std::size_t num_observations = 0;
  std::size_t num_skipped = 0;  // missing estimate or behind the camera
  double rmse() const;
};

ReprojectionStats EvaluateReprojection(
    const SceneProblem& scene, std::span<const std::optional<Pose>> poses,
    std::span<const std::optional<Eigen::Vector3d>> landmarks);

// Structure-only refinement: every landmark seen by at least two placed
// frames is moved to a local minimum of its reprojection error with the
// poses held fixed. Starts from the given position when it lies in front of
// all observers, else from the midpoint triangulation.
std::vector<std::optional<Eigen::Vector3d>> RefineStructure(
    const SceneProblem& scene, std::span<const std::optional<Pose>> poses,
    std::span<const std::optional<Eigen::Vector3d>> landmarks,
    int max_iterations = 10);

struct GlobalBaTiming {
  double seconds = 0.0;
  int num_cameras = 0;
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
};

// Conventional bundle adjustment over the given keyframes and every
// landmark they observe, started from the supplied world estimates and
// solved with standard Levenberg-Marquardt. Used as the timing reference
// for global alignment.
GlobalBaTiming KeyframeGlobalBa(
    const SceneProblem& scene, std::span<const FrameId> keyframes,
    std::span<const std::optional<Pose>> poses,
    std::span<const std::optional<Eigen::Vector3d>> landmarks,
    int max_iterations);

// Least-squares slope of y against x.
double FitSlope(std::span<const double> x, std::span<const double> y);

}  // namespace posepipe
