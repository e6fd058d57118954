#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "posepipe/error.h"
#include "posepipe/scene.h"

namespace posepipe {
namespace {

constexpr int kMaxLandmarkAttempts = 100;
constexpr double kMinVisibleDepth = 0.1;

// Camera-to-world rotation for a camera looking along `forward` with world
// +z pointing up (image y axis points down).
Rotation3 LookRotation(const Eigen::Vector3d& forward) {
  const Eigen::Vector3d z = forward.normalized();
  const Eigen::Vector3d y(0.0, 0.0, -1.0);
  const Eigen::Vector3d x = y.cross(z).normalized();
  Eigen::Matrix3d m;
  m.col(0) = x;
  m.col(1) = z.cross(x);
  m.col(2) = z;
  return Rotation3::FromMatrix(m);
}

std::vector<Pose> MakeTrajectory(const SynthConfig& config) {
  std::vector<Pose> poses;
  poses.reserve(config.num_frames);
  const int m = config.num_frames;
  for (int i = 0; i < m; ++i) {
    Eigen::Vector3d center;
    Eigen::Vector3d forward;
    switch (config.shape) {
      case TrajectoryShape::kLine: {
        center = Eigen::Vector3d(config.line_step * i, 0.0, 0.0);
        forward = Eigen::Vector3d::UnitY();
        break;
      }
      case TrajectoryShape::kArc:
      case TrajectoryShape::kLoop: {
        const double sweep = config.shape == TrajectoryShape::kLoop
                                 ? 2.0 * std::numbers::pi * config.laps / m
                                 : std::numbers::pi / std::max(1, m - 1);
        const double theta = sweep * i;
        forward = Eigen::Vector3d(std::cos(theta), std::sin(theta), 0.0);
        center = config.trajectory_radius * forward;
        if (config.shape == TrajectoryShape::kLoop) {
          center.z() = config.lap_rise * theta / (2.0 * std::numbers::pi);
        }
        break;
      }
    }
    poses.push_back(Pose::FromCenter(LookRotation(forward), center));
  }
  return poses;
}

bool IsVisible(const SynthConfig& config, const Pose& pose,
               const Eigen::Vector3d& point) {
  if ((pose.Center() - point).norm() > config.visibility_radius) {
    return false;
  }
  const Eigen::Vector3d p = pose * point;
  if (p.z() < kMinVisibleDepth) {
    return false;
  }
  const double u = config.intrinsics.fx * p.x() / p.z() + config.intrinsics.cx;
  const double v = config.intrinsics.fy * p.y() / p.z() + config.intrinsics.cy;
  return u >= 0.0 && u < config.image_width && v >= 0.0 &&
         v < config.image_height;
}

}  // namespace

SceneProblem GenerateSynthetic(const SynthConfig& config) {
  if (config.num_frames < 2 || config.num_landmarks < 4) {
    std::ostringstream msg;
    msg << "need at least 2 frames and 4 landmarks (got " << config.num_frames
        << ", " << config.num_landmarks << ")";
    throw Error(ErrorCode::kDegenerateConfig, msg.str());
  }
  config.intrinsics.Validate();

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> pick_frame(0, config.num_frames - 1);
  std::uniform_real_distribution<double> pick_u(0.05 * config.image_width,
                                                0.95 * config.image_width);
  std::uniform_real_distribution<double> pick_v(0.05 * config.image_height,
                                                0.95 * config.image_height);
  std::uniform_real_distribution<double> pick_depth(config.min_depth,
                                                    config.max_depth);

  const std::vector<Pose> true_poses = MakeTrajectory(config);
  const Intrinsics& K = config.intrinsics;

  std::vector<Eigen::Vector3d> true_points;
  std::vector<std::vector<FrameId>> observers;
  true_points.reserve(config.num_landmarks);
  observers.reserve(config.num_landmarks);
  for (int j = 0; j < config.num_landmarks; ++j) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxLandmarkAttempts && !placed;
         ++attempt) {
      const Pose& anchor = true_poses[pick_frame(rng)];
      const double u = pick_u(rng);
      const double v = pick_v(rng);
      const double depth = pick_depth(rng);
      const Eigen::Vector3d ray((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0);
      const Eigen::Vector3d point = anchor.Inverse() * (depth * ray);
      std::vector<FrameId> seen_by;
      for (int i = 0; i < config.num_frames; ++i) {
        if (IsVisible(config, true_poses[i], point)) {
          seen_by.push_back(i);
        }
      }
      if (seen_by.size() >= 2) {
        true_points.push_back(point);
        observers.push_back(std::move(seen_by));
        placed = true;
      }
    }
    if (!placed) {
      std::ostringstream msg;
      msg << "landmark " << j << " seen by fewer than 2 frames after "
          << kMaxLandmarkAttempts << " attempts (visibility radius "
          << config.visibility_radius << ")";
      throw Error(ErrorCode::kDegenerateConfig, msg.str());
    }
  }

  std::vector<Frame> frames(config.num_frames);
  for (int i = 0; i < config.num_frames; ++i) {
    frames[i].id = i;
    frames[i].timestamp = i;
  }
  for (int j = 0; j < config.num_landmarks; ++j) {
    for (const FrameId i : observers[j]) {
      Eigen::Vector2d pixel = Project(K, true_poses[i], true_points[j]);
      if (config.pixel_noise > 0.0) {
        pixel.x() += config.pixel_noise * normal(rng);
        pixel.y() += config.pixel_noise * normal(rng);
      }
      frames[i].observations.push_back({j, pixel});
    }
  }

  Eigen::AlignedBox3d bounds;
  for (const auto& p : true_points) bounds.extend(p);
  for (const auto& pose : true_poses) bounds.extend(pose.Center());
  const double diameter = bounds.diagonal().norm();

  std::vector<Landmark> landmarks(config.num_landmarks);
  const double landmark_sigma = config.landmark_init_noise * diameter;
  for (int j = 0; j < config.num_landmarks; ++j) {
    landmarks[j].id = j;
    landmarks[j].position =
        true_points[j] + landmark_sigma * Eigen::Vector3d(normal(rng),
                                                          normal(rng),
                                                          normal(rng));
  }

  std::vector<Pose> priors(config.num_frames);
  const double rot_sigma =
      config.prior_rotation_noise_deg * std::numbers::pi / 180.0;
  for (int i = 0; i < config.num_frames; ++i) {
    Pose prior = true_poses[i < 2 ? i : i - 1];
    if (rot_sigma > 0.0 || config.prior_translation_noise > 0.0) {
      const Eigen::Vector3d omega =
          rot_sigma * Eigen::Vector3d(normal(rng), normal(rng), normal(rng));
      const Eigen::Vector3d shift =
          config.prior_translation_noise *
          Eigen::Vector3d(normal(rng), normal(rng), normal(rng));
      const Rotation3 camera_to_world =
          prior.rotation().Inverse() * ExpMap(omega);
      prior = Pose::FromCenter(camera_to_world, prior.Center() + shift);
    }
    priors[i] = prior;
  }

  GroundTruth truth{true_poses, true_points};
  return SceneProblem(K, std::move(frames), std::move(landmarks),
                      std::move(priors), std::move(truth));
}

}  // namespace posepipe
