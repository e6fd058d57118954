#include "posepipe/evaluation.h"

#include <chrono>
#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Geometry>
#include <spdlog/spdlog.h>

#include "posepipe/error.h"

namespace posepipe {

AteResult AbsoluteTrajectoryError(std::span<const Eigen::Vector3d> estimate,
                                  std::span<const Eigen::Vector3d> truth) {
  if (estimate.size() != truth.size()) {
    throw Error(ErrorCode::kInvalidArgument,
                "trajectory lengths differ (" + std::to_string(estimate.size()) +
                    " vs " + std::to_string(truth.size()) + ")");
  }
  if (estimate.size() < 3) {
    throw Error(ErrorCode::kTooFewFrames,
                "need at least 3 frames for a similarity alignment");
  }
  const Eigen::Index n = static_cast<Eigen::Index>(estimate.size());
  Eigen::Matrix3Xd src(3, n), dst(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    src.col(i) = estimate[i];
    dst.col(i) = truth[i];
  }
  const Eigen::Matrix4d transform = Eigen::umeyama(src, dst, true);
  AteResult result;
  const Eigen::Matrix3d sr = transform.topLeftCorner<3, 3>();
  result.scale = std::cbrt(sr.determinant());
  result.rotation = sr / result.scale;
  result.translation = transform.topRightCorner<3, 1>();
  const Eigen::Matrix3Xd aligned =
      (sr * src).colwise() + result.translation;
  result.rmse = std::sqrt((aligned - dst).colwise().squaredNorm().mean());
  return result;
}

AteResult AbsoluteTrajectoryError(std::span<const std::optional<Pose>> estimate,
                                  std::span<const Pose> truth) {
  std::vector<Eigen::Vector3d> est, ref;
  for (std::size_t i = 0; i < estimate.size() && i < truth.size(); ++i) {
    if (!estimate[i]) continue;
    est.push_back(estimate[i]->Center());
    ref.push_back(truth[i].Center());
  }
  return AbsoluteTrajectoryError(est, ref);
}

double ReprojectionStats::rmse() const {
  if (num_observations == 0) return 0.0;
  return std::sqrt(cost / static_cast<double>(num_observations));
}

ReprojectionStats EvaluateReprojection(
    const SceneProblem& scene, std::span<const std::optional<Pose>> poses,
    std::span<const std::optional<Eigen::Vector3d>> landmarks) {
  ReprojectionStats stats;
  const Intrinsics& K = scene.intrinsics();
  for (const Frame& frame : scene.frames()) {
    const bool has_pose =
        frame.id < static_cast<int>(poses.size()) && poses[frame.id];
    for (const Observation& obs : frame.observations) {
      const bool has_point = obs.landmark < static_cast<int>(landmarks.size()) &&
                             landmarks[obs.landmark];
      if (!has_pose || !has_point) {
        ++stats.num_skipped;
        continue;
      }
      const auto pixel = TryProject(K, *poses[frame.id], *landmarks[obs.landmark]);
      if (!pixel) {
        ++stats.num_skipped;
        continue;
      }
      stats.cost += (*pixel - obs.pixel).squaredNorm();
      ++stats.num_observations;
    }
  }
  return stats;
}

namespace {

struct PointView {
  const Pose* pose;
  Eigen::Vector2d pixel;
};

// Sum of squared errors; infinite when a view sees the point from behind.
double PointCost(const Intrinsics& K, const std::vector<PointView>& views,
                 const Eigen::Vector3d& point) {
  double cost = 0.0;
  for (const PointView& v : views) {
    const auto pixel = TryProject(K, *v.pose, point);
    if (!pixel) return std::numeric_limits<double>::infinity();
    cost += (*pixel - v.pixel).squaredNorm();
  }
  return cost;
}

Eigen::Vector3d RefinePoint(const Intrinsics& K,
                            const std::vector<PointView>& views,
                            Eigen::Vector3d point, int max_iterations) {
  double cost = PointCost(K, views, point);
  double damping = 1e-6;
  for (int it = 0; it < max_iterations; ++it) {
    Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
    Eigen::Vector3d g = Eigen::Vector3d::Zero();
    for (const PointView& v : views) {
      const Eigen::Vector3d xc = *v.pose * point;
      const double iz = 1.0 / xc.z();
      Eigen::Matrix<double, 2, 3> d;
      d << K.fx * iz, 0.0, -K.fx * xc.x() * iz * iz,
          0.0, K.fy * iz, -K.fy * xc.y() * iz * iz;
      const Eigen::Matrix<double, 2, 3> j = d * v.pose->rotation().Matrix();
      const Eigen::Vector2d r(K.fx * xc.x() * iz + K.cx - v.pixel.x(),
                              K.fy * xc.y() * iz + K.cy - v.pixel.y());
      h += j.transpose() * j;
      g += j.transpose() * r;
    }
    bool improved = false;
    while (damping < 1e6) {
      Eigen::Matrix3d a = h;
      a.diagonal() *= 1.0 + damping;
      const Eigen::Vector3d candidate = point - a.ldlt().solve(g);
      const double candidate_cost = PointCost(K, views, candidate);
      if (candidate_cost < cost) {
        improved = cost - candidate_cost > 1e-12 * cost;
        point = candidate;
        cost = candidate_cost;
        damping = std::max(1e-9, damping * 0.1);
        break;
      }
      damping *= 10.0;
    }
    if (!improved) break;
  }
  return point;
}

}  // namespace

std::vector<std::optional<Eigen::Vector3d>> RefineStructure(
    const SceneProblem& scene, std::span<const std::optional<Pose>> poses,
    std::span<const std::optional<Eigen::Vector3d>> landmarks,
    int max_iterations) {
  const Intrinsics& K = scene.intrinsics();
  std::vector<std::optional<Eigen::Vector3d>> out(landmarks.begin(),
                                                  landmarks.end());
  out.resize(scene.NumLandmarks());
  std::vector<PointView> views;
  for (LandmarkId id = 0; id < scene.NumLandmarks(); ++id) {
    views.clear();
    for (const FrameId f : scene.Observers(id)) {
      if (f >= static_cast<FrameId>(poses.size()) || !poses[f]) continue;
      const auto& obs = scene.frame(f).observations;
      const auto it = std::lower_bound(
          obs.begin(), obs.end(), id,
          [](const Observation& o, LandmarkId l) { return o.landmark < l; });
      views.push_back({&*poses[f], it->pixel});
    }
    if (views.size() < 2) continue;
    std::optional<Eigen::Vector3d> start = out[id];
    if (!start || !std::isfinite(PointCost(K, views, *start))) {
      std::vector<Pose> view_poses;
      std::vector<Eigen::Vector2d> pixels;
      for (const PointView& v : views) {
        view_poses.push_back(*v.pose);
        pixels.push_back(v.pixel);
      }
      start = TriangulateMidpoint(K, view_poses, pixels);
      if (!start || !std::isfinite(PointCost(K, views, *start))) continue;
    }
    out[id] = RefinePoint(K, views, *start, max_iterations);
  }
  return out;
}

GlobalBaTiming KeyframeGlobalBa(
    const SceneProblem& scene, std::span<const FrameId> keyframes,
    std::span<const std::optional<Pose>> poses,
    std::span<const std::optional<Eigen::Vector3d>> landmarks,
    int max_iterations) {
  GlobalBaTiming timing;
  if (keyframes.size() < 2) return timing;
  Block block;
  block.camera_ids.assign(keyframes.begin(), keyframes.end());
  block.num_temporal = static_cast<int>(keyframes.size());
  block.reference_frame_id = keyframes.front();
  for (const FrameId id : keyframes) {
    for (const Observation& obs : scene.frame(id).observations) {
      block.landmark_ids.push_back(obs.landmark);
    }
  }
  std::sort(block.landmark_ids.begin(), block.landmark_ids.end());
  block.landmark_ids.erase(
      std::unique(block.landmark_ids.begin(), block.landmark_ids.end()),
      block.landmark_ids.end());

  auto pose_of = [&](FrameId id) {
    return id < static_cast<int>(poses.size()) && poses[id] ? *poses[id]
                                                            : scene.poses()[id];
  };
  const Pose reference = pose_of(block.reference_frame_id);
  const Pose to_world = reference.Inverse();
  InitialState init;
  for (const FrameId id : block.camera_ids) {
    init.poses.push_back(id == block.reference_frame_id
                             ? Pose::Identity()
                             : pose_of(id) * to_world);
  }
  for (const LandmarkId id : block.landmark_ids) {
    const Eigen::Vector3d world =
        id < static_cast<int>(landmarks.size()) && landmarks[id]
            ? *landmarks[id]
            : scene.landmarks()[id].position;
    init.landmarks.push_back(reference * world);
  }

  LocalBaConfig config;
  config.use_forest = false;
  config.solver.mode = DampingMode::kStandard;
  config.solver.max_iterations = max_iterations;
  timing.num_cameras = static_cast<int>(block.camera_ids.size());
  const auto start = std::chrono::steady_clock::now();
  try {
    const LocalSolution solution = SolveLocal(block, scene, init, config);
    timing.iterations = solution.iterations;
    timing.initial_cost = solution.initial_cost;
    timing.final_cost = solution.final_cost;
  } catch (const Error& e) {
    spdlog::warn("reference global BA failed: {}", e.what());
  }
  timing.seconds = std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - start)
                       .count();
  return timing;
}

double FitSlope(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = std::min(x.size(), y.size());
  if (n < 2) return 0.0;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxx > 0.0 ? sxy / sxx : 0.0;
}

}  // namespace posepipe
