#include "posepipe/global_align.h"

#include <algorithm>
#include <set>
#include <sstream>

#include <Eigen/SVD>
#include <spdlog/spdlog.h>

#include "posepipe/error.h"

namespace posepipe {
namespace {

Rotation3 ChordalMean(std::span<const Rotation3> measurements) {
  Eigen::Matrix3d sum = Eigen::Matrix3d::Zero();
  for (const Rotation3& r : measurements) sum += r.Matrix();
  return Rotation3::FromMatrix(sum);
}

}  // namespace

std::optional<SharedCameraSet> CollectShared(const LocalSolution& a,
                                             const LocalSolution& b) {
  const LocalSolution& first = a.block_id < b.block_id ? a : b;
  const LocalSolution& second = a.block_id < b.block_id ? b : a;
  std::vector<FrameId> ids;
  for (const FrameId id : first.camera_ids) {
    if (second.CameraIndex(id)) ids.push_back(id);
  }
  if (ids.empty()) return std::nullopt;
  std::sort(ids.begin(), ids.end());
  SharedCameraSet shared;
  shared.block_a = first.block_id;
  shared.block_b = second.block_id;
  for (const FrameId id : ids) {
    shared.camera_ids.push_back(id);
    shared.poses_a.push_back(first.PoseOf(id));
    shared.poses_b.push_back(second.PoseOf(id));
  }
  return shared;
}

std::vector<SharedCameraSet> CollectShared(
    std::span<const LocalSolution* const> solutions) {
  std::vector<const LocalSolution*> sorted(solutions.begin(), solutions.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const auto* x, const auto* y) { return x->block_id < y->block_id; });
  std::vector<SharedCameraSet> sets;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    for (std::size_t j = i + 1; j < sorted.size(); ++j) {
      if (auto shared = CollectShared(*sorted[i], *sorted[j])) {
        sets.push_back(std::move(*shared));
      }
    }
  }
  return sets;
}

double RotationCost(std::span<const Rotation3> measurements,
                    const Rotation3& r) {
  double cost = 0.0;
  for (const Rotation3& m : measurements) {
    const double d = GeodesicDistance(m, r);
    cost += d * d;
  }
  return cost;
}

RotationMean SingleRotationAverage(std::span<const Rotation3> measurements,
                                   int max_iterations, double tolerance) {
  if (measurements.empty()) {
    throw Error(ErrorCode::kEmptyMeasurements,
                "rotation average of an empty set");
  }
  RotationMean mean;
  mean.rotation = ChordalMean(measurements);
  const Rotation3 best_start = mean.rotation;
  double best_cost = RotationCost(measurements, best_start);
  Rotation3 best = best_start;
  mean.converged = false;
  const double n = static_cast<double>(measurements.size());
  while (mean.iterations < max_iterations) {
    const Rotation3 inverse = mean.rotation.Inverse();
    Eigen::Vector3d step = Eigen::Vector3d::Zero();
    for (const Rotation3& m : measurements) {
      step += LogMapUnchecked(inverse * m);
    }
    step /= n;
    mean.rotation = mean.rotation * ExpMap(step);
    ++mean.iterations;
    const double cost = RotationCost(measurements, mean.rotation);
    if (cost <= best_cost) {
      best_cost = cost;
      best = mean.rotation;
    }
    if (step.norm() < tolerance) {
      mean.converged = true;
      break;
    }
  }
  if (!mean.converged) {
    spdlog::debug("rotation average stopped after {} iterations",
                  mean.iterations);
  }
  // Last iterate unless measurably worse than the best one.
  const double final_cost = RotationCost(measurements, mean.rotation);
  if (!mean.converged || final_cost > best_cost * (1.0 + 1e-12) + 1e-24) {
    mean.rotation = best;
  }
  return mean;
}

RotationMean AlignPair(const SharedCameraSet& shared) {
  std::vector<Rotation3> measurements;
  measurements.reserve(shared.camera_ids.size());
  for (std::size_t i = 0; i < shared.camera_ids.size(); ++i) {
    measurements.push_back(shared.poses_b[i].rotation().Inverse() *
                           shared.poses_a[i].rotation());
  }
  return SingleRotationAverage(measurements);
}

// ---------------------------------------------------------------------------

BlockRotationGraph::BlockRotationGraph(GlobalAlignConfig config)
    : config_(config) {}

std::vector<Rotation3> BlockRotationGraph::Predictions(const State& state,
                                                       int block) {
  std::vector<Rotation3> predictions;
  for (const int other : state.neighbors[block]) {
    if (block < other) {
      const Rotation3& r = state.edges.at({block, other});
      predictions.push_back(r.Inverse() * state.rotations[other]);
    } else {
      const Rotation3& r = state.edges.at({other, block});
      predictions.push_back(r * state.rotations[other]);
    }
  }
  return predictions;
}

double BlockRotationGraph::StateEdgeCost(const State& state) {
  double cost = 0.0;
  for (const auto& [key, r] : state.edges) {
    if (key.second >= static_cast<int>(state.rotations.size())) continue;
    const double d = GeodesicDistance(
        r, state.rotations[key.second] * state.rotations[key.first].Inverse());
    cost += d * d;
  }
  return cost;
}

GlobalUpdateStats BlockRotationGraph::Update(
    const LocalSolution& solution, std::span<const SharedCameraSet> shared) {
  std::lock_guard<std::mutex> writer(update_mutex_);
  State state;
  {
    std::lock_guard<std::mutex> lock(mutex_);
    state = state_;
  }
  const int block = solution.block_id;
  if (block != static_cast<int>(state.rotations.size())) {
    std::ostringstream msg;
    msg << "block " << block << " arrived out of order (expected "
        << state.rotations.size() << ")";
    throw Error(ErrorCode::kInvalidArgument, msg.str());
  }
  GlobalUpdateStats stats;
  stats.block_id = block;
  state.neighbors.emplace_back();
  for (const SharedCameraSet& set : shared) {
    if (set.block_b != block || set.block_a >= block) continue;
    state.edges[{set.block_a, block}] = AlignPair(set).rotation;
    state.neighbors[block].push_back(set.block_a);
    state.neighbors[set.block_a].push_back(block);
    ++stats.edges_added;
  }
  if (block == 0) {
    state.rotations.push_back(Rotation3::Identity());
  } else {
    if (stats.edges_added == 0) {
      std::ostringstream msg;
      msg << "block " << block << " shares no camera with an earlier block";
      throw Error(ErrorCode::kDisconnectedBlock, msg.str());
    }
    state.rotations.push_back(Rotation3::Identity());
    state.rotations.back() =
        SingleRotationAverage(Predictions(state, block)).rotation;

    std::vector<int> sweep_set;
    if (config_.full_sweep) {
      for (int l = 1; l <= block; ++l) sweep_set.push_back(l);
    } else {
      std::set<int> touched(state.neighbors[block].begin(),
                            state.neighbors[block].end());
      touched.insert(block);
      touched.erase(0);
      sweep_set.assign(touched.begin(), touched.end());
    }
    stats.blocks_touched = static_cast<int>(sweep_set.size());
    stats.edge_cost.push_back(StateEdgeCost(state));
    for (int sweep = 0; sweep < config_.max_sweeps; ++sweep) {
      double max_update = 0.0;
      for (const int l : sweep_set) {
        const Rotation3 next =
            SingleRotationAverage(Predictions(state, l)).rotation;
        max_update =
            std::max(max_update, GeodesicDistance(next, state.rotations[l]));
        state.rotations[l] = next;
      }
      ++stats.sweeps;
      stats.max_update = max_update;
      stats.edge_cost.push_back(StateEdgeCost(state));
      if (max_update < config_.sweep_tolerance) break;
    }
  }
  std::lock_guard<std::mutex> lock(mutex_);
  state_ = std::move(state);
  return stats;
}

std::vector<Rotation3> BlockRotationGraph::Snapshot() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return state_.rotations;
}

int BlockRotationGraph::NumBlocks() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return static_cast<int>(state_.rotations.size());
}

std::vector<std::pair<std::pair<int, int>, Rotation3>>
BlockRotationGraph::Edges() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return {state_.edges.begin(), state_.edges.end()};
}

double BlockRotationGraph::EdgeCost() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return StateEdgeCost(state_);
}

// ---------------------------------------------------------------------------

ComposedTrajectory ComposeTrajectory(
    std::span<const LocalSolution* const> solutions,
    std::span<const Rotation3> rotations, int num_frames,
    const ComposeOptions& options) {
  std::vector<const LocalSolution*> sorted(solutions.begin(), solutions.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const auto* x, const auto* y) { return x->block_id < y->block_id; });

  ComposedTrajectory out;
  out.poses.assign(num_frames, std::nullopt);
  std::vector<std::optional<Eigen::Vector3d>> placed(num_frames);
  std::vector<std::vector<Rotation3>> all_rotations(num_frames);
  std::vector<std::vector<Eigen::Vector3d>> all_centers(num_frames);

  for (const LocalSolution* sol : sorted) {
    const int l = sol->block_id;
    if (l >= static_cast<int>(rotations.size())) {
      throw Error(ErrorCode::kIndexOutOfRange,
                  "no pseudo absolute rotation for block " + std::to_string(l));
    }
    const Rotation3& block_rotation = rotations[l];
    const Rotation3 to_world = block_rotation.Inverse();
    const std::size_t n = sol->camera_ids.size();
    std::vector<Eigen::Vector3d> local(n);
    std::vector<Eigen::Vector3d> src, dst;
    for (std::size_t c = 0; c < n; ++c) {
      local[c] = to_world * sol->poses[c].Center();
      const FrameId id = sol->camera_ids[c];
      if (id < 0 || id >= num_frames) {
        throw Error(ErrorCode::kIndexOutOfRange,
                    "frame " + std::to_string(id) + " out of range");
      }
      if (placed[id]) {
        src.push_back(local[c]);
        dst.push_back(*placed[id]);
      }
    }

    double scale = 1.0;
    Eigen::Vector3d offset = Eigen::Vector3d::Zero();
    if (!src.empty()) {
      Eigen::Vector3d src_mean = Eigen::Vector3d::Zero();
      Eigen::Vector3d dst_mean = Eigen::Vector3d::Zero();
      for (std::size_t k = 0; k < src.size(); ++k) {
        src_mean += src[k];
        dst_mean += dst[k];
      }
      src_mean /= static_cast<double>(src.size());
      dst_mean /= static_cast<double>(src.size());
      double num = 0.0, den = 0.0;
      for (std::size_t k = 0; k < src.size(); ++k) {
        num += (src[k] - src_mean).dot(dst[k] - dst_mean);
        den += (src[k] - src_mean).squaredNorm();
      }
      if (src.size() >= 2 && den > 1e-12 && num > 0.0) scale = num / den;
      offset = dst_mean - scale * src_mean;
    }
    out.scales.push_back(scale);
    out.offsets.push_back(offset);

    for (std::size_t c = 0; c < n; ++c) {
      const FrameId id = sol->camera_ids[c];
      const Eigen::Vector3d center = scale * local[c] + offset;
      const Rotation3 rotation = sol->poses[c].rotation() * block_rotation;
      all_rotations[id].push_back(rotation);
      all_centers[id].push_back(center);
      if (!placed[id]) {
        placed[id] = center;
        out.poses[id] = Pose(rotation, -(rotation * center));
      }
    }
  }

  if (options.average_shared) {
    for (int id = 0; id < num_frames; ++id) {
      if (all_rotations[id].size() < 2) continue;
      const Rotation3 rotation =
          SingleRotationAverage(all_rotations[id]).rotation;
      Eigen::Vector3d center = Eigen::Vector3d::Zero();
      for (const auto& c : all_centers[id]) center += c;
      center /= static_cast<double>(all_centers[id].size());
      out.poses[id] = Pose(rotation, -(rotation * center));
    }
  }
  return out;
}

std::vector<std::optional<Eigen::Vector3d>> ComposeLandmarks(
    std::span<const LocalSolution* const> solutions,
    std::span<const Rotation3> rotations, const ComposedTrajectory& trajectory,
    int num_landmarks) {
  std::vector<const LocalSolution*> sorted(solutions.begin(), solutions.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const auto* x, const auto* y) { return x->block_id < y->block_id; });
  std::vector<std::optional<Eigen::Vector3d>> out(num_landmarks);
  std::vector<bool> from_optimized(num_landmarks, false);
  for (const LocalSolution* sol : sorted) {
    const int l = sol->block_id;
    const Rotation3 to_world = rotations[l].Inverse();
    for (std::size_t k = 0; k < sol->landmark_ids.size(); ++k) {
      const LandmarkId id = sol->landmark_ids[k];
      if (id < 0 || id >= num_landmarks || from_optimized[id]) continue;
      if (out[id] && !sol->optimized[k]) continue;
      out[id] = trajectory.scales[l] * (to_world * sol->landmarks[k]) +
                trajectory.offsets[l];
      from_optimized[id] = sol->optimized[k];
    }
  }
  return out;
}

}  // namespace posepipe
