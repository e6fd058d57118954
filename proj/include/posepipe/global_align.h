#pragma once

#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "posepipe/geometry.h"
#include "posepipe/local_ba.h"

namespace posepipe {

// Cameras shared by two solved blocks, with both blocks' estimates.
struct SharedCameraSet {
  int block_a = 0;  // block_a < block_b
  int block_b = 0;
  std::vector<FrameId> camera_ids;
  std::vector<Pose> poses_a;
  std::vector<Pose> poses_b;
};

std::optional<SharedCameraSet> CollectShared(const LocalSolution& a,
                                             const LocalSolution& b);
// Every pair with a nonempty intersection, ordered by (a, b).
std::vector<SharedCameraSet> CollectShared(
    std::span<const LocalSolution* const> solutions);

struct RotationMean {
  Rotation3 rotation;
  int iterations = 0;
  bool converged = true;
};

// Sum of squared geodesic distances from `r` to the measurements.
double RotationCost(std::span<const Rotation3> measurements, const Rotation3& r);

// Geodesic L2 mean by Riemannian gradient iteration from the chordal mean.
// Throws kEmptyMeasurements.
RotationMean SingleRotationAverage(std::span<const Rotation3> measurements,
                                   int max_iterations = 100,
                                   double tolerance = 1e-10);

// Rotation from block_a's reference frame into block_b's.
RotationMean AlignPair(const SharedCameraSet& shared);

struct GlobalAlignConfig {
  // Sweep every block instead of only the new block and its neighbours.
  bool full_sweep = false;
  int max_sweeps = 20;
  double sweep_tolerance = 1e-8;
};

struct GlobalUpdateStats {
  int block_id = 0;
  int edges_added = 0;
  int sweeps = 0;
  int blocks_touched = 0;
  double max_update = 0.0;
  // Sum over edges of squared geodesic residuals, before and after each sweep.
  std::vector<double> edge_cost;
};

// Pseudo absolute rotations R_l (world into block reference frame) with the
// pairwise relative rotations between blocks. Block 0 is the anchor.
// Update() is exclusive; readers take snapshots.
class BlockRotationGraph {
 public:
  explicit BlockRotationGraph(GlobalAlignConfig config = {});

  // Adds the new block's edges to every earlier block it shares cameras with
  // and re-estimates the pseudo absolute rotations. Blocks must arrive in id
  // order. Throws kDisconnectedBlock when the new block shares no camera
  // with an earlier one.
  GlobalUpdateStats Update(const LocalSolution& solution,
                           std::span<const SharedCameraSet> shared);

  std::vector<Rotation3> Snapshot() const;
  int NumBlocks() const;
  std::vector<std::pair<std::pair<int, int>, Rotation3>> Edges() const;
  double EdgeCost() const;

 private:
  struct State {
    std::vector<Rotation3> rotations;
    std::map<std::pair<int, int>, Rotation3> edges;
    std::vector<std::vector<int>> neighbors;
  };
  static double StateEdgeCost(const State& state);
  static std::vector<Rotation3> Predictions(const State& state, int block);

  GlobalAlignConfig config_;
  std::mutex update_mutex_;
  mutable std::mutex mutex_;
  State state_;
};

struct ComposeOptions {
  // Average the estimates of frames shared by several blocks instead of
  // taking the lowest block id.
  bool average_shared = false;
};

struct ComposedTrajectory {
  // Indexed by frame id; empty for frames in no block.
  std::vector<std::optional<Pose>> poses;
  // Per block: world center = scale * R_l^T * local center + offset.
  std::vector<double> scales;
  std::vector<Eigen::Vector3d> offsets;
};

// Absolute poses of every frame from the per-block solutions and pseudo
// absolute rotations. Translations and per-block scale are chained by
// least squares over the camera centers each block shares with earlier ones.
ComposedTrajectory ComposeTrajectory(
    std::span<const LocalSolution* const> solutions,
    std::span<const Rotation3> rotations, int num_frames,
    const ComposeOptions& options = {});

// World positions of landmarks, each taken from the lowest block that
// optimized it (falling back to the lowest block holding it at all).
std::vector<std::optional<Eigen::Vector3d>> ComposeLandmarks(
    std::span<const LocalSolution* const> solutions,
    std::span<const Rotation3> rotations, const ComposedTrajectory& trajectory,
    int num_landmarks);

}  // namespace posepipe
