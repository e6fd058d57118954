#pragma once

#include <memory>
#include <optional>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "posepipe/partitioner.h"
#include "posepipe/salm_solver.h"
#include "posepipe/scene.h"

namespace posepipe {

// Intra-block co-visibility graph. Vertices follow block.camera_ids.
struct PoseGraph {
  struct Edge {
    int a = 0;  // vertex indices, a < b
    int b = 0;
    int weight = 0;  // number of co-visible landmarks
  };
  std::vector<FrameId> vertices;
  std::vector<Edge> edges;

  int IndexOf(FrameId id) const;
  // Co-visible count between two vertices (0 when not adjacent).
  int Weight(int a, int b) const;

 private:
  friend PoseGraph BuildPoseGraph(const Block&, const SceneProblem&);
  std::unordered_map<long long, int> weights_;
};

PoseGraph BuildPoseGraph(const Block& block, const SceneProblem& scene);

enum class ForestMode {
  // Every non-root camera hangs directly off the added-in root it shares the
  // most landmarks with.
  kStar,
  // Maximum spanning forest over all pairwise co-visibility edges, with the
  // added-in cameras as fixed roots.
  kFull,
};

struct SpanningForest {
  // Parent vertex index per vertex; roots point at themselves.
  std::vector<int> parent;
  // Root vertex index per vertex.
  std::vector<int> root;
  // Weight of the edge to the parent (0 for roots and reference-tree
  // members attached by default).
  std::vector<int> weight;
  int reference = 0;

  int TotalWeight() const;
  bool InReferenceTree(int v) const { return root[v] == reference; }
};

SpanningForest BuildMsf(const PoseGraph& graph, const Block& block,
                        int cov_thr, ForestMode mode = ForestMode::kStar);

// Published result of one local bundle adjustment. Poses map reference-frame
// coordinates into each camera; landmarks live in reference-frame
// coordinates.
struct LocalSolution {
  int block_id = 0;
  FrameId reference_frame_id = -1;
  std::vector<FrameId> camera_ids;
  std::vector<Pose> poses;
  std::vector<LandmarkId> landmark_ids;
  std::vector<Eigen::Vector3d> landmarks;
  // True for landmarks that were part of the optimized residual set.
  std::vector<bool> optimized;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  int num_residuals = 0;
  SolverStatus status = SolverStatus::kConverged;
  StopReason reason = StopReason::kZeroResidual;
  std::vector<TraceRow> trace;

  std::optional<int> CameraIndex(FrameId id) const;
  std::optional<int> LandmarkIndex(LandmarkId id) const;
  const Pose& PoseOf(FrameId id) const;
};

// Read-only view of earlier blocks and their published solutions.
class SolutionHistory {
 public:
  void Publish(const Block& block, std::shared_ptr<const LocalSolution> solution);
  void AddBlock(const Block& block);

  const Block* block(int id) const;
  std::shared_ptr<const LocalSolution> solution(int id) const;
  // Most recent block before `before` that contains the frame/landmark.
  std::optional<int> LatestBlockWithFrame(FrameId id, int before) const;
  std::optional<int> LatestBlockWithLandmark(LandmarkId id, int before) const;
  // Transform from block `from` reference coordinates into block `to`
  // reference coordinates, chained through consecutive shared frames.
  // Empty when a block along the chain has no solution.
  std::optional<Pose> Chain(int from, int to) const;

 private:
  std::vector<Block> blocks_;
  std::vector<std::shared_ptr<const LocalSolution>> solutions_;
  std::unordered_map<FrameId, std::vector<int>> frame_blocks_;
  std::unordered_map<LandmarkId, std::vector<int>> landmark_blocks_;
};

enum class AddInInit {
  // Members of an added-in tree copy the root's pose.
  kRootPose,
  // Root pose composed with the prior motion between root and member.
  kRootWithMotion,
};

struct LocalBaConfig {
  int cov_thr = 15;
  ForestMode forest_mode = ForestMode::kStar;
  AddInInit add_in_init = AddInInit::kRootWithMotion;
  // Off: every camera starts from the motion-model prior.
  bool use_forest = true;
  SolverConfig solver;
};

struct InitialState {
  std::vector<Pose> poses;                   // aligned with block.camera_ids
  std::vector<Eigen::Vector3d> landmarks;    // aligned with block.landmark_ids
  std::vector<FrameId> missing_snapshots;
};

InitialState InitializeBlock(const Block& block, const SpanningForest& forest,
                             const SceneProblem& scene,
                             const SolutionHistory& history,
                             const LocalBaConfig& config);

// Motion-model initialization relative to the reference frame.
InitialState PriorInitialization(const Block& block, const SceneProblem& scene);

// Reprojection system of one block. Camera 0 is held at the identity;
// the distance from camera 0 to camera `gauge` is held fixed.
class BlockBundleProblem : public ResidualSystem {
 public:
  struct Measurement {
    int camera = 0;
    int landmark = 0;
    Eigen::Vector2d pixel;
  };

  BlockBundleProblem(const Intrinsics& K, int num_cameras, int gauge_camera,
                     int num_landmarks, std::vector<Measurement> measurements);

  int NumResiduals() const override;
  int TangentDim() const override;
  bool Evaluate(const Eigen::VectorXd& x, Eigen::VectorXd* f) const override;
  std::unique_ptr<Linearization> Linearize(
      const Eigen::VectorXd& x, const Eigen::VectorXd& f) const override;
  Eigen::VectorXd Plus(const Eigen::VectorXd& x,
                       const Eigen::VectorXd& step) const override;

  // Camera 0's pose is ignored by Pack and returned as identity by Unpack.
  Eigen::VectorXd Pack(const std::vector<Pose>& poses,
                       const std::vector<Eigen::Vector3d>& landmarks) const;
  void Unpack(const Eigen::VectorXd& x, std::vector<Pose>* poses,
              std::vector<Eigen::Vector3d>* landmarks) const;

  Eigen::MatrixXd DenseJacobian(const Eigen::VectorXd& x) const;

  int num_cameras() const { return num_cameras_; }
  int num_landmarks() const { return num_landmarks_; }
  const std::vector<Measurement>& measurements() const { return measurements_; }

 private:
  friend class BundleLinearization;
  int StateOffsetCamera(int c) const { return 7 * (c - 1); }
  int StateOffsetLandmark(int j) const { return 7 * (num_cameras_ - 1) + 3 * j; }
  int TangentDimCamera(int c) const;
  Eigen::Matrix<double, 3, 2> GaugeBasis(const Eigen::Vector3d& t) const;
  Pose CameraPose(const Eigen::VectorXd& x, int c) const;

  Intrinsics K_;
  int num_cameras_;
  int gauge_camera_;
  int num_landmarks_;
  std::vector<Measurement> measurements_;
  std::vector<int> tangent_offsets_;  // per camera, then landmark base
  int landmark_tangent_offset_ = 0;
};

// Solves the block from the given initial state. Throws kSolverDiverged and
// kInsufficientConstraints.
LocalSolution SolveLocal(const Block& block, const SceneProblem& scene,
                         const InitialState& init, const LocalBaConfig& config);

// Least-squares point closest to the rays through the pixels (midpoint
// method). `poses` map the working frame into each camera.
std::optional<Eigen::Vector3d> TriangulateMidpoint(
    const Intrinsics& K, const std::vector<Pose>& poses,
    const std::vector<Eigen::Vector2d>& pixels);

}  // namespace posepipe
