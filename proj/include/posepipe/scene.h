#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "posepipe/geometry.h"

namespace posepipe {

using FrameId = int;
using LandmarkId = int;

struct Observation {
  LandmarkId landmark = -1;
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
};

// One image. Observations are kept sorted by landmark id; a landmark appears
// at most once per frame.
struct Frame {
  FrameId id = -1;
  // Source timestamp (the original frame id for file inputs).
  double timestamp = 0.0;
  std::vector<Observation> observations;
};

struct Landmark {
  LandmarkId id = -1;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
};

struct GroundTruth {
  std::vector<Pose> poses;
  std::vector<Eigen::Vector3d> landmarks;
};

// Immutable world model: intrinsics, the frame stream with its 2D
// measurements, and initial estimates for every pose and landmark.
//
// Frame ids are dense and equal to their position in frames(); landmark ids
// likewise. The per-landmark observer index (column access into the
// visibility matrix) is built at construction.
class SceneProblem {
 public:
  SceneProblem(Intrinsics intrinsics, std::vector<Frame> frames,
               std::vector<Landmark> landmarks, std::vector<Pose> poses,
               std::optional<GroundTruth> ground_truth = std::nullopt);

  const Intrinsics& intrinsics() const { return intrinsics_; }
  const std::vector<Frame>& frames() const { return frames_; }
  const std::vector<Landmark>& landmarks() const { return landmarks_; }
  const std::vector<Pose>& poses() const { return poses_; }
  const std::optional<GroundTruth>& ground_truth() const {
    return ground_truth_;
  }

  int NumFrames() const { return static_cast<int>(frames_.size()); }
  int NumLandmarks() const { return static_cast<int>(landmarks_.size()); }
  std::size_t NumObservations() const;

  const Frame& frame(FrameId id) const { return frames_.at(id); }
  // Frames observing the landmark, in increasing id order.
  std::span<const FrameId> Observers(LandmarkId id) const;

 private:
  Intrinsics intrinsics_;
  std::vector<Frame> frames_;
  std::vector<Landmark> landmarks_;
  std::vector<Pose> poses_;
  std::optional<GroundTruth> ground_truth_;
  std::vector<FrameId> observer_ids_;
  std::vector<std::size_t> observer_offsets_;
};

// Number of landmarks observed in both frames.
int CovisibleCount(const Frame& a, const Frame& b);

// Sum of squared reprojection errors over every observation, with the given
// poses (indexed by frame id) and landmark positions (indexed by landmark
// id). Observations behind their camera are skipped and counted in
// `num_skipped` when it is non-null.
double TotalReprojectionCost(const SceneProblem& scene,
                             std::span<const Pose> poses,
                             std::span<const Eigen::Vector3d> landmarks,
                             std::size_t* num_skipped = nullptr);

enum class TrajectoryShape { kLine, kArc, kLoop };

struct SynthConfig {
  TrajectoryShape shape = TrajectoryShape::kLoop;
  int num_frames = 100;
  int num_landmarks = 1000;
  // Standard deviation of the per-axis Gaussian pixel noise.
  double pixel_noise = 0.0;
  // Landmarks farther than this from a camera center are not observed.
  double visibility_radius = 8.0;
  std::uint64_t seed = 0;

  Intrinsics intrinsics{500.0, 500.0, 320.0, 240.0};
  int image_width = 640;
  int image_height = 480;

  // Loop and arc: camera centers on a circle of this radius, looking
  // outward. Line: distance travelled per frame.
  double trajectory_radius = 2.0;
  double line_step = 0.05;
  int laps = 1;
  // Loop only: height gained per lap (a helix when non-zero).
  double lap_rise = 0.0;
  double min_depth = 1.5;
  double max_depth = 6.0;

  // Initial landmark estimates: ground truth plus isotropic Gaussian noise
  // with this standard deviation, as a fraction of the scene diameter.
  double landmark_init_noise = 0.01;
  // Extra perturbation applied on top of the motion-model pose priors.
  double prior_rotation_noise_deg = 0.0;
  double prior_translation_noise = 0.0;
};

// Deterministic for a fixed config. Pose priors follow a constant-position
// motion model: frame i is initialized at the true pose of frame i - 1; the
// first two frames carry their true poses (the bootstrap pair of a monocular
// tracker), which also fixes a non-degenerate metric baseline.
SceneProblem GenerateSynthetic(const SynthConfig& config);

enum class ProblemFormat { kBal, kTracksCsv };

struct LoadOptions {
  // Defaults to the input path with the extension replaced by ".intrinsics".
  std::optional<std::filesystem::path> intrinsics_path;
};

std::filesystem::path IntrinsicsSidecarPath(const std::filesystem::path& path);

SceneProblem LoadProblem(const std::filesystem::path& path,
                         ProblemFormat format, const LoadOptions& options = {});
void SaveProblem(const SceneProblem& scene, const std::filesystem::path& path,
                 ProblemFormat format);

}  // namespace posepipe
