#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "posepipe/local_ba.h"
#include "posepipe/partitioner.h"
#include "posepipe/scene.h"
#include "posepipe/trajectory_io.h"

namespace posepipe {

// Named synthetic scenes: "loop-100" (noiseless), "loop-500" (two-lap
// helix, 0.5 px noise), "line-200". Throws kInvalidArgument.
SynthConfig SyntheticPreset(const std::string& name, std::uint64_t seed);

struct RunConfig {
  // Exactly one of the two.
  std::optional<SynthConfig> synthetic;
  std::optional<std::filesystem::path> input;
  ProblemFormat input_format = ProblemFormat::kBal;

  PartitionConfig partition;
  SolverConfig solver;
  int cov_thr = 15;
  std::uint64_t seed = 0;

  // Fixed-size partitions, classic Levenberg-Marquardt and motion-model
  // initialization. Also times a keyframe global bundle adjustment after
  // every block.
  bool baseline = false;
  // Every n-th placed frame is a keyframe of the reference global BA.
  int global_ba_stride = 5;
  int global_ba_iterations = 10;

  bool single_thread = false;
  // Empty: nothing is written.
  std::filesystem::path out_dir;
  TrajectoryFormat trajectory_format = TrajectoryFormat::kTum;

  // Applies the baseline switches to the partition and solver settings.
  void Finalize();
};

struct BlockRecord {
  int block_id = 0;
  int size = 0;
  int num_temporal = 0;
  double gamma = 0.0;
  int added = 0;
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  std::string stop_reason;
  double seconds = 0.0;
  std::vector<TraceRow> trace;
};

struct GlobalRecord {
  int update_id = 0;
  int frames_so_far = 0;
  int sweeps = 0;
  double align_seconds = 0.0;
  double reprojection_error = 0.0;
  // Baseline runs only.
  double global_ba_seconds = 0.0;
  int global_ba_cameras = 0;
};

struct RunReport {
  std::string mode;  // "hybrid" or "baseline"
  int num_frames = 0;
  int num_landmarks = 0;
  std::vector<BlockRecord> blocks;
  std::vector<GlobalRecord> global;
  std::vector<std::optional<Pose>> trajectory;
  std::vector<std::optional<Eigen::Vector3d>> landmarks;
  std::optional<double> ate_rmse;
  double final_reprojection_error = 0.0;
  int total_iterations = 0;
  int missing_snapshots = 0;
};

// Partition, local solves and global alignment over the whole stream.
// Global updates run on a worker thread unless single_thread is set; either
// way they are applied in block order. Module errors are rethrown tagged
// with the block id.
RunReport RunPipeline(const RunConfig& config);

// trajectory.txt, blocks.csv, global.csv, trace_<id>.csv, report.json and
// timings.csv. Everything but timings.csv depends only on the inputs.
// Throws kIoError.
void WriteOutputs(const RunReport& report, const RunConfig& config);

}  // namespace posepipe
