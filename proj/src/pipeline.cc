#include "posepipe/pipeline.h"

#include <chrono>
#include <condition_variable>
#include <deque>
#include <exception>
#include <fstream>
#include <memory>
#include <mutex>
#include <thread>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "posepipe/error.h"
#include "posepipe/evaluation.h"
#include "posepipe/global_align.h"

namespace posepipe {

SynthConfig SyntheticPreset(const std::string& name, std::uint64_t seed) {
  SynthConfig config;
  config.seed = seed;
  if (name == "loop-100") {
    config.num_frames = 100;
    config.num_landmarks = 1000;
  } else if (name == "loop-500") {
    config.num_frames = 500;
    config.num_landmarks = 4000;
    config.laps = 2;
    config.lap_rise = 0.5;
    config.pixel_noise = 0.5;
    config.prior_rotation_noise_deg = 1.0;
  } else if (name == "line-200") {
    config.shape = TrajectoryShape::kLine;
    config.num_frames = 200;
    config.num_landmarks = 2000;
    config.pixel_noise = 0.5;
  } else {
    throw Error(ErrorCode::kInvalidArgument,
                "unknown synthetic preset '" + name + "'");
  }
  return config;
}

void RunConfig::Finalize() {
  if (baseline) {
    partition.fixed_size = true;
    solver.mode = DampingMode::kStandard;
  }
}

namespace {

using Clock = std::chrono::steady_clock;

double SecondsSince(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Serialized global updates in block order.
class GlobalStage {
 public:
  GlobalStage(const SceneProblem& scene, const RunConfig& config)
      : scene_(scene), config_(config) {}

  void Process(std::shared_ptr<const LocalSolution> solution,
               int frames_so_far) {
    solutions_.push_back(std::move(solution));
    const LocalSolution& latest = *solutions_.back();
    std::vector<SharedCameraSet> shared;
    for (std::size_t k = 0; k + 1 < solutions_.size(); ++k) {
      if (auto s = CollectShared(*solutions_[k], latest)) {
        shared.push_back(std::move(*s));
      }
    }
    GlobalRecord record;
    record.update_id = latest.block_id;
    record.frames_so_far = frames_so_far;
    const auto start = Clock::now();
    const GlobalUpdateStats stats = graph_.Update(latest, shared);
    record.align_seconds = SecondsSince(start);
    record.sweeps = stats.sweeps;

    Compose();
    record.reprojection_error =
        EvaluateReprojection(scene_, trajectory_, landmarks_).cost;

    if (config_.baseline) {
      std::vector<FrameId> keyframes;
      int placed = 0;
      for (FrameId id = 0; id < static_cast<FrameId>(trajectory_.size()); ++id) {
        if (!trajectory_[id]) continue;
        if (placed++ % config_.global_ba_stride == 0) keyframes.push_back(id);
      }
      const GlobalBaTiming timing =
          KeyframeGlobalBa(scene_, keyframes, trajectory_, landmarks_,
                           config_.global_ba_iterations);
      record.global_ba_seconds = timing.seconds;
      record.global_ba_cameras = timing.num_cameras;
    }
    records_.push_back(record);
  }

  void Compose() {
    std::vector<const LocalSolution*> ptrs;
    for (const auto& s : solutions_) ptrs.push_back(s.get());
    const std::vector<Rotation3> rotations = graph_.Snapshot();
    const ComposedTrajectory composed =
        ComposeTrajectory(ptrs, rotations, scene_.NumFrames());
    trajectory_ = composed.poses;
    landmarks_ = RefineStructure(
        scene_, trajectory_,
        ComposeLandmarks(ptrs, rotations, composed, scene_.NumLandmarks()));
  }

  std::vector<GlobalRecord>& records() { return records_; }
  std::vector<std::optional<Pose>>& trajectory() { return trajectory_; }
  std::vector<std::optional<Eigen::Vector3d>>& landmarks() {
    return landmarks_;
  }

 private:
  const SceneProblem& scene_;
  const RunConfig& config_;
  BlockRotationGraph graph_;
  std::vector<std::shared_ptr<const LocalSolution>> solutions_;
  std::vector<GlobalRecord> records_;
  std::vector<std::optional<Pose>> trajectory_;
  std::vector<std::optional<Eigen::Vector3d>> landmarks_;
};

Error Tagged(const Error& e, int block_id) {
  const std::string message = e.what();
  if (message.rfind("block ", 0) == 0) return e;
  return Error(e.code(), "block " + std::to_string(block_id) + ": " + message);
}

struct GlobalJob {
  std::shared_ptr<const LocalSolution> solution;
  int frames_so_far = 0;
};

// Single consumer thread draining a FIFO of global jobs.
class GlobalWorker {
 public:
  explicit GlobalWorker(GlobalStage& stage)
      : stage_(stage), thread_([this] { Loop(); }) {}
  ~GlobalWorker() { Join(); }

  void Push(GlobalJob job) {
    {
      std::lock_guard lock(mutex_);
      queue_.push_back(std::move(job));
    }
    cv_.notify_one();
  }

  // Waits for the queue to drain; rethrows the first worker failure.
  void Close() {
    Join();
    if (failure_) std::rethrow_exception(std::exchange(failure_, nullptr));
  }

 private:
  void Join() {
    {
      std::lock_guard lock(mutex_);
      closed_ = true;
    }
    cv_.notify_one();
    if (thread_.joinable()) thread_.join();
  }

  void Loop() {
    for (;;) {
      GlobalJob job;
      {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [this] { return closed_ || !queue_.empty(); });
        if (queue_.empty()) return;
        job = std::move(queue_.front());
        queue_.pop_front();
      }
      if (failure_) continue;
      const int block_id = job.solution->block_id;
      try {
        stage_.Process(std::move(job.solution), job.frames_so_far);
      } catch (const Error& e) {
        failure_ = std::make_exception_ptr(Tagged(e, block_id));
      } catch (...) {
        failure_ = std::current_exception();
      }
    }
  }

  GlobalStage& stage_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<GlobalJob> queue_;
  bool closed_ = false;
  std::exception_ptr failure_;
  std::thread thread_;
};

[[noreturn]] void RethrowTagged(const Error& e, int block_id) {
  throw Tagged(e, block_id);
}

}  // namespace

RunReport RunPipeline(const RunConfig& input_config) {
  RunConfig config = input_config;
  config.Finalize();
  config.partition.Validate();
  if (config.synthetic.has_value() == config.input.has_value()) {
    throw Error(ErrorCode::kInvalidArgument,
                "exactly one of a synthetic scene or an input file is needed");
  }
  const SceneProblem scene = config.synthetic
                                 ? GenerateSynthetic(*config.synthetic)
                                 : LoadProblem(*config.input, config.input_format);

  RunReport report;
  report.mode = config.baseline ? "baseline" : "hybrid";
  report.num_frames = scene.NumFrames();
  report.num_landmarks = scene.NumLandmarks();

  LocalBaConfig local;
  local.cov_thr = config.cov_thr;
  local.use_forest = !config.baseline;
  local.solver = config.solver;

  GlobalStage stage(scene, config);
  std::unique_ptr<GlobalWorker> worker;
  if (!config.single_thread) worker = std::make_unique<GlobalWorker>(stage);

  Partitioner partitioner(config.partition);
  SolutionHistory history;
  auto handle = [&](const Block& block) {
    history.AddBlock(block);
    BlockRecord record;
    record.block_id = block.id;
    record.size = static_cast<int>(block.camera_ids.size());
    record.num_temporal = block.num_temporal;
    record.gamma = block.gamma;
    record.added = static_cast<int>(block.added_in_ids.size());
    auto solution = std::make_shared<LocalSolution>();
    const auto start = Clock::now();
    try {
      const SpanningForest forest =
          BuildMsf(BuildPoseGraph(block, scene), block, local.cov_thr);
      const InitialState init =
          InitializeBlock(block, forest, scene, history, local);
      report.missing_snapshots += static_cast<int>(init.missing_snapshots.size());
      *solution = SolveLocal(block, scene, init, local);
    } catch (const Error& e) {
      RethrowTagged(e, block.id);
    }
    record.seconds = SecondsSince(start);
    record.iterations = solution->iterations;
    record.initial_cost = solution->initial_cost;
    record.final_cost = solution->final_cost;
    record.stop_reason = std::string(StopReasonName(solution->reason));
    record.trace = solution->trace;
    report.total_iterations += record.iterations;
    report.blocks.push_back(std::move(record));
    spdlog::info("block {}: {} cameras ({} added), {} iterations, cost {:.6g}",
                 block.id, block.camera_ids.size(), block.added_in_ids.size(),
                 solution->iterations, solution->final_cost);
    history.Publish(block, solution);

    GlobalJob job{solution, block.LastTemporalId() + 1};
    if (worker) {
      worker->Push(std::move(job));
    } else {
      try {
        stage.Process(std::move(job.solution), job.frames_so_far);
      } catch (const Error& e) {
        RethrowTagged(e, block.id);
      }
    }
  };

  try {
    for (const Frame& frame : scene.frames()) {
      if (auto block = partitioner.Ingest(frame)) handle(*block);
    }
    if (auto block = partitioner.Finish()) handle(*block);
  } catch (...) {
    worker.reset();
    throw;
  }
  if (worker) worker->Close();

  report.global = std::move(stage.records());
  report.trajectory = std::move(stage.trajectory());
  report.landmarks = std::move(stage.landmarks());
  report.trajectory.resize(scene.NumFrames());
  report.landmarks.resize(scene.NumLandmarks());
  if (!report.global.empty()) {
    report.final_reprojection_error = report.global.back().reprojection_error;
  }
  const auto placed = std::count_if(report.trajectory.begin(),
                                    report.trajectory.end(),
                                    [](const auto& p) { return p.has_value(); });
  if (placed < scene.NumFrames()) {
    spdlog::warn("{} frames were not placed by any block",
                 scene.NumFrames() - placed);
  }
  if (scene.ground_truth() && placed >= 3) {
    report.ate_rmse =
        AbsoluteTrajectoryError(report.trajectory, scene.ground_truth()->poses)
            .rmse;
  }
  return report;
}

namespace {

std::ofstream OpenForWrite(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  return out;
}

void Close(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw Error(ErrorCode::kIoError, "write failed for " + path.string());
}

nlohmann::json ConfigJson(const RunConfig& config) {
  nlohmann::json j;
  j["baseline"] = config.baseline;
  j["seed"] = config.seed;
  j["cov_thr"] = config.cov_thr;
  j["partition"] = {{"gamma_thr", config.partition.gamma_thr},
                    {"beta_thr", config.partition.beta_thr},
                    {"n_alpha", config.partition.n_alpha},
                    {"n_thr", config.partition.n_thr},
                    {"fixed_size", config.partition.fixed_size}};
  j["solver"] = {
      {"mode", config.solver.mode == DampingMode::kStandard ? "standard"
                                                            : "self_adaptive"},
      {"lambda", config.solver.lambda},
      {"nu", config.solver.nu},
      {"xi", config.solver.xi},
      {"alpha0", config.solver.alpha0},
      {"max_iterations", config.solver.max_iterations}};
  if (config.input) {
    j["input"] = config.input->string();
  } else if (config.synthetic) {
    const SynthConfig& s = *config.synthetic;
    j["synthetic"] = {{"num_frames", s.num_frames},
                      {"num_landmarks", s.num_landmarks},
                      {"pixel_noise", s.pixel_noise},
                      {"laps", s.laps},
                      {"seed", s.seed}};
  }
  return j;
}

}  // namespace

void WriteOutputs(const RunReport& report, const RunConfig& input_config) {
  RunConfig config = input_config;
  config.Finalize();
  const std::filesystem::path& dir = config.out_dir;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIoError, "cannot create " + dir.string());

  WriteTrajectory(dir / "trajectory.txt", report.trajectory,
                  config.trajectory_format);

  {
    const auto path = dir / "blocks.csv";
    std::ofstream out = OpenForWrite(path);
    out << "block_id,size,gamma,added,iters,cost\n";
    for (const BlockRecord& b : report.blocks) {
      out << b.block_id << ',' << b.size << ',' << FormatReal(b.gamma) << ','
          << b.added << ',' << b.iterations << ',' << FormatReal(b.final_cost)
          << '\n';
    }
    Close(out, path);
  }
  {
    const auto path = dir / "global.csv";
    std::ofstream out = OpenForWrite(path);
    out << "update_id,frames_so_far,sweeps,reprojection_error\n";
    for (const GlobalRecord& g : report.global) {
      out << g.update_id << ',' << g.frames_so_far << ',' << g.sweeps << ','
          << FormatReal(g.reprojection_error) << '\n';
    }
    Close(out, path);
  }
  {
    const auto path = dir / "timings.csv";
    std::ofstream out = OpenForWrite(path);
    out << "block_id,frames_so_far,local_ms,align_ms,global_ba_ms,"
           "global_ba_cameras\n";
    for (std::size_t i = 0; i < report.blocks.size(); ++i) {
      const BlockRecord& b = report.blocks[i];
      const GlobalRecord g =
          i < report.global.size() ? report.global[i] : GlobalRecord{};
      out << b.block_id << ',' << g.frames_so_far << ','
          << FormatReal(b.seconds * 1e3) << ','
          << FormatReal(g.align_seconds * 1e3) << ','
          << FormatReal(g.global_ba_seconds * 1e3) << ','
          << g.global_ba_cameras << '\n';
    }
    Close(out, path);
  }
  for (const BlockRecord& b : report.blocks) {
    const auto path = dir / ("trace_" + std::to_string(b.block_id) + ".csv");
    std::ofstream out = OpenForWrite(path);
    out << "iter,cost,mu,nu,accepted\n";
    for (const TraceRow& row : b.trace) {
      out << row.iteration << ',' << FormatReal(row.cost) << ','
          << FormatReal(row.mu) << ',' << FormatReal(row.nu) << ','
          << (row.accepted ? 1 : 0) << '\n';
    }
    Close(out, path);
  }

  nlohmann::json j;
  j["config"] = ConfigJson(config);
  j["mode"] = report.mode;
  j["num_frames"] = report.num_frames;
  j["num_landmarks"] = report.num_landmarks;
  j["num_blocks"] = report.blocks.size();
  j["total_iterations"] = report.total_iterations;
  j["missing_snapshots"] = report.missing_snapshots;
  j["final_reprojection_error"] = report.final_reprojection_error;
  j["ate_rmse"] = report.ate_rmse ? nlohmann::json(*report.ate_rmse)
                                  : nlohmann::json(nullptr);
  nlohmann::json blocks = nlohmann::json::array();
  for (const BlockRecord& b : report.blocks) {
    blocks.push_back({{"id", b.block_id},
                      {"size", b.size},
                      {"temporal", b.num_temporal},
                      {"gamma", b.gamma},
                      {"added", b.added},
                      {"iterations", b.iterations},
                      {"initial_cost", b.initial_cost},
                      {"final_cost", b.final_cost},
                      {"stop_reason", b.stop_reason}});
  }
  j["blocks"] = std::move(blocks);
  nlohmann::json global = nlohmann::json::array();
  for (const GlobalRecord& g : report.global) {
    global.push_back({{"update_id", g.update_id},
                      {"frames_so_far", g.frames_so_far},
                      {"sweeps", g.sweeps},
                      {"reprojection_error", g.reprojection_error}});
  }
  j["global"] = std::move(global);
  const auto path = dir / "report.json";
  std::ofstream out = OpenForWrite(path);
  out << j.dump(2) << '\n';
  Close(out, path);
}

}  // namespace posepipe
