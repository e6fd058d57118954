#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "posepipe/error.h"
#include "posepipe/pipeline.h"
#include "posepipe/trajectory_io.h"
#include "test_util.h"

namespace posepipe {
namespace {

namespace fs = std::filesystem;

fs::path TempDir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("posepipe_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<std::string> ReadLines(const fs::path& path) {
  std::ifstream in(path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

std::vector<std::string> SplitCsv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  return out;
}

TEST(TrajectoryIo, IdentityLines) {
  EXPECT_EQ(FormatTumLine(0.0, Pose::Identity()), "0.0 0 0 0 0 0 0 1");
  EXPECT_EQ(FormatKittiLine(Pose::Identity()), "1 0 0 0 0 1 0 0 0 0 1 0");
}

TEST(TrajectoryIo, FormatReal) {
  EXPECT_EQ(FormatReal(-0.0), "0");
  EXPECT_EQ(FormatReal(2.0), "2");
  EXPECT_EQ(FormatReal(0.1), "0.1");
  EXPECT_EQ(std::stod(FormatReal(1.0 / 3.0)), 1.0 / 3.0);
}

TEST(TrajectoryIo, StoresCameraToWorld) {
  const Pose pose = Pose::FromCenter(Rotation3::Identity(), {1.0, 2.0, 3.0});
  EXPECT_EQ(FormatTumLine(7.0, pose), "7.0 1 2 3 0 0 0 1");
}

TEST(TrajectoryIo, RoundTrip) {
  std::mt19937_64 rng(1);
  std::vector<std::optional<Pose>> poses;
  for (int i = 0; i < 50; ++i) {
    if (i == 17) {
      poses.emplace_back();
    } else {
      poses.emplace_back(testing::RandomPose(rng, 10.0));
    }
  }
  const fs::path dir = TempDir("roundtrip");
  for (const TrajectoryFormat format :
       {TrajectoryFormat::kTum, TrajectoryFormat::kKitti}) {
    const fs::path path = dir / "traj.txt";
    WriteTrajectory(path, poses, format);
    const std::vector<StampedPose> read = ReadTrajectory(path, format);
    ASSERT_EQ(read.size(), 49u);
    std::size_t k = 0;
    for (int i = 0; i < 50; ++i) {
      if (!poses[i]) continue;
      if (format == TrajectoryFormat::kTum) {
        EXPECT_EQ(read[k].timestamp, static_cast<double>(i));
      }
      EXPECT_LT((read[k].pose.Matrix() - poses[i]->Matrix()).norm(), 1e-9);
      ++k;
    }
  }
}

TEST(TrajectoryIo, MalformedLineThrows) {
  const fs::path path = TempDir("malformed") / "bad.txt";
  std::ofstream(path) << "0.0 1 2 3\n";
  try {
    ReadTrajectory(path, TrajectoryFormat::kTum);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kParseError);
  }
  try {
    ReadTrajectory(path.parent_path() / "missing.txt", TrajectoryFormat::kTum);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIoError);
  }
}

RunConfig Loop100(const fs::path& out) {
  RunConfig config;
  config.synthetic = SyntheticPreset("loop-100", 0);
  config.single_thread = true;
  config.out_dir = out;
  return config;
}

TEST(Pipeline, NoiselessLoopRecoversTrajectory) {
  const RunReport report = RunPipeline(Loop100({}));
  ASSERT_TRUE(report.ate_rmse.has_value());
  EXPECT_LT(*report.ate_rmse, 1e-6);
  EXPECT_EQ(report.trajectory.size(), 100u);
  for (const auto& pose : report.trajectory) EXPECT_TRUE(pose.has_value());
}

TEST(Pipeline, CsvTotalsMatchReport) {
  const RunConfig config = Loop100(TempDir("csv"));
  const RunReport report = RunPipeline(config);
  WriteOutputs(report, config);
  const auto blocks = ReadLines(config.out_dir / "blocks.csv");
  ASSERT_EQ(blocks.size(), report.blocks.size() + 1);
  EXPECT_EQ(report.blocks.size(), 3u);
  int iterations = 0;
  for (std::size_t i = 1; i < blocks.size(); ++i) {
    const auto fields = SplitCsv(blocks[i]);
    ASSERT_EQ(fields.size(), 6u);
    iterations += std::stoi(fields[4]);
    EXPECT_EQ(std::stod(fields[5]), report.blocks[i - 1].final_cost);
  }
  EXPECT_EQ(iterations, report.total_iterations);
  const auto global = ReadLines(config.out_dir / "global.csv");
  ASSERT_EQ(global.size(), report.global.size() + 1);
  EXPECT_EQ(std::stod(SplitCsv(global.back())[3]),
            report.final_reprojection_error);
  EXPECT_EQ(ReadLines(config.out_dir / "trajectory.txt").size(), 100u);
  for (const BlockRecord& b : report.blocks) {
    const auto trace =
        ReadLines(config.out_dir / ("trace_" + std::to_string(b.block_id) + ".csv"));
    EXPECT_EQ(trace.front(), "iter,cost,mu,nu,accepted");
    EXPECT_EQ(trace.size(), b.trace.size() + 1);
  }
}

TEST(Pipeline, EmptyReportWritesHeadersOnly) {
  RunConfig config = Loop100(TempDir("empty"));
  RunReport report;
  report.mode = "hybrid";
  WriteOutputs(report, config);
  EXPECT_EQ(ReadLines(config.out_dir / "blocks.csv").size(), 1u);
  EXPECT_EQ(ReadLines(config.out_dir / "global.csv").size(), 1u);
  EXPECT_EQ(ReadLines(config.out_dir / "timings.csv").size(), 1u);
  EXPECT_EQ(ReadLines(config.out_dir / "trajectory.txt").size(), 0u);
}

TEST(Pipeline, ThreadedRunMatchesSingleThread) {
  RunConfig config = Loop100({});
  config.synthetic = SyntheticPreset("line-200", 3);
  const RunReport a = RunPipeline(config);
  config.single_thread = false;
  const RunReport b = RunPipeline(config);
  ASSERT_EQ(a.trajectory.size(), b.trajectory.size());
  for (std::size_t i = 0; i < a.trajectory.size(); ++i) {
    ASSERT_EQ(a.trajectory[i].has_value(), b.trajectory[i].has_value());
    if (a.trajectory[i]) {
      EXPECT_EQ(a.trajectory[i]->Matrix(), b.trajectory[i]->Matrix());
    }
  }
  EXPECT_EQ(a.final_reprojection_error, b.final_reprojection_error);
}

TEST(Pipeline, BaselineUsesFixedBlocks) {
  RunConfig config = Loop100({});
  config.baseline = true;
  const RunReport report = RunPipeline(config);
  EXPECT_EQ(report.mode, "baseline");
  for (const BlockRecord& b : report.blocks) EXPECT_EQ(b.added, 0);
  EXPECT_EQ(report.blocks.front().num_temporal, 50);
  EXPECT_GT(report.global.back().global_ba_cameras, 0);
}

TEST(Pipeline, RejectsAmbiguousInput) {
  RunConfig config = Loop100({});
  config.input = "scene.bal";
  try {
    RunPipeline(config);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidArgument);
  }
}

TEST(Cli, ExitCodes) {
  const std::string cli = POSEPIPE_CLI;
  const fs::path dir = TempDir("cli");
  auto run = [&](const std::string& args) {
    const int status = std::system((cli + " " + args + " > " +
                                    (dir / "log.txt").string() + " 2>&1")
                                       .c_str());
    return WEXITSTATUS(status);
  };
  EXPECT_EQ(run("--synthetic loop-100 --single-thread --out " +
                (dir / "ok").string()),
            0);
  EXPECT_TRUE(fs::exists(dir / "ok" / "report.json"));
  EXPECT_EQ(run("--input " + (dir / "missing.bal").string()), 1);
  EXPECT_EQ(run("--synthetic no-such-preset"), 1);
  EXPECT_EQ(run("--synthetic loop-100 --traj-format xyz"), 1);
}

}  // namespace
}  // namespace posepipe
