#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "posepipe/error.h"
#include "posepipe/pipeline.h"

namespace {

// POSEPIPE_LOG=trace|debug|info|warn|error|critical|off, default info.
void ConfigureLogging() {
  auto logger = spdlog::stderr_color_mt("posepipe");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("POSEPIPE_LOG")) {
    const auto level = spdlog::level::from_str(env);
    if (level == spdlog::level::off && std::string(env) != "off") {
      spdlog::warn("POSEPIPE_LOG: unknown level '{}'", env);
    } else {
      spdlog::set_level(level);
    }
  }
}

int ExitCode(const posepipe::Error& e) {
  switch (e.code()) {
    case posepipe::ErrorCode::kSolverDiverged:
      return 2;
    default:
      return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  using namespace posepipe;
  ConfigureLogging();

  CLI::App app{"Streaming bundle adjustment over co-visibility blocks"};
  RunConfig config;
  std::string input, synthetic, input_format = "bal", traj_format = "tum";
  std::string out_dir = "posepipe_out";
  auto* input_opt =
      app.add_option("--input", input, "Problem file (BAL or tracks CSV)");
  auto* synth_opt = app.add_option(
      "--synthetic", synthetic, "Synthetic preset: loop-100, loop-500, line-200");
  input_opt->excludes(synth_opt);
  app.add_option("--input-format", input_format, "bal or tracks-csv")
      ->check(CLI::IsMember({"bal", "tracks-csv"}));
  app.add_option("--gamma-thr", config.partition.gamma_thr,
                 "Local co-visibility threshold");
  app.add_option("--beta-thr", config.partition.beta_thr,
                 "Add-in overlap threshold");
  app.add_option("--n-alpha", config.partition.n_alpha,
                 "Maximum added-in cameras per block");
  app.add_option("--n-thr", config.partition.n_thr,
                 "Maximum temporal frames per block");
  app.add_option("--cov-thr", config.cov_thr,
                 "Minimum shared landmarks for a pose-graph edge");
  app.add_option("--lambda", config.solver.lambda, "Damping exponent");
  app.add_option("--nu", config.solver.nu, "Trust-ratio pivot");
  app.add_option("--xi", config.solver.xi, "Damping floor factor");
  app.add_option("--alpha0", config.solver.alpha0, "Initial damping scale");
  app.add_option("--seed", config.seed, "Seed of the synthetic scene");
  app.add_flag("--baseline", config.baseline,
               "Fixed-size blocks with classic Levenberg-Marquardt");
  app.add_flag("--single-thread", config.single_thread,
               "Run global updates inline (bitwise reproducible)");
  app.add_option("--out", out_dir, "Output directory");
  app.add_option("--traj-format", traj_format, "tum or kitti")
      ->check(CLI::IsMember({"tum", "kitti"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (input.empty() && synthetic.empty()) {
      throw Error(ErrorCode::kInvalidArgument,
                  "one of --input or --synthetic is required");
    }
    if (!input.empty()) {
      config.input = input;
      config.input_format = input_format == "bal" ? ProblemFormat::kBal
                                                  : ProblemFormat::kTracksCsv;
    } else {
      config.synthetic = SyntheticPreset(synthetic, config.seed);
    }
    config.out_dir = out_dir;
    config.trajectory_format = ParseTrajectoryFormat(traj_format);

    const RunReport report = RunPipeline(config);
    WriteOutputs(report, config);
    std::printf("%s: %zu blocks, %d iterations, reprojection error %.6g",
                report.mode.c_str(), report.blocks.size(),
                report.total_iterations, report.final_reprojection_error);
    if (report.ate_rmse) std::printf(", ATE %.6g", *report.ate_rmse);
    std::printf("\n");
    return 0;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return ExitCode(e);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
}
