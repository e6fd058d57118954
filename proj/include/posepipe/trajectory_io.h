#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "posepipe/geometry.h"

namespace posepipe {

enum class TrajectoryFormat { kTum, kKitti };

// Parses "tum" or "kitti". Throws kInvalidArgument.
TrajectoryFormat ParseTrajectoryFormat(const std::string& name);

struct StampedPose {
  double timestamp = 0.0;
  // World to camera, like every Pose in this library. Files store the
  // inverse (camera to world), as the standard evaluation tools expect.
  Pose pose;
};

// Shortest round-trip representation; integers print without a fraction
// and negative zero prints as 0.
std::string FormatReal(double value);

// "timestamp tx ty tz qx qy qz qw". The timestamp always carries a decimal
// point; qw is made non-negative.
std::string FormatTumLine(double timestamp, const Pose& pose);
// Row-major upper 3x4 of the camera-to-world matrix.
std::string FormatKittiLine(const Pose& pose);

// One line per frame that has a pose, timestamps are frame ids. Throws
// kIoError.
void WriteTrajectory(const std::filesystem::path& path,
                     std::span<const std::optional<Pose>> poses,
                     TrajectoryFormat format);

// KITTI lines get their line index as timestamp. Throws kIoError and
// kParseError.
std::vector<StampedPose> ReadTrajectory(const std::filesystem::path& path,
                                        TrajectoryFormat format);

}  // namespace posepipe
