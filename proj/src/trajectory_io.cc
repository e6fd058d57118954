#include "posepipe/trajectory_io.h"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "posepipe/error.h"

namespace posepipe {

TrajectoryFormat ParseTrajectoryFormat(const std::string& name) {
  if (name == "tum") return TrajectoryFormat::kTum;
  if (name == "kitti") return TrajectoryFormat::kKitti;
  throw Error(ErrorCode::kInvalidArgument,
              "unknown trajectory format '" + name + "'");
}

std::string FormatReal(double value) {
  if (value == 0.0) value = 0.0;  // drops the sign of -0
  char buffer[64];
  const auto result = std::to_chars(buffer, buffer + sizeof(buffer), value);
  return std::string(buffer, result.ptr);
}

namespace {

std::string FormatTimestamp(double t) {
  std::string s = FormatReal(t);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

}  // namespace

std::string FormatTumLine(double timestamp, const Pose& pose) {
  const Pose c2w = pose.Inverse();
  const Eigen::Vector3d& t = c2w.translation();
  Eigen::Quaterniond q = c2w.rotation().quaternion();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  std::string line = FormatTimestamp(timestamp);
  for (const double v : {t.x(), t.y(), t.z(), q.x(), q.y(), q.z(), q.w()}) {
    line += ' ';
    line += FormatReal(v);
  }
  return line;
}

std::string FormatKittiLine(const Pose& pose) {
  const Eigen::Matrix<double, 3, 4> m = pose.Inverse().Matrix();
  std::string line;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) {
      if (!line.empty()) line += ' ';
      line += FormatReal(m(r, c));
    }
  }
  return line;
}

void WriteTrajectory(const std::filesystem::path& path,
                     std::span<const std::optional<Pose>> poses,
                     TrajectoryFormat format) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  for (std::size_t i = 0; i < poses.size(); ++i) {
    if (!poses[i]) continue;
    out << (format == TrajectoryFormat::kTum
                ? FormatTumLine(static_cast<double>(i), *poses[i])
                : FormatKittiLine(*poses[i]))
        << '\n';
  }
  out.flush();
  if (!out) throw Error(ErrorCode::kIoError, "write failed for " + path.string());
}

std::vector<StampedPose> ReadTrajectory(const std::filesystem::path& path,
                                        TrajectoryFormat format) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  const std::size_t expected = format == TrajectoryFormat::kTum ? 8 : 12;
  std::vector<StampedPose> out;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::vector<double> v;
    double x;
    while (fields >> x) v.push_back(x);
    if (!fields.eof() || v.size() != expected) {
      throw Error(ErrorCode::kParseError,
                  path.string() + ":" + std::to_string(line_number) +
                      ": expected " + std::to_string(expected) + " numbers");
    }
    StampedPose sp;
    Pose c2w;
    if (format == TrajectoryFormat::kTum) {
      sp.timestamp = v[0];
      const Eigen::Quaterniond q(v[7], v[4], v[5], v[6]);
      if (q.norm() < 1e-12) {
        throw Error(ErrorCode::kParseError,
                    path.string() + ":" + std::to_string(line_number) +
                        ": zero quaternion");
      }
      c2w = Pose(Rotation3::FromQuaternion(q.normalized()),
                 Eigen::Vector3d(v[1], v[2], v[3]));
    } else {
      sp.timestamp = static_cast<double>(out.size());
      Eigen::Matrix3d r;
      r << v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10];
      c2w = Pose(Rotation3::FromMatrix(r), Eigen::Vector3d(v[3], v[7], v[11]));
    }
    sp.pose = c2w.Inverse();
    out.push_back(sp);
  }
  return out;
}

}  // namespace posepipe
