// Problem file readers and writers.
//
// bal: Bundle-Adjustment-in-the-Large text files. Header "m n k", k lines
// "cam_idx pt_idx u v", then 9 parameters per camera (Rodrigues rotation,
// translation, focal length, k1, k2) and 3 per point. BAL cameras look down
// their -z axis and measure image y upward; both conventions are converted to
// the pinhole model used here (z forward, y down). Distortion is ignored.
//
// tracks-csv: rows "frame_id,landmark_id,u,v" in pixels. Optional sidecars
// "<stem>.poses.csv" (frame_id,qw,qx,qy,qz,tx,ty,tz; world-to-camera) and
// "<stem>.landmarks.csv" (landmark_id,x,y,z) carry initial estimates.
//
// Both formats read intrinsics from a "fx fy cx cy" sidecar when present.

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "posepipe/error.h"
#include "posepipe/scene.h"

namespace posepipe {
namespace {

// Sign flip between the BAL camera frame and ours.
const Eigen::Matrix3d kBalFlip = Eigen::Vector3d(1.0, -1.0, -1.0).asDiagonal();

struct Token {
  std::string text;
  int line = 0;
};

std::string ReadFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<Token> Tokenize(const std::string& text, std::string_view separators) {
  std::vector<Token> tokens;
  int line = 1;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) {
      tokens.push_back({current, line});
      current.clear();
    }
  };
  for (char c : text) {
    if (c == '\n') {
      flush();
      ++line;
    } else if (c == '\r' || separators.find(c) != std::string_view::npos) {
      flush();
    } else {
      current.push_back(c);
    }
  }
  flush();
  return tokens;
}

[[noreturn]] void ThrowParse(const std::filesystem::path& path, int line,
                             const std::string& what) {
  std::ostringstream msg;
  msg << path.string() << ":" << line << ": " << what;
  throw Error(ErrorCode::kParseError, msg.str());
}

[[noreturn]] void ThrowRange(const std::filesystem::path& path, int line,
                             const std::string& what) {
  std::ostringstream msg;
  msg << path.string() << ":" << line << ": " << what;
  throw Error(ErrorCode::kIndexOutOfRange, msg.str());
}

double ParseDouble(const std::filesystem::path& path, const Token& token) {
  double value = 0.0;
  const char* begin = token.text.data();
  const char* end = begin + token.text.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || !std::isfinite(value)) {
    ThrowParse(path, token.line, "expected a number, got '" + token.text + "'");
  }
  return value;
}

long long ParseInt(const std::filesystem::path& path, const Token& token) {
  long long value = 0;
  const char* begin = token.text.data();
  const char* end = begin + token.text.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) {
    ThrowParse(path, token.line,
               "expected an integer, got '" + token.text + "'");
  }
  return value;
}

class TokenCursor {
 public:
  TokenCursor(const std::filesystem::path& path, std::vector<Token> tokens)
      : path_(path), tokens_(std::move(tokens)) {}

  const Token& Next() {
    if (pos_ >= tokens_.size()) {
      const int line = tokens_.empty() ? 1 : tokens_.back().line;
      ThrowParse(path_, line, "unexpected end of file");
    }
    return tokens_[pos_++];
  }
  double NextDouble() { return ParseDouble(path_, Next()); }
  long long NextInt() { return ParseInt(path_, Next()); }
  bool AtEnd() const { return pos_ >= tokens_.size(); }
  int Line() const { return AtEnd() ? -1 : tokens_[pos_].line; }

 private:
  std::filesystem::path path_;
  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
};

std::optional<Intrinsics> ReadIntrinsics(const std::filesystem::path& path,
                                         bool required) {
  if (!std::filesystem::exists(path)) {
    if (required) {
      throw Error(ErrorCode::kIoError,
                  "missing intrinsics sidecar " + path.string());
    }
    return std::nullopt;
  }
  TokenCursor cursor(path, Tokenize(ReadFile(path), " \t"));
  Intrinsics K;
  K.fx = cursor.NextDouble();
  K.fy = cursor.NextDouble();
  K.cx = cursor.NextDouble();
  K.cy = cursor.NextDouble();
  if (!cursor.AtEnd()) {
    ThrowParse(path, cursor.Line(), "trailing data after fx fy cx cy");
  }
  K.Validate();
  return K;
}

void WriteIntrinsics(const Intrinsics& K, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  }
  out.precision(17);
  out << K.fx << ' ' << K.fy << ' ' << K.cx << ' ' << K.cy << '\n';
  if (!out) {
    throw Error(ErrorCode::kIoError, "write failed for " + path.string());
  }
}

SceneProblem LoadBal(const std::filesystem::path& path,
                     const std::filesystem::path& intrinsics_path) {
  TokenCursor cursor(path, Tokenize(ReadFile(path), " \t"));
  const long long m = cursor.NextInt();
  const long long n = cursor.NextInt();
  const long long k = cursor.NextInt();
  if (m < 0 || n < 0 || k < 0) {
    ThrowParse(path, 1, "negative count in header");
  }

  struct RawObservation {
    long long cam, point;
    double u, v;
    int line;
  };
  std::vector<RawObservation> raw(k);
  for (long long i = 0; i < k; ++i) {
    RawObservation& obs = raw[i];
    const Token& cam = cursor.Next();
    obs.line = cam.line;
    obs.cam = ParseInt(path, cam);
    obs.point = cursor.NextInt();
    obs.u = cursor.NextDouble();
    obs.v = cursor.NextDouble();
    if (obs.cam < 0 || obs.cam >= m) {
      ThrowRange(path, obs.line,
                 "camera index " + std::to_string(obs.cam) + " out of range");
    }
    if (obs.point < 0 || obs.point >= n) {
      ThrowRange(path, obs.line,
                 "point index " + std::to_string(obs.point) + " out of range");
    }
  }

  std::vector<Pose> poses(m);
  std::vector<double> focals(m);
  bool has_distortion = false;
  for (long long i = 0; i < m; ++i) {
    Eigen::Vector3d omega, t;
    for (int c = 0; c < 3; ++c) omega[c] = cursor.NextDouble();
    for (int c = 0; c < 3; ++c) t[c] = cursor.NextDouble();
    focals[i] = cursor.NextDouble();
    const double k1 = cursor.NextDouble();
    const double k2 = cursor.NextDouble();
    has_distortion = has_distortion || k1 != 0.0 || k2 != 0.0;
    const Eigen::Matrix3d r_bal = ExpMap(omega).Matrix();
    poses[i] = Pose(Rotation3::FromMatrix(kBalFlip * r_bal), kBalFlip * t);
  }
  std::vector<Landmark> landmarks(n);
  for (long long j = 0; j < n; ++j) {
    landmarks[j].id = static_cast<LandmarkId>(j);
    for (int c = 0; c < 3; ++c) landmarks[j].position[c] = cursor.NextDouble();
  }
  if (!cursor.AtEnd()) {
    ThrowParse(path, cursor.Line(), "trailing data after point parameters");
  }
  if (m < 2) {
    ThrowParse(path, 1, "need at least two cameras");
  }
  if (has_distortion) {
    spdlog::warn("{}: radial distortion parameters are ignored",
                 path.string());
  }

  Intrinsics K;
  if (auto sidecar = ReadIntrinsics(intrinsics_path, false)) {
    K = *sidecar;
  } else {
    K = Intrinsics{focals[0], focals[0], 0.0, 0.0};
    for (double f : focals) {
      if (f != focals[0]) {
        spdlog::warn("{}: per-camera focal lengths differ; using {}",
                     path.string(), focals[0]);
        break;
      }
    }
  }

  std::vector<Frame> frames(m);
  for (long long i = 0; i < m; ++i) {
    frames[i].id = static_cast<FrameId>(i);
    frames[i].timestamp = static_cast<double>(i);
  }
  std::unordered_set<long long> seen;
  for (const RawObservation& obs : raw) {
    Frame& frame = frames[obs.cam];
    if (!seen.insert(obs.cam * n + obs.point).second) {
      ThrowParse(path, obs.line, "duplicate observation of point " +
                                     std::to_string(obs.point));
    }
    frame.observations.push_back(
        {static_cast<LandmarkId>(obs.point),
         Eigen::Vector2d(obs.u + K.cx, K.cy - obs.v)});
  }
  return SceneProblem(K, std::move(frames), std::move(landmarks),
                      std::move(poses));
}

void SaveBal(const SceneProblem& scene, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  }
  out.precision(17);
  const Intrinsics& K = scene.intrinsics();
  out << scene.NumFrames() << ' ' << scene.NumLandmarks() << ' '
      << scene.NumObservations() << '\n';
  for (const Frame& frame : scene.frames()) {
    for (const Observation& obs : frame.observations) {
      out << frame.id << ' ' << obs.landmark << ' ' << obs.pixel.x() - K.cx
          << ' ' << K.cy - obs.pixel.y() << '\n';
    }
  }
  for (const Pose& pose : scene.poses()) {
    const Eigen::Matrix3d r_bal = kBalFlip * pose.rotation().Matrix();
    const Eigen::Vector3d omega =
        LogMapUnchecked(Rotation3::FromMatrix(r_bal));
    const Eigen::Vector3d t = kBalFlip * pose.translation();
    for (int c = 0; c < 3; ++c) out << omega[c] << '\n';
    for (int c = 0; c < 3; ++c) out << t[c] << '\n';
    out << K.fx << "\n0\n0\n";
  }
  for (const Landmark& lm : scene.landmarks()) {
    for (int c = 0; c < 3; ++c) out << lm.position[c] << '\n';
  }
  if (!out) {
    throw Error(ErrorCode::kIoError, "write failed for " + path.string());
  }
  WriteIntrinsics(K, IntrinsicsSidecarPath(path));
}

std::filesystem::path SidecarPath(const std::filesystem::path& path,
                                  const std::string& suffix) {
  std::filesystem::path p = path;
  p.replace_extension(suffix);
  return p;
}

// Splits CSV content into rows of fields, skipping blank lines. A first row
// whose leading field is not numeric is treated as a header.
std::vector<std::vector<Token>> ReadCsvRows(const std::filesystem::path& path) {
  const std::string text = ReadFile(path);
  std::vector<std::vector<Token>> rows;
  std::istringstream lines(text);
  std::string line;
  int number = 0;
  while (std::getline(lines, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<Token> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      std::string field = line.substr(start, comma - start);
      const auto first = field.find_first_not_of(" \t");
      const auto last = field.find_last_not_of(" \t");
      field = first == std::string::npos ? "" : field.substr(first, last - first + 1);
      fields.push_back({field, number});
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    rows.push_back(std::move(fields));
  }
  if (!rows.empty()) {
    const std::string& head = rows.front().front().text;
    double ignored;
    auto [ptr, ec] =
        std::from_chars(head.data(), head.data() + head.size(), ignored);
    if (head.empty() || ec != std::errc()) {
      rows.erase(rows.begin());
    }
  }
  return rows;
}

void RequireFields(const std::filesystem::path& path,
                   const std::vector<Token>& row, std::size_t count) {
  if (row.size() != count) {
    ThrowParse(path, row.front().line,
               "expected " + std::to_string(count) + " fields, got " +
                   std::to_string(row.size()));
  }
}

SceneProblem LoadTracksCsv(const std::filesystem::path& path,
                           const std::filesystem::path& intrinsics_path) {
  const Intrinsics K = *ReadIntrinsics(intrinsics_path, true);

  struct RawObservation {
    long long frame, landmark;
    double u, v;
    int line;
  };
  std::vector<RawObservation> raw;
  for (const auto& row : ReadCsvRows(path)) {
    RequireFields(path, row, 4);
    raw.push_back({ParseInt(path, row[0]), ParseInt(path, row[1]),
                   ParseDouble(path, row[2]), ParseDouble(path, row[3]),
                   row[0].line});
  }

  std::map<long long, FrameId> frame_index;
  for (const auto& obs : raw) frame_index.emplace(obs.frame, 0);
  const auto poses_path = SidecarPath(path, ".poses.csv");
  std::map<long long, std::pair<Pose, int>> pose_rows;
  if (std::filesystem::exists(poses_path)) {
    for (const auto& row : ReadCsvRows(poses_path)) {
      RequireFields(poses_path, row, 8);
      const long long id = ParseInt(poses_path, row[0]);
      Eigen::Quaterniond q(ParseDouble(poses_path, row[1]),
                           ParseDouble(poses_path, row[2]),
                           ParseDouble(poses_path, row[3]),
                           ParseDouble(poses_path, row[4]));
      const Eigen::Vector3d t(ParseDouble(poses_path, row[5]),
                              ParseDouble(poses_path, row[6]),
                              ParseDouble(poses_path, row[7]));
      if (!(q.norm() > 0.0)) {
        ThrowParse(poses_path, row[0].line, "zero quaternion");
      }
      pose_rows[id] = {Pose(Rotation3::FromQuaternion(q), t), row[0].line};
      frame_index.emplace(id, 0);
    }
  }
  FrameId next = 0;
  for (auto& [id, index] : frame_index) index = next++;
  if (next < 2) {
    ThrowParse(path, 1, "need at least two frames");
  }

  const auto landmarks_path = SidecarPath(path, ".landmarks.csv");
  std::vector<Landmark> landmarks;
  bool have_landmarks = false;
  if (std::filesystem::exists(landmarks_path)) {
    have_landmarks = true;
    for (const auto& row : ReadCsvRows(landmarks_path)) {
      RequireFields(landmarks_path, row, 4);
      const long long id = ParseInt(landmarks_path, row[0]);
      if (id != static_cast<long long>(landmarks.size())) {
        ThrowRange(landmarks_path, row[0].line,
                   "landmark ids must be dense and in order");
      }
      landmarks.push_back(
          {static_cast<LandmarkId>(id),
           Eigen::Vector3d(ParseDouble(landmarks_path, row[1]),
                           ParseDouble(landmarks_path, row[2]),
                           ParseDouble(landmarks_path, row[3]))});
    }
  } else {
    long long max_id = -1;
    for (const auto& obs : raw) max_id = std::max(max_id, obs.landmark);
    landmarks.resize(max_id + 1);
    for (long long j = 0; j <= max_id; ++j) {
      landmarks[j].id = static_cast<LandmarkId>(j);
    }
  }

  std::vector<Frame> frames(frame_index.size());
  for (const auto& [id, index] : frame_index) {
    frames[index].id = index;
    frames[index].timestamp = static_cast<double>(id);
  }
  std::vector<bool> initialized(landmarks.size(), have_landmarks);
  std::unordered_set<long long> seen;
  const long long n = static_cast<long long>(landmarks.size());
  for (const auto& obs : raw) {
    if (obs.landmark < 0 ||
        obs.landmark >= static_cast<long long>(landmarks.size())) {
      ThrowRange(path, obs.line, "landmark id " +
                                     std::to_string(obs.landmark) +
                                     " out of range");
    }
    Frame& frame = frames[frame_index.at(obs.frame)];
    const LandmarkId lm = static_cast<LandmarkId>(obs.landmark);
    if (!seen.insert(static_cast<long long>(frame.id) * n + lm).second) {
      ThrowParse(path, obs.line,
                 "duplicate observation of landmark " + std::to_string(lm));
    }
    frame.observations.push_back({lm, Eigen::Vector2d(obs.u, obs.v)});
    if (!initialized[lm]) {
      // Without estimates, place the point at unit depth along its first ray.
      landmarks[lm].position = Eigen::Vector3d((obs.u - K.cx) / K.fx,
                                               (obs.v - K.cy) / K.fy, 1.0);
      initialized[lm] = true;
    }
  }

  std::vector<Pose> poses(frames.size());
  if (!pose_rows.empty()) {
    for (const auto& [id, index] : frame_index) {
      auto it = pose_rows.find(id);
      if (it == pose_rows.end()) {
        ThrowRange(poses_path, 1,
                   "no pose for frame " + std::to_string(id));
      }
      poses[index] = it->second.first;
    }
  }
  return SceneProblem(K, std::move(frames), std::move(landmarks),
                      std::move(poses));
}

void SaveTracksCsv(const SceneProblem& scene,
                   const std::filesystem::path& path) {
  auto open = [](const std::filesystem::path& p) {
    std::ofstream out(p);
    if (!out) throw Error(ErrorCode::kIoError, "cannot write " + p.string());
    out.precision(17);
    return out;
  };
  auto check = [](std::ofstream& out, const std::filesystem::path& p) {
    if (!out) throw Error(ErrorCode::kIoError, "write failed for " + p.string());
  };
  auto frame_label = [](const Frame& f) {
    return static_cast<long long>(std::llround(f.timestamp));
  };
  {
    std::ofstream out = open(path);
    out << "frame_id,landmark_id,u,v\n";
    for (const Frame& frame : scene.frames()) {
      for (const Observation& obs : frame.observations) {
        out << frame_label(frame) << ',' << obs.landmark << ','
            << obs.pixel.x() << ',' << obs.pixel.y() << '\n';
      }
    }
    check(out, path);
  }
  {
    const auto p = SidecarPath(path, ".poses.csv");
    std::ofstream out = open(p);
    out << "frame_id,qw,qx,qy,qz,tx,ty,tz\n";
    for (const Frame& frame : scene.frames()) {
      const Pose& pose = scene.poses()[frame.id];
      const Eigen::Quaterniond& q = pose.rotation().quaternion();
      const Eigen::Vector3d& t = pose.translation();
      out << frame_label(frame) << ',' << q.w() << ',' << q.x() << ','
          << q.y() << ',' << q.z() << ',' << t.x() << ',' << t.y() << ','
          << t.z() << '\n';
    }
    check(out, p);
  }
  {
    const auto p = SidecarPath(path, ".landmarks.csv");
    std::ofstream out = open(p);
    out << "landmark_id,x,y,z\n";
    for (const Landmark& lm : scene.landmarks()) {
      out << lm.id << ',' << lm.position.x() << ',' << lm.position.y() << ','
          << lm.position.z() << '\n';
    }
    check(out, p);
  }
  WriteIntrinsics(scene.intrinsics(), IntrinsicsSidecarPath(path));
}

}  // namespace

std::filesystem::path IntrinsicsSidecarPath(const std::filesystem::path& path) {
  return SidecarPath(path, ".intrinsics");
}

SceneProblem LoadProblem(const std::filesystem::path& path,
                         ProblemFormat format, const LoadOptions& options) {
  const auto intrinsics_path =
      options.intrinsics_path.value_or(IntrinsicsSidecarPath(path));
  switch (format) {
    case ProblemFormat::kBal:
      return LoadBal(path, intrinsics_path);
    case ProblemFormat::kTracksCsv:
      return LoadTracksCsv(path, intrinsics_path);
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown problem format");
}

void SaveProblem(const SceneProblem& scene, const std::filesystem::path& path,
                 ProblemFormat format) {
  switch (format) {
    case ProblemFormat::kBal:
      SaveBal(scene, path);
      return;
    case ProblemFormat::kTracksCsv:
      SaveTracksCsv(scene, path);
      return;
  }
}

}  // namespace posepipe
