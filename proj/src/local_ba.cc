#include "posepipe/local_ba.h"

#include <algorithm>
#include <numbers>
#include <numeric>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <spdlog/spdlog.h>

#include "posepipe/error.h"

namespace posepipe {
namespace {

constexpr double kGaugeEpsilon = 1e-12;
// Landmarks whose viewing rays never diverge by more than this carry no
// depth information.
constexpr double kMinParallaxRad = 0.25 * std::numbers::pi / 180.0;

long long EdgeKey(int a, int b, int n) {
  if (a > b) std::swap(a, b);
  return static_cast<long long>(a) * n + b;
}

Eigen::Matrix<double, 2, 3> ProjectionJacobian(const Intrinsics& K,
                                               const Eigen::Vector3d& p) {
  const double inv_z = 1.0 / p.z();
  Eigen::Matrix<double, 2, 3> j;
  j << K.fx * inv_z, 0.0, -K.fx * p.x() * inv_z * inv_z,  //
      0.0, K.fy * inv_z, -K.fy * p.y() * inv_z * inv_z;
  return j;
}

Eigen::Vector2d ProjectCamera(const Intrinsics& K, const Eigen::Vector3d& p) {
  return Eigen::Vector2d(K.fx * p.x() / p.z() + K.cx,
                         K.fy * p.y() / p.z() + K.cy);
}

struct UnionFind {
  explicit UnionFind(int n) : parent(n) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  int Find(int v) {
    while (parent[v] != v) {
      parent[v] = parent[parent[v]];
      v = parent[v];
    }
    return v;
  }
  bool Unite(int a, int b) {
    a = Find(a);
    b = Find(b);
    if (a == b) return false;
    parent[std::max(a, b)] = std::min(a, b);
    return true;
  }
  std::vector<int> parent;
};

}  // namespace

// ---------------------------------------------------------------------------
// Pose graph and spanning forest

int PoseGraph::IndexOf(FrameId id) const {
  const auto it = std::find(vertices.begin(), vertices.end(), id);
  if (it == vertices.end()) {
    throw Error(ErrorCode::kIndexOutOfRange,
                "frame " + std::to_string(id) + " is not in the pose graph");
  }
  return static_cast<int>(it - vertices.begin());
}

int PoseGraph::Weight(int a, int b) const {
  const auto it =
      weights_.find(EdgeKey(a, b, static_cast<int>(vertices.size())));
  return it == weights_.end() ? 0 : it->second;
}

PoseGraph BuildPoseGraph(const Block& block, const SceneProblem& scene) {
  PoseGraph graph;
  graph.vertices = block.camera_ids;
  const int n = static_cast<int>(graph.vertices.size());
  for (int a = 0; a < n; ++a) {
    const Frame& fa = scene.frame(graph.vertices[a]);
    for (int b = a + 1; b < n; ++b) {
      const int w = CovisibleCount(fa, scene.frame(graph.vertices[b]));
      if (w > 0) {
        graph.edges.push_back({a, b, w});
        graph.weights_.emplace(EdgeKey(a, b, n), w);
      }
    }
  }
  return graph;
}

int SpanningForest::TotalWeight() const {
  return std::accumulate(weight.begin(), weight.end(), 0);
}

SpanningForest BuildMsf(const PoseGraph& graph, const Block& block,
                        int cov_thr, ForestMode mode) {
  const int n = static_cast<int>(graph.vertices.size());
  SpanningForest forest;
  forest.reference = 0;
  forest.parent.assign(n, 0);
  forest.root.assign(n, 0);
  forest.weight.assign(n, 0);
  std::vector<bool> is_root(n, false);
  is_root[0] = true;
  std::vector<int> roots;
  for (int v = block.num_temporal; v < n; ++v) {
    is_root[v] = true;
    roots.push_back(v);
    forest.parent[v] = v;
    forest.root[v] = v;
  }
  // Added-in roots in increasing frame id, for tie-breaking.
  std::sort(roots.begin(), roots.end(), [&](int a, int b) {
    return graph.vertices[a] < graph.vertices[b];
  });

  if (mode == ForestMode::kStar) {
    for (int v = 1; v < n; ++v) {
      if (is_root[v]) continue;
      int best_root = -1;
      int best_weight = 0;
      for (const int r : roots) {
        const int w = graph.Weight(r, v);
        if (w >= cov_thr && w > best_weight) {
          best_root = r;
          best_weight = w;
        }
      }
      if (best_root >= 0) {
        forest.parent[v] = best_root;
        forest.root[v] = best_root;
        forest.weight[v] = best_weight;
      }
    }
    return forest;
  }

  // Kruskal with every added-in root tied to a virtual super-root.
  const int super_root = n;
  UnionFind sets(n + 1);
  for (const int r : roots) sets.Unite(r, super_root);
  std::vector<PoseGraph::Edge> edges;
  for (const auto& e : graph.edges) {
    if (e.a == 0 || e.b == 0) continue;
    if (is_root[e.a] && is_root[e.b]) continue;
    if (e.weight >= cov_thr) edges.push_back(e);
  }
  std::sort(edges.begin(), edges.end(), [&](const auto& x, const auto& y) {
    if (x.weight != y.weight) return x.weight > y.weight;
    const FrameId xa = graph.vertices[x.a], xb = graph.vertices[x.b];
    const FrameId ya = graph.vertices[y.a], yb = graph.vertices[y.b];
    const auto xk = std::minmax(xa, xb), yk = std::minmax(ya, yb);
    return xk < yk;
  });
  std::vector<std::vector<std::pair<int, int>>> adjacency(n);
  for (const auto& e : edges) {
    if (sets.Unite(e.a, e.b)) {
      adjacency[e.a].emplace_back(e.b, e.weight);
      adjacency[e.b].emplace_back(e.a, e.weight);
    }
  }
  std::vector<bool> visited(n, false);
  visited[0] = true;
  for (const int r : roots) {
    std::vector<int> stack = {r};
    visited[r] = true;
    while (!stack.empty()) {
      const int v = stack.back();
      stack.pop_back();
      for (const auto& [u, w] : adjacency[v]) {
        if (visited[u]) continue;
        visited[u] = true;
        forest.parent[u] = v;
        forest.root[u] = r;
        forest.weight[u] = w;
        stack.push_back(u);
      }
    }
  }
  // Whatever no added-in tree reached belongs to the reference tree.
  return forest;
}

// ---------------------------------------------------------------------------
// Solutions and history

std::optional<int> LocalSolution::CameraIndex(FrameId id) const {
  const auto it = std::find(camera_ids.begin(), camera_ids.end(), id);
  if (it == camera_ids.end()) return std::nullopt;
  return static_cast<int>(it - camera_ids.begin());
}

std::optional<int> LocalSolution::LandmarkIndex(LandmarkId id) const {
  const auto it =
      std::lower_bound(landmark_ids.begin(), landmark_ids.end(), id);
  if (it == landmark_ids.end() || *it != id) return std::nullopt;
  return static_cast<int>(it - landmark_ids.begin());
}

const Pose& LocalSolution::PoseOf(FrameId id) const {
  const auto index = CameraIndex(id);
  if (!index) {
    throw Error(ErrorCode::kIndexOutOfRange,
                "frame " + std::to_string(id) + " not in block " +
                    std::to_string(block_id));
  }
  return poses[*index];
}

void SolutionHistory::AddBlock(const Block& block) {
  if (block.id != static_cast<int>(blocks_.size())) {
    throw Error(ErrorCode::kInvalidArgument, "blocks must be added in order");
  }
  blocks_.push_back(block);
  solutions_.emplace_back();
  for (const FrameId id : block.camera_ids) frame_blocks_[id].push_back(block.id);
  for (const LandmarkId id : block.landmark_ids) {
    landmark_blocks_[id].push_back(block.id);
  }
}

void SolutionHistory::Publish(const Block& block,
                              std::shared_ptr<const LocalSolution> solution) {
  if (block.id >= static_cast<int>(blocks_.size())) AddBlock(block);
  solutions_.at(block.id) = std::move(solution);
}

const Block* SolutionHistory::block(int id) const {
  if (id < 0 || id >= static_cast<int>(blocks_.size())) return nullptr;
  return &blocks_[id];
}

std::shared_ptr<const LocalSolution> SolutionHistory::solution(int id) const {
  if (id < 0 || id >= static_cast<int>(solutions_.size())) return nullptr;
  return solutions_[id];
}

std::optional<int> SolutionHistory::LatestBlockWithFrame(FrameId id,
                                                         int before) const {
  const auto it = frame_blocks_.find(id);
  if (it == frame_blocks_.end()) return std::nullopt;
  for (auto b = it->second.rbegin(); b != it->second.rend(); ++b) {
    if (*b < before && solutions_[*b]) return *b;
  }
  return std::nullopt;
}

std::optional<int> SolutionHistory::LatestBlockWithLandmark(LandmarkId id,
                                                            int before) const {
  const auto it = landmark_blocks_.find(id);
  if (it == landmark_blocks_.end()) return std::nullopt;
  for (auto b = it->second.rbegin(); b != it->second.rend(); ++b) {
    if (*b >= before || !solutions_[*b]) continue;
    const LocalSolution& sol = *solutions_[*b];
    const auto index = sol.LandmarkIndex(id);
    if (index && sol.optimized[*index]) return *b;
  }
  return std::nullopt;
}

std::optional<Pose> SolutionHistory::Chain(int from, int to) const {
  if (from == to) return Pose::Identity();
  if (from > to || to > static_cast<int>(blocks_.size())) return std::nullopt;
  Pose transform;
  for (int k = from; k < to; ++k) {
    if (!solutions_[k]) return std::nullopt;
    transform = solutions_[k]->PoseOf(blocks_[k].LastTemporalId()) * transform;
  }
  return transform;
}

// ---------------------------------------------------------------------------
// Initialization

InitialState PriorInitialization(const Block& block, const SceneProblem& scene) {
  InitialState init;
  const Pose reference = scene.poses()[block.reference_frame_id];
  const Pose to_world = reference.Inverse();
  init.poses.reserve(block.camera_ids.size());
  for (const FrameId id : block.camera_ids) {
    init.poses.push_back(id == block.reference_frame_id
                             ? Pose::Identity()
                             : scene.poses()[id] * to_world);
  }
  init.landmarks.reserve(block.landmark_ids.size());
  for (const LandmarkId id : block.landmark_ids) {
    init.landmarks.push_back(reference * scene.landmarks()[id].position);
  }
  return init;
}

InitialState InitializeBlock(const Block& block, const SpanningForest& forest,
                             const SceneProblem& scene,
                             const SolutionHistory& history,
                             const LocalBaConfig& config) {
  InitialState init = PriorInitialization(block, scene);
  std::unordered_map<int, std::optional<Pose>> chains;
  auto chain = [&](int from) -> const std::optional<Pose>& {
    auto it = chains.find(from);
    if (it == chains.end()) {
      it = chains.emplace(from, history.Chain(from, block.id)).first;
    }
    return it->second;
  };

  if (config.use_forest) {
    const int n = static_cast<int>(block.camera_ids.size());
    for (int r = block.num_temporal; r < n; ++r) {
      const FrameId root_id = block.camera_ids[r];
      const auto source = history.LatestBlockWithFrame(root_id, block.id);
      const std::optional<Pose>* transform =
          source ? &chain(*source) : nullptr;
      if (!source || !transform->has_value()) {
        spdlog::warn(
            "block {}: no snapshot for added-in frame {}; using the motion "
            "model",
            block.id, root_id);
        init.missing_snapshots.push_back(root_id);
        continue;
      }
      const Pose root_pose = history.solution(*source)->PoseOf(root_id) *
                             (*transform)->Inverse();
      const Pose root_prior_inverse = scene.poses()[root_id].Inverse();
      for (int v = 1; v < n; ++v) {
        if (forest.root[v] != r) continue;
        if (v == r || config.add_in_init == AddInInit::kRootPose) {
          init.poses[v] = root_pose;
        } else {
          const Pose motion =
              scene.poses()[block.camera_ids[v]] * root_prior_inverse;
          init.poses[v] = motion * root_pose;
        }
      }
    }
  }

  for (std::size_t k = 0; k < block.landmark_ids.size(); ++k) {
    const LandmarkId id = block.landmark_ids[k];
    const auto source = history.LatestBlockWithLandmark(id, block.id);
    if (!source) continue;
    const auto& transform = chain(*source);
    if (!transform) continue;
    const LocalSolution& sol = *history.solution(*source);
    init.landmarks[k] = *transform * sol.landmarks[*sol.LandmarkIndex(id)];
  }
  return init;
}

// ---------------------------------------------------------------------------
// Bundle system

class BundleLinearization : public Linearization {
 public:
  BundleLinearization(const BlockBundleProblem& problem,
                      const Eigen::VectorXd& x, const Eigen::VectorXd& f);

  Eigen::VectorXd Gradient() const override;
  double MaxHessianDiagonal() const override;
  bool SolveDamped(double mu, Eigen::VectorXd* step) override;
  double ModelCost(const Eigen::VectorXd& step) const override;
  Eigen::MatrixXd Dense() const;

 private:
  using Mat26 = Eigen::Matrix<double, 2, 6>;
  using Mat23 = Eigen::Matrix<double, 2, 3>;
  using Mat66 = Eigen::Matrix<double, 6, 6>;
  using Mat63 = Eigen::Matrix<double, 6, 3>;

  const BlockBundleProblem& problem_;
  const Eigen::VectorXd& f_;
  std::vector<Mat26> jc_;
  std::vector<Mat23> jp_;
  std::vector<Mat63> w_;
  std::vector<Mat66> u_;
  std::vector<Eigen::Matrix3d> v_;
  std::vector<Eigen::Matrix<double, 6, 1>> gc_;
  std::vector<Eigen::Vector3d> gp_;
  std::vector<std::vector<int>> by_landmark_;
  int camera_dim_ = 0;
};

BlockBundleProblem::BlockBundleProblem(const Intrinsics& K, int num_cameras,
                                       int gauge_camera, int num_landmarks,
                                       std::vector<Measurement> measurements)
    : K_(K),
      num_cameras_(num_cameras),
      gauge_camera_(gauge_camera),
      num_landmarks_(num_landmarks),
      measurements_(std::move(measurements)) {
  if (num_cameras < 2 || gauge_camera < 1 || gauge_camera >= num_cameras) {
    throw Error(ErrorCode::kInvalidArgument, "invalid bundle camera layout");
  }
  tangent_offsets_.resize(num_cameras);
  int offset = 0;
  for (int c = 0; c < num_cameras; ++c) {
    tangent_offsets_[c] = offset;
    offset += TangentDimCamera(c);
  }
  landmark_tangent_offset_ = offset;
}

int BlockBundleProblem::TangentDimCamera(int c) const {
  if (c == 0) return 0;
  return c == gauge_camera_ ? 5 : 6;
}

int BlockBundleProblem::NumResiduals() const {
  return 2 * static_cast<int>(measurements_.size());
}

int BlockBundleProblem::TangentDim() const {
  return landmark_tangent_offset_ + 3 * num_landmarks_;
}

Eigen::Matrix<double, 3, 2> BlockBundleProblem::GaugeBasis(
    const Eigen::Vector3d& t) const {
  const Eigen::Vector3d u = t.normalized();
  Eigen::Index axis = 0;
  u.cwiseAbs().minCoeff(&axis);
  const Eigen::Vector3d b1 = u.cross(Eigen::Vector3d::Unit(axis)).normalized();
  Eigen::Matrix<double, 3, 2> basis;
  basis.col(0) = b1;
  basis.col(1) = u.cross(b1);
  return basis;
}

Pose BlockBundleProblem::CameraPose(const Eigen::VectorXd& x, int c) const {
  if (c == 0) return Pose::Identity();
  const int o = StateOffsetCamera(c);
  const Eigen::Quaterniond q(x[o + 3], x[o], x[o + 1], x[o + 2]);
  return Pose(Rotation3::FromQuaternion(q), x.segment<3>(o + 4));
}

Eigen::VectorXd BlockBundleProblem::Pack(
    const std::vector<Pose>& poses,
    const std::vector<Eigen::Vector3d>& landmarks) const {
  Eigen::VectorXd x(7 * (num_cameras_ - 1) + 3 * num_landmarks_);
  for (int c = 1; c < num_cameras_; ++c) {
    const int o = StateOffsetCamera(c);
    const Eigen::Quaterniond& q = poses[c].rotation().quaternion();
    x.segment<4>(o) << q.x(), q.y(), q.z(), q.w();
    x.segment<3>(o + 4) = poses[c].translation();
  }
  for (int j = 0; j < num_landmarks_; ++j) {
    x.segment<3>(StateOffsetLandmark(j)) = landmarks[j];
  }
  return x;
}

void BlockBundleProblem::Unpack(const Eigen::VectorXd& x,
                                std::vector<Pose>* poses,
                                std::vector<Eigen::Vector3d>* landmarks) const {
  poses->resize(num_cameras_);
  for (int c = 0; c < num_cameras_; ++c) (*poses)[c] = CameraPose(x, c);
  landmarks->resize(num_landmarks_);
  for (int j = 0; j < num_landmarks_; ++j) {
    (*landmarks)[j] = x.segment<3>(StateOffsetLandmark(j));
  }
}

bool BlockBundleProblem::Evaluate(const Eigen::VectorXd& x,
                                  Eigen::VectorXd* f) const {
  std::vector<Pose> poses(num_cameras_);
  for (int c = 0; c < num_cameras_; ++c) poses[c] = CameraPose(x, c);
  f->resize(NumResiduals());
  for (std::size_t k = 0; k < measurements_.size(); ++k) {
    const Measurement& m = measurements_[k];
    const Eigen::Vector3d p =
        poses[m.camera] * x.segment<3>(StateOffsetLandmark(m.landmark));
    if (!(p.z() > kMinDepth)) return false;
    f->segment<2>(2 * k) = ProjectCamera(K_, p) - m.pixel;
  }
  return f->allFinite();
}

Eigen::VectorXd BlockBundleProblem::Plus(const Eigen::VectorXd& x,
                                         const Eigen::VectorXd& step) const {
  Eigen::VectorXd out = x;
  for (int c = 1; c < num_cameras_; ++c) {
    const int o = StateOffsetCamera(c);
    const int d = tangent_offsets_[c];
    const Pose pose = CameraPose(x, c);
    const Rotation3 r = ExpMap(step.segment<3>(d)) * pose.rotation();
    const Eigen::Quaterniond& q = r.quaternion();
    out.segment<4>(o) << q.x(), q.y(), q.z(), q.w();
    const Eigen::Vector3d t = pose.translation();
    if (c == gauge_camera_) {
      const double s = t.norm();
      out.segment<3>(o + 4) =
          s * (t / s + GaugeBasis(t) * step.segment<2>(d + 3)).normalized();
    } else {
      out.segment<3>(o + 4) = t + step.segment<3>(d + 3);
    }
  }
  for (int j = 0; j < num_landmarks_; ++j) {
    out.segment<3>(StateOffsetLandmark(j)) +=
        step.segment<3>(landmark_tangent_offset_ + 3 * j);
  }
  return out;
}

std::unique_ptr<Linearization> BlockBundleProblem::Linearize(
    const Eigen::VectorXd& x, const Eigen::VectorXd& f) const {
  return std::make_unique<BundleLinearization>(*this, x, f);
}

Eigen::MatrixXd BlockBundleProblem::DenseJacobian(
    const Eigen::VectorXd& x) const {
  Eigen::VectorXd f;
  if (!Evaluate(x, &f)) {
    throw Error(ErrorCode::kNonPositiveDepth, "state has a point behind a camera");
  }
  return BundleLinearization(*this, x, f).Dense();
}

BundleLinearization::BundleLinearization(const BlockBundleProblem& problem,
                                         const Eigen::VectorXd& x,
                                         const Eigen::VectorXd& f)
    : problem_(problem), f_(f) {
  const int nc = problem.num_cameras_;
  const int nl = problem.num_landmarks_;
  const auto& meas = problem.measurements_;
  camera_dim_ = problem.landmark_tangent_offset_;
  jc_.resize(meas.size());
  jp_.resize(meas.size());
  w_.resize(meas.size());
  u_.assign(nc, Mat66::Zero());
  v_.assign(nl, Eigen::Matrix3d::Zero());
  gc_.assign(nc, Eigen::Matrix<double, 6, 1>::Zero());
  gp_.assign(nl, Eigen::Vector3d::Zero());
  by_landmark_.assign(nl, {});

  std::vector<Pose> poses(nc);
  std::vector<Eigen::Matrix3d> rotations(nc);
  std::vector<Eigen::Matrix<double, 3, 2>> gauge(nc);
  for (int c = 0; c < nc; ++c) {
    poses[c] = problem.CameraPose(x, c);
    rotations[c] = poses[c].rotation().Matrix();
  }
  const Eigen::Vector3d gauge_t = poses[problem.gauge_camera_].translation();
  const Eigen::Matrix<double, 3, 2> gauge_jacobian =
      gauge_t.norm() * problem.GaugeBasis(gauge_t);

  for (std::size_t k = 0; k < meas.size(); ++k) {
    const auto& m = meas[k];
    const Eigen::Vector3d point =
        x.segment<3>(problem.StateOffsetLandmark(m.landmark));
    const Eigen::Vector3d rotated = rotations[m.camera] * point;
    const Eigen::Vector3d p = rotated + poses[m.camera].translation();
    const Eigen::Matrix<double, 2, 3> jpi = ProjectionJacobian(problem.K_, p);
    jp_[k] = jpi * rotations[m.camera];
    jc_[k].setZero();
    if (m.camera != 0) {
      jc_[k].leftCols<3>() = -jpi * Skew(rotated);
      if (m.camera == problem.gauge_camera_) {
        jc_[k].block<2, 2>(0, 3) = jpi * gauge_jacobian;
      } else {
        jc_[k].rightCols<3>() = jpi;
      }
    }
    const Eigen::Vector2d r = f.segment<2>(2 * k);
    u_[m.camera] += jc_[k].transpose() * jc_[k];
    v_[m.landmark] += jp_[k].transpose() * jp_[k];
    w_[k] = jc_[k].transpose() * jp_[k];
    gc_[m.camera] += jc_[k].transpose() * r;
    gp_[m.landmark] += jp_[k].transpose() * r;
    by_landmark_[m.landmark].push_back(static_cast<int>(k));
  }
}

Eigen::VectorXd BundleLinearization::Gradient() const {
  Eigen::VectorXd g(problem_.TangentDim());
  for (int c = 0; c < problem_.num_cameras_; ++c) {
    const int d = problem_.TangentDimCamera(c);
    g.segment(problem_.tangent_offsets_[c], d) = gc_[c].head(d);
  }
  for (int j = 0; j < problem_.num_landmarks_; ++j) {
    g.segment<3>(camera_dim_ + 3 * j) = gp_[j];
  }
  return g;
}

double BundleLinearization::MaxHessianDiagonal() const {
  double best = 0.0;
  for (int c = 0; c < problem_.num_cameras_; ++c) {
    const int d = problem_.TangentDimCamera(c);
    if (d > 0) best = std::max(best, u_[c].diagonal().head(d).maxCoeff());
  }
  for (const auto& v : v_) best = std::max(best, v.diagonal().maxCoeff());
  return best;
}

bool BundleLinearization::SolveDamped(double mu, Eigen::VectorXd* step) {
  const int nc = problem_.num_cameras_;
  const int nl = problem_.num_landmarks_;
  const auto& meas = problem_.measurements_;
  const auto& offsets = problem_.tangent_offsets_;

  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(camera_dim_, camera_dim_);
  Eigen::VectorXd rhs(camera_dim_);
  for (int c = 1; c < nc; ++c) {
    const int d = problem_.TangentDimCamera(c);
    s.block(offsets[c], offsets[c], d, d) =
        u_[c].topLeftCorner(d, d) +
        mu * Eigen::MatrixXd::Identity(d, d);
    rhs.segment(offsets[c], d) = -gc_[c].head(d);
  }
  std::vector<Eigen::Matrix3d> v_inv(nl);
  for (int j = 0; j < nl; ++j) {
    const Eigen::Matrix3d damped = v_[j] + mu * Eigen::Matrix3d::Identity();
    Eigen::LDLT<Eigen::Matrix3d> ldlt(damped);
    if (ldlt.info() != Eigen::Success) return false;
    v_inv[j] = ldlt.solve(Eigen::Matrix3d::Identity());
    const auto& ks = by_landmark_[j];
    for (std::size_t a = 0; a < ks.size(); ++a) {
      const int ca = meas[ks[a]].camera;
      const int da = problem_.TangentDimCamera(ca);
      if (da == 0) continue;
      const Mat63 y = w_[ks[a]] * v_inv[j];
      rhs.segment(offsets[ca], da) += (y * gp_[j]).head(da);
      for (std::size_t b = 0; b < ks.size(); ++b) {
        const int cb = meas[ks[b]].camera;
        const int db = problem_.TangentDimCamera(cb);
        if (db == 0) continue;
        s.block(offsets[ca], offsets[cb], da, db) -=
            (y * w_[ks[b]].transpose()).topLeftCorner(da, db);
      }
    }
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(s);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return false;
  const Eigen::VectorXd dc = ldlt.solve(rhs);
  if (!dc.allFinite()) return false;

  step->resize(problem_.TangentDim());
  step->head(camera_dim_) = dc;
  for (int j = 0; j < nl; ++j) {
    Eigen::Vector3d b = -gp_[j];
    for (const int k : by_landmark_[j]) {
      const int c = meas[k].camera;
      const int d = problem_.TangentDimCamera(c);
      if (d == 0) continue;
      b -= w_[k].topRows(d).transpose() * dc.segment(offsets[c], d);
    }
    step->segment<3>(camera_dim_ + 3 * j) = v_inv[j] * b;
  }
  return step->allFinite();
}

double BundleLinearization::ModelCost(const Eigen::VectorXd& step) const {
  const auto& meas = problem_.measurements_;
  double cost = 0.0;
  for (std::size_t k = 0; k < meas.size(); ++k) {
    const int c = meas[k].camera;
    const int d = problem_.TangentDimCamera(c);
    Eigen::Vector2d r = f_.segment<2>(2 * k) +
                        jp_[k] * step.segment<3>(camera_dim_ +
                                                 3 * meas[k].landmark);
    if (d > 0) {
      r += jc_[k].leftCols(d) * step.segment(problem_.tangent_offsets_[c], d);
    }
    cost += r.squaredNorm();
  }
  return cost;
}

Eigen::MatrixXd BundleLinearization::Dense() const {
  const auto& meas = problem_.measurements_;
  Eigen::MatrixXd j =
      Eigen::MatrixXd::Zero(problem_.NumResiduals(), problem_.TangentDim());
  for (std::size_t k = 0; k < meas.size(); ++k) {
    const int c = meas[k].camera;
    const int d = problem_.TangentDimCamera(c);
    if (d > 0) {
      j.block(2 * k, problem_.tangent_offsets_[c], 2, d) = jc_[k].leftCols(d);
    }
    j.block<2, 3>(2 * k, camera_dim_ + 3 * meas[k].landmark) = jp_[k];
  }
  return j;
}

// ---------------------------------------------------------------------------
// Local solve

std::optional<Eigen::Vector3d> TriangulateMidpoint(
    const Intrinsics& K, const std::vector<Pose>& poses,
    const std::vector<Eigen::Vector2d>& pixels) {
  if (poses.size() < 2 || poses.size() != pixels.size()) return std::nullopt;
  Eigen::Matrix3d a = Eigen::Matrix3d::Zero();
  Eigen::Vector3d b = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const Eigen::Matrix3d r_t = poses[i].rotation().Matrix().transpose();
    const Eigen::Vector3d ray((pixels[i].x() - K.cx) / K.fx,
                              (pixels[i].y() - K.cy) / K.fy, 1.0);
    const Eigen::Vector3d d = (r_t * ray).normalized();
    const Eigen::Matrix3d proj = Eigen::Matrix3d::Identity() - d * d.transpose();
    a += proj;
    b += proj * poses[i].Center();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(a);
  if (eig.eigenvalues()[0] < 1e-10 * eig.eigenvalues()[2]) return std::nullopt;
  const Eigen::Vector3d x = a.ldlt().solve(b);
  if (!x.allFinite()) return std::nullopt;
  return x;
}

namespace {

double MaxParallax(const std::vector<Pose>& poses, const Eigen::Vector3d& x) {
  double best = 0.0;
  for (std::size_t a = 0; a < poses.size(); ++a) {
    const Eigen::Vector3d ra = x - poses[a].Center();
    for (std::size_t b = a + 1; b < poses.size(); ++b) {
      const Eigen::Vector3d rb = x - poses[b].Center();
      best = std::max(best, std::atan2(ra.cross(rb).norm(), ra.dot(rb)));
    }
  }
  return best;
}

bool InFrontOfAll(const std::vector<Pose>& poses, const Eigen::Vector3d& x) {
  return std::all_of(poses.begin(), poses.end(), [&](const Pose& p) {
    return (p * x).z() > kMinDepth;
  });
}

Eigen::Vector3d PlaceOnRay(const Intrinsics& K, const Pose& pose,
                           const Eigen::Vector2d& pixel, double depth) {
  const Eigen::Vector3d ray((pixel.x() - K.cx) / K.fx,
                            (pixel.y() - K.cy) / K.fy, 1.0);
  return pose.Inverse() * (depth * ray);
}

[[noreturn]] void ThrowBlock(ErrorCode code, int block, const std::string& what) {
  std::ostringstream msg;
  msg << "block " << block << ": " << what;
  throw Error(code, msg.str());
}

}  // namespace

LocalSolution SolveLocal(const Block& block, const SceneProblem& scene,
                         const InitialState& init,
                         const LocalBaConfig& config) {
  const Intrinsics& K = scene.intrinsics();
  const int num_cameras = static_cast<int>(block.camera_ids.size());
  const int num_landmarks = static_cast<int>(block.landmark_ids.size());
  if (init.poses.size() != block.camera_ids.size() ||
      init.landmarks.size() != block.landmark_ids.size()) {
    throw Error(ErrorCode::kInvalidArgument, "initial state size mismatch");
  }

  // Views of each block landmark by block cameras.
  struct View {
    int camera;
    Eigen::Vector2d pixel;
  };
  std::vector<std::vector<View>> views(num_landmarks);
  for (int c = 0; c < num_cameras; ++c) {
    for (const Observation& obs : scene.frame(block.camera_ids[c]).observations) {
      const auto it = std::lower_bound(block.landmark_ids.begin(),
                                       block.landmark_ids.end(), obs.landmark);
      if (it == block.landmark_ids.end() || *it != obs.landmark) continue;
      views[it - block.landmark_ids.begin()].push_back({c, obs.pixel});
    }
  }

  std::vector<Eigen::Vector3d> start = init.landmarks;
  std::vector<int> compact(num_landmarks, -1);
  std::vector<int> members;
  for (int j = 0; j < num_landmarks; ++j) {
    if (views[j].size() < 2) continue;
    std::vector<Pose> seen_by;
    for (const View& v : views[j]) seen_by.push_back(init.poses[v.camera]);
    if (!InFrontOfAll(seen_by, start[j])) {
      std::vector<Eigen::Vector2d> pixels;
      for (const View& v : views[j]) pixels.push_back(v.pixel);
      const auto fixed = TriangulateMidpoint(K, seen_by, pixels);
      if (!fixed || !InFrontOfAll(seen_by, *fixed)) continue;
      start[j] = *fixed;
    }
    if (MaxParallax(seen_by, start[j]) < kMinParallaxRad) continue;
    compact[j] = static_cast<int>(members.size());
    members.push_back(j);
  }
  if (members.empty()) {
    ThrowBlock(ErrorCode::kInsufficientConstraints, block.id,
               "no landmark is observed by two block cameras");
  }
  // Scale is pinned by the camera farthest from the reference.
  int gauge_camera = 1;
  double baseline = 0.0;
  for (int c = 1; c < num_cameras; ++c) {
    const double d = init.poses[c].translation().norm();
    if (d > baseline) {
      baseline = d;
      gauge_camera = c;
    }
  }
  if (!(baseline > kGaugeEpsilon)) {
    ThrowBlock(ErrorCode::kInsufficientConstraints, block.id,
               "all cameras coincide with the reference; scale gauge undefined");
  }

  std::vector<BlockBundleProblem::Measurement> measurements;
  std::vector<Eigen::Vector3d> member_points;
  for (const int j : members) {
    for (const View& v : views[j]) {
      measurements.push_back({v.camera, compact[j], v.pixel});
    }
    member_points.push_back(start[j]);
  }
  const BlockBundleProblem problem(K, num_cameras, gauge_camera,
                                   static_cast<int>(members.size()),
                                   std::move(measurements));
  SolverConfig solver = config.solver;
  solver.eta = std::max(2, num_cameras);
  const Eigen::VectorXd x0 = problem.Pack(init.poses, member_points);
  Eigen::VectorXd f0;
  if (!problem.Evaluate(x0, &f0)) {
    ThrowBlock(ErrorCode::kNonFiniteResidual, block.id,
               "initial state cannot be evaluated");
  }
  const SolverResult result = Solve(problem, x0, solver);
  if (result.status == SolverStatus::kDiverged) {
    std::ostringstream msg;
    msg << "solver diverged after " << result.iterations
        << " iterations (cost " << result.final_cost << ")";
    ThrowBlock(ErrorCode::kSolverDiverged, block.id, msg.str());
  }
  if (result.status == SolverStatus::kMaxIterations) {
    spdlog::warn("block {}: hit the iteration limit ({})", block.id,
                 result.iterations);
  }

  LocalSolution solution;
  solution.block_id = block.id;
  solution.reference_frame_id = block.reference_frame_id;
  solution.camera_ids = block.camera_ids;
  solution.landmark_ids = block.landmark_ids;
  std::vector<Eigen::Vector3d> solved_points;
  problem.Unpack(result.x, &solution.poses, &solved_points);
  solution.landmarks = start;
  solution.optimized.assign(num_landmarks, false);
  for (std::size_t m = 0; m < members.size(); ++m) {
    solution.landmarks[members[m]] = solved_points[m];
    solution.optimized[members[m]] = true;
  }

  // Landmarks outside the residual set still get a position consistent with
  // the solved cameras.
  for (int j = 0; j < num_landmarks; ++j) {
    if (solution.optimized[j] || views[j].empty()) continue;
    std::vector<Pose> seen_by;
    std::vector<Eigen::Vector2d> pixels;
    for (const View& v : views[j]) {
      seen_by.push_back(solution.poses[v.camera]);
      pixels.push_back(v.pixel);
    }
    if (const auto point = TriangulateMidpoint(K, seen_by, pixels);
        point && InFrontOfAll(seen_by, *point) &&
        MaxParallax(seen_by, *point) >= kMinParallaxRad) {
      solution.landmarks[j] = *point;
      continue;
    }
    const Pose& pose = solution.poses[views[j][0].camera];
    double depth = (init.poses[views[j][0].camera] * start[j]).z();
    if (!(depth > kMinDepth)) depth = 1.0;
    solution.landmarks[j] = PlaceOnRay(K, pose, views[j][0].pixel, depth);
  }

  double cost = 0.0;
  for (int j = 0; j < num_landmarks; ++j) {
    for (const View& v : views[j]) {
      if (auto pixel = TryProject(K, solution.poses[v.camera],
                                  solution.landmarks[j])) {
        cost += (*pixel - v.pixel).squaredNorm();
      }
    }
  }
  solution.initial_cost = result.initial_cost;
  solution.final_cost = cost;
  solution.iterations = result.iterations;
  solution.num_residuals = problem.NumResiduals();
  solution.status = result.status;
  solution.reason = result.reason;
  solution.trace = result.trace;
  return solution;
}

}  // namespace posepipe
