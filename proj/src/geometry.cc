#include "posepipe/geometry.h"

#include <cmath>
#include <numbers>
#include <sstream>

#include <Eigen/SVD>

#include "posepipe/error.h"

namespace posepipe {
namespace {

constexpr std::uint8_t kMaxChainLength = 64;
constexpr double kNormDriftTolerance = 1e-12;

}  // namespace

Rotation3 Rotation3::FromQuaternion(const Eigen::Quaterniond& q) {
  Rotation3 r;
  r.q_ = q.normalized();
  return r;
}

Rotation3 Rotation3::FromMatrix(const Eigen::Matrix3d& matrix) {
  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(
      matrix, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0
                ? -1.0
                : 1.0;
  const Eigen::Matrix3d projected =
      svd.matrixU() * d * svd.matrixV().transpose();
  return FromQuaternion(Eigen::Quaterniond(projected));
}

Rotation3 Rotation3::FromAngleAxis(double angle, const Eigen::Vector3d& axis) {
  return FromQuaternion(
      Eigen::Quaterniond(Eigen::AngleAxisd(angle, axis.normalized())));
}

double Rotation3::Angle() const {
  return 2.0 * std::atan2(q_.vec().norm(), std::abs(q_.w()));
}

Rotation3 Rotation3::Inverse() const {
  Rotation3 r;
  r.q_ = q_.conjugate();
  r.chain_length_ = chain_length_;
  return r;
}

Rotation3 Rotation3::operator*(const Rotation3& other) const {
  Rotation3 r;
  r.q_ = q_ * other.q_;
  r.chain_length_ =
      static_cast<std::uint8_t>(std::max(chain_length_, other.chain_length_) + 1);
  if (r.chain_length_ >= kMaxChainLength ||
      std::abs(r.q_.norm() - 1.0) > kNormDriftTolerance) {
    r.q_.normalize();
    r.chain_length_ = 0;
  }
  return r;
}

Pose Pose::FromCenter(const Rotation3& camera_to_world,
                      const Eigen::Vector3d& center) {
  const Rotation3 world_to_camera = camera_to_world.Inverse();
  return Pose(world_to_camera, -(world_to_camera * center));
}

Eigen::Vector3d Pose::Center() const {
  return -(rotation_.Inverse() * translation_);
}

Eigen::Matrix<double, 3, 4> Pose::Matrix() const {
  Eigen::Matrix<double, 3, 4> m;
  m.leftCols<3>() = rotation_.Matrix();
  m.col(3) = translation_;
  return m;
}

Pose Pose::operator*(const Pose& other) const {
  return Pose(rotation_ * other.rotation_,
              rotation_ * other.translation_ + translation_);
}

Pose Pose::Inverse() const {
  const Rotation3 inv = rotation_.Inverse();
  return Pose(inv, -(inv * translation_));
}

void Intrinsics::Validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    std::ostringstream msg;
    msg << "focal lengths must be positive (fx=" << fx << ", fy=" << fy << ")";
    throw Error(ErrorCode::kInvalidArgument, msg.str());
  }
}

Eigen::Matrix3d Intrinsics::Matrix() const {
  Eigen::Matrix3d k;
  k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

std::optional<Eigen::Vector2d> TryProject(const Intrinsics& K, const Pose& pose,
                                          const Eigen::Vector3d& point) {
  const Eigen::Vector3d p = pose * point;
  if (!(p.z() > kMinDepth)) {
    return std::nullopt;
  }
  return Eigen::Vector2d(K.fx * p.x() / p.z() + K.cx,
                         K.fy * p.y() / p.z() + K.cy);
}

Eigen::Vector2d Project(const Intrinsics& K, const Pose& pose,
                        const Eigen::Vector3d& point) {
  auto pixel = TryProject(K, pose, point);
  if (!pixel) {
    std::ostringstream msg;
    msg << "point depth " << (pose * point).z() << " <= " << kMinDepth;
    throw Error(ErrorCode::kNonPositiveDepth, msg.str());
  }
  return *pixel;
}

double GeodesicDistance(const Rotation3& x, const Rotation3& y) {
  const Eigen::Quaterniond q = x.quaternion() * y.quaternion().conjugate();
  return 2.0 * std::atan2(q.vec().norm(), std::abs(q.w()));
}

Eigen::Vector3d LogMapUnchecked(const Rotation3& rotation) {
  Eigen::Quaterniond q = rotation.quaternion();
  if (q.w() < 0.0) {
    q.coeffs() = -q.coeffs();
  }
  const double n = q.vec().norm();
  if (n < 1e-8) {
    // theta / sin(theta / 2) -> 2 / cos(theta / 2) as theta -> 0.
    return (2.0 / q.w()) * q.vec();
  }
  const double theta = 2.0 * std::atan2(n, q.w());
  return (theta / n) * q.vec();
}

Eigen::Vector3d LogMap(const Rotation3& rotation) {
  const double angle = rotation.Angle();
  if (angle > std::numbers::pi - kPiAxisTolerance) {
    std::ostringstream msg;
    msg << "rotation angle " << angle << " too close to pi";
    throw Error(ErrorCode::kNearPiAmbiguity, msg.str());
  }
  return LogMapUnchecked(rotation);
}

Rotation3 ExpMap(const Eigen::Vector3d& omega) {
  const double theta = omega.norm();
  double scale;
  if (theta < 1e-8) {
    scale = 0.5 - theta * theta / 48.0;
  } else {
    scale = std::sin(0.5 * theta) / theta;
  }
  Eigen::Quaterniond q;
  q.w() = std::cos(0.5 * theta);
  q.vec() = scale * omega;
  return Rotation3::FromQuaternion(q);
}

Eigen::Matrix3d Skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

}  // namespace posepipe
