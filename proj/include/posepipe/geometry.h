#pragma once

#include <cstdint>
#include <optional>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace posepipe {

// Depth below which a point is considered to be behind (or on) the image
// plane. Scene units.
inline constexpr double kMinDepth = 1e-8;
// LogMap refuses rotations whose angle is within this distance of pi.
inline constexpr double kPiAxisTolerance = 1e-6;

// Element of SO(3), stored as a unit quaternion.
//
// Compositions accumulate round-off in the quaternion norm. A rotation is
// re-normalized whenever its norm drifts by more than 1e-12, and in any case
// after 64 chained compositions.
class Rotation3 {
 public:
  Rotation3() = default;

  static Rotation3 Identity() { return Rotation3(); }
  static Rotation3 FromQuaternion(const Eigen::Quaterniond& q);
  // Projects onto SO(3) if the matrix is only approximately orthonormal.
  static Rotation3 FromMatrix(const Eigen::Matrix3d& matrix);
  static Rotation3 FromAngleAxis(double angle, const Eigen::Vector3d& axis);

  const Eigen::Quaterniond& quaternion() const { return q_; }
  Eigen::Matrix3d Matrix() const { return q_.toRotationMatrix(); }
  double Angle() const;

  Rotation3 Inverse() const;
  Eigen::Vector3d operator*(const Eigen::Vector3d& v) const { return q_ * v; }
  Rotation3 operator*(const Rotation3& other) const;

 private:
  Eigen::Quaterniond q_ = Eigen::Quaterniond::Identity();
  std::uint8_t chain_length_ = 0;
};

// Rigid transform mapping world coordinates into camera coordinates:
// x_cam = R * x_world + t.
class Pose {
 public:
  Pose() = default;
  Pose(const Rotation3& rotation, const Eigen::Vector3d& translation)
      : rotation_(rotation), translation_(translation) {}

  static Pose Identity() { return Pose(); }
  // Camera looking from `center` with the given camera-to-world rotation.
  static Pose FromCenter(const Rotation3& camera_to_world,
                         const Eigen::Vector3d& center);

  const Rotation3& rotation() const { return rotation_; }
  const Eigen::Vector3d& translation() const { return translation_; }
  Eigen::Vector3d Center() const;
  Eigen::Matrix<double, 3, 4> Matrix() const;

  Eigen::Vector3d operator*(const Eigen::Vector3d& point) const {
    return rotation_ * point + translation_;
  }
  // (a * b)(x) == a(b(x))
  Pose operator*(const Pose& other) const;
  Pose Inverse() const;

 private:
  Rotation3 rotation_;
  Eigen::Vector3d translation_ = Eigen::Vector3d::Zero();
};

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;

  // Throws kInvalidArgument unless both focal lengths are positive.
  void Validate() const;
  Eigen::Matrix3d Matrix() const;
};

// Pinhole projection of a world point. Throws kNonPositiveDepth when the
// point does not lie in front of the camera.
Eigen::Vector2d Project(const Intrinsics& K, const Pose& pose,
                        const Eigen::Vector3d& point);
// Non-throwing variant for hot loops.
std::optional<Eigen::Vector2d> TryProject(const Intrinsics& K, const Pose& pose,
                                          const Eigen::Vector3d& point);

// Rotation angle of X * Y^T, in [0, pi].
double GeodesicDistance(const Rotation3& x, const Rotation3& y);

// Rotation vector (axis * angle). Throws kNearPiAmbiguity when the angle is
// within kPiAxisTolerance of pi.
Eigen::Vector3d LogMap(const Rotation3& rotation);
// Same as LogMap but picks an arbitrary axis sign at pi instead of throwing.
Eigen::Vector3d LogMapUnchecked(const Rotation3& rotation);
Rotation3 ExpMap(const Eigen::Vector3d& omega);

Eigen::Matrix3d Skew(const Eigen::Vector3d& v);

}  // namespace posepipe
