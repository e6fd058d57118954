#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "posepipe/error.h"
#include "posepipe/geometry.h"
#include "test_util.h"

namespace posepipe {
namespace {

using testing::RandomPose;
using testing::RandomRotation;
using testing::RandomVector;
using testing::TraceAngle;

Rotation3 RotZ(double angle) {
  return Rotation3::FromAngleAxis(angle, Eigen::Vector3d::UnitZ());
}

// Homogeneous K [R | t] P followed by the perspective division.
Eigen::Vector2d ProjectOracle(const Intrinsics& K, const Pose& pose,
                              const Eigen::Vector3d& point) {
  Eigen::Matrix<double, 3, 4> rt;
  rt.leftCols<3>() = pose.rotation().Matrix();
  rt.col(3) = pose.translation();
  const Eigen::Vector3d h = K.Matrix() * rt * point.homogeneous();
  return h.hnormalized();
}

TEST(Project, TrivialCases) {
  const Intrinsics unit{1.0, 1.0, 0.0, 0.0};
  EXPECT_EQ(Project(unit, Pose(), Eigen::Vector3d(0, 0, 1)),
            Eigen::Vector2d(0, 0));
  const Intrinsics k{100.0, 100.0, 50.0, 50.0};
  EXPECT_EQ(Project(k, Pose(), Eigen::Vector3d(0, 0, 2)),
            Eigen::Vector2d(50, 50));
}

TEST(Project, MatchesHomogeneousOracle) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> focal(100.0, 1000.0);
  std::uniform_real_distribution<double> center(0.0, 600.0);
  int checked = 0;
  while (checked < 1000) {
    const Intrinsics K{focal(rng), focal(rng), center(rng), center(rng)};
    const Pose pose = RandomPose(rng);
    const Eigen::Vector3d point = RandomVector(rng, 3.0);
    if ((pose * point).z() < 0.1) continue;
    const Eigen::Vector2d expected = ProjectOracle(K, pose, point);
    EXPECT_LT((Project(K, pose, point) - expected).norm(),
              1e-10 * std::max(1.0, expected.norm()));
    ++checked;
  }
}

TEST(Project, NonPositiveDepthThrows) {
  const Intrinsics k{100.0, 100.0, 50.0, 50.0};
  for (const double z : {0.0, -1.0, 1e-9}) {
    try {
      Project(k, Pose(), Eigen::Vector3d(0, 0, z));
      FAIL() << z;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kNonPositiveDepth);
    }
    EXPECT_FALSE(TryProject(k, Pose(), Eigen::Vector3d(0, 0, z)).has_value());
  }
}

TEST(Project, InvariantUnderReorthonormalization) {
  std::mt19937_64 rng(2);
  const Intrinsics k{500.0, 500.0, 320.0, 240.0};
  for (int i = 0; i < 200; ++i) {
    const Pose pose = RandomPose(rng);
    // Symmetric drift: leaves the rotation part of the matrix untouched.
    const Eigen::Matrix3d m = Eigen::Matrix3d::Random();
    const Eigen::Matrix3d noisy =
        pose.rotation().Matrix() *
        (Eigen::Matrix3d::Identity() + 1e-6 * (m + m.transpose()));
    const Pose projected(Rotation3::FromMatrix(noisy), pose.translation());
    Eigen::Vector3d point = pose.Inverse() * Eigen::Vector3d(0.3, -0.2, 4.0);
    EXPECT_LT((Project(k, pose, point) - Project(k, projected, point)).norm(),
              1e-8);
  }
}

TEST(Intrinsics, RejectsNonPositiveFocal) {
  EXPECT_THROW((Intrinsics{0.0, 1.0, 0.0, 0.0}.Validate()), Error);
  EXPECT_THROW((Intrinsics{1.0, -1.0, 0.0, 0.0}.Validate()), Error);
  EXPECT_NO_THROW((Intrinsics{1.0, 1.0, 0.0, 0.0}.Validate()));
}

TEST(Rotation, MatrixIsOrthonormal) {
  std::mt19937_64 rng(3);
  Rotation3 chain;
  for (int i = 0; i < 10000; ++i) {
    chain = chain * RandomRotation(rng);
    const Eigen::Matrix3d r = chain.Matrix();
    ASSERT_LT((r.transpose() * r - Eigen::Matrix3d::Identity())
                  .cwiseAbs()
                  .maxCoeff(),
              1e-9);
    ASSERT_NEAR(r.determinant(), 1.0, 1e-9);
  }
  EXPECT_NEAR(chain.quaternion().norm(), 1.0, 1e-12);
}

TEST(Rotation, FromMatrixRoundTrip) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 1000; ++i) {
    const Rotation3 r = RandomRotation(rng);
    EXPECT_LT(GeodesicDistance(Rotation3::FromMatrix(r.Matrix()), r), 1e-12);
  }
}

TEST(Geodesic, TrivialCases) {
  std::mt19937_64 rng(5);
  const Rotation3 r = RandomRotation(rng);
  EXPECT_NEAR(GeodesicDistance(r, r), 0.0, 1e-15);
  EXPECT_NEAR(GeodesicDistance(RotZ(0.3), Rotation3::Identity()), 0.3, 1e-15);
}

TEST(Geodesic, MatchesTraceOracle) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 10000; ++i) {
    const Rotation3 x = RandomRotation(rng);
    const Rotation3 y = RandomRotation(rng);
    const double d = GeodesicDistance(x, y);
    ASSERT_NEAR(d, TraceAngle(x.Matrix(), y.Matrix()), 1e-9);
    ASSERT_GE(d, 0.0);
    ASSERT_LE(d, std::numbers::pi);
  }
}

TEST(Geodesic, BiInvariant) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 10000; ++i) {
    const Rotation3 x = RandomRotation(rng);
    const Rotation3 y = RandomRotation(rng);
    const Rotation3 z = RandomRotation(rng);
    const double d = GeodesicDistance(x, y);
    ASSERT_NEAR(GeodesicDistance(z * x, z * y), d, 1e-9);
    ASSERT_NEAR(GeodesicDistance(x * z, y * z), d, 1e-9);
  }
}

TEST(LogExp, TrivialCases) {
  EXPECT_EQ(LogMap(Rotation3::Identity()), Eigen::Vector3d::Zero());
  EXPECT_LT(GeodesicDistance(ExpMap(Eigen::Vector3d(0, 0, 0.5)), RotZ(0.5)),
            1e-15);
}

TEST(LogExp, RoundTrip) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> angle(0.0, 3.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Rotation3 r =
        Rotation3::FromAngleAxis(angle(rng), testing::RandomUnitVector(rng));
    const Eigen::Vector3d w = LogMap(r);
    worst = std::max(worst,
                     (ExpMap(w).Matrix() - r.Matrix()).cwiseAbs().maxCoeff());
    EXPECT_NEAR(w.norm(), GeodesicDistance(r, Rotation3::Identity()), 1e-12);
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(LogExp, SmallAngles) {
  for (const double theta : {1e-3, 1e-8, 1e-12, 1e-300}) {
    const Eigen::Vector3d w(theta, -theta, 0.5 * theta);
    EXPECT_LT((LogMap(ExpMap(w)) - w).norm(), 1e-15 + 1e-12 * w.norm());
  }
}

TEST(LogExp, NearPiThrows) {
  const Rotation3 r = RotZ(std::numbers::pi - 1e-7);
  try {
    LogMap(r);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNearPiAmbiguity);
  }
  EXPECT_NEAR(LogMapUnchecked(r).norm(), std::numbers::pi - 1e-7, 1e-9);
  EXPECT_NO_THROW(LogMap(RotZ(std::numbers::pi - 1e-5)));
}

TEST(Pose, CompositionLaws) {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 1000; ++i) {
    const Pose a = RandomPose(rng);
    const Pose b = RandomPose(rng);
    const Pose c = RandomPose(rng);
    const Eigen::Vector3d p = RandomVector(rng);
    EXPECT_LT(((a * b) * p - a * (b * p)).norm(), 1e-12);
    EXPECT_LT((((a * b) * c) * p - (a * (b * c)) * p).norm(), 1e-12);
    EXPECT_LT(((a * b).Inverse() * p - (b.Inverse() * a.Inverse()) * p).norm(),
              1e-12);
    EXPECT_LT((a.Inverse() * (a * p) - p).norm(), 1e-12);
  }
}

TEST(Pose, CenterAndMatrix) {
  std::mt19937_64 rng(10);
  const Pose pose = RandomPose(rng);
  EXPECT_LT((pose * pose.Center()).norm(), 1e-12);
  const Eigen::Vector3d p = RandomVector(rng);
  EXPECT_LT((pose.Matrix() * p.homogeneous() - pose * p).norm(), 1e-12);
  const Rotation3 c2w = RandomRotation(rng);
  const Eigen::Vector3d center = RandomVector(rng);
  const Pose from_center = Pose::FromCenter(c2w, center);
  EXPECT_LT((from_center.Center() - center).norm(), 1e-12);
  EXPECT_LT(GeodesicDistance(from_center.rotation(), c2w.Inverse()), 1e-12);
}

}  // namespace
}  // namespace posepipe
