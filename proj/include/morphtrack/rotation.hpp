#pragma once

#include "morphtrack/common.hpp"

#include <Eigen/Geometry>
#include <unsupported/Eigen/AutoDiff>

#include <algorithm>
#include <array>
#include <cmath>

namespace morphtrack {

/// Angles below this use the second-order series of the exponential map.
inline constexpr double kRodriguesSeriesAngle = 1e-7;

template <typename Scalar>
Mat3<Scalar> skew(const Vec3<Scalar>& a) {
  Mat3<Scalar> k;
  k << Scalar(0), -a.z(), a.y(),
       a.z(), Scalar(0), -a.x(),
       -a.y(), a.x(), Scalar(0);
  return k;
}

/// Rodrigues' formula: axis-angle vector to rotation matrix. Works for any
/// scalar type with ADL sqrt/sin/cos, including Eigen::AutoDiffScalar.
template <typename Scalar>
Mat3<Scalar> rodrigues(const Vec3<Scalar>& a) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  const Mat3<Scalar> k = skew<Scalar>(a);
  const Scalar angle2 = a.squaredNorm();
  if (angle2 < Scalar(kRodriguesSeriesAngle * kRodriguesSeriesAngle)) {
    return Mat3<Scalar>::Identity() + k + Scalar(0.5) * (k * k);
  }
  const Scalar angle = sqrt(angle2);
  const Scalar s = sin(angle) / angle;
  const Scalar c = (Scalar(1) - cos(angle)) / angle2;
  return Mat3<Scalar>::Identity() + s * k + c * (k * k);
}

/// Rotation matrix together with its partial derivatives dR/da_m, m = 0..2.
struct RotationJacobian {
  Matrix3d rotation;
  std::array<Matrix3d, 3> d_rotation;
};

inline RotationJacobian rodrigues_jacobian(const Vector3d& a) {
  using Ad = Eigen::AutoDiffScalar<Eigen::Vector3d>;
  Vec3<Ad> x;
  for (int m = 0; m < 3; ++m) x[m] = Ad(a[m], 3, m);
  const Mat3<Ad> r = rodrigues<Ad>(x);
  RotationJacobian out;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      out.rotation(i, j) = r(i, j).value();
      for (int m = 0; m < 3; ++m) out.d_rotation[m](i, j) = r(i, j).derivatives()[m];
    }
  }
  return out;
}

/// Inverse of rodrigues(); angle in [0, pi].
inline Vector3d rotation_to_axis_angle(const Matrix3d& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.axis() * aa.angle();
}

/// Geodesic angle between two rotations given as axis-angle vectors.
inline double rotation_distance(const Vector3d& a, const Vector3d& b) {
  const Matrix3d rel = rodrigues<double>(a).transpose() * rodrigues<double>(b);
  const Vector3d axis(rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0), rel(1, 0) - rel(0, 1));
  return std::atan2(0.5 * axis.norm(), 0.5 * (rel.trace() - 1.0));
}

}  // namespace morphtrack
