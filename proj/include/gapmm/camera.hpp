#pragma once

#include <cmath>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace gapmm {

using Vector2 = Eigen::Vector2d;
using Vector3 = Eigen::Vector3d;

/// BAL camera: angle-axis rotation, translation, focal length and two radial
/// distortion coefficients. Only the six pose entries are optimized.
struct CameraPose {
  Vector3 rotation = Vector3::Zero();
  Vector3 translation = Vector3::Zero();
  double focal = 1.0;
  double k1 = 0.0;
  double k2 = 0.0;
};

/// Rotates x by the angle-axis vector aa. Falls back to the first-order
/// expansion near zero so derivatives stay finite.
template <typename T>
Eigen::Matrix<T, 3, 1> angle_axis_rotate(const Eigen::Matrix<T, 3, 1>& aa,
                                         const Eigen::Matrix<T, 3, 1>& x) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  const T theta2 = aa.dot(aa);
  if (theta2 > T(1e-20)) {
    const T theta = sqrt(theta2);
    const Eigen::Matrix<T, 3, 1> k = aa / theta;
    const T c = cos(theta);
    const T s = sin(theta);
    return x * c + k.cross(x) * s + k * (k.dot(x) * (T(1) - c));
  }
  return x + aa.cross(x);
}

/// BAL projection: p = R X + t, q = -p_xy / p_z, f (1 + k1 |q|^2 + k2 |q|^4) q.
/// The caller checks p_z != 0 on the double path.
template <typename T>
Eigen::Matrix<T, 2, 1> project_generic(const Eigen::Matrix<T, 3, 1>& rotation,
                                       const Eigen::Matrix<T, 3, 1>& translation,
                                       const Eigen::Matrix<T, 3, 1>& point, double focal,
                                       double k1, double k2) {
  const Eigen::Matrix<T, 3, 1> p = angle_axis_rotate(rotation, point) + translation;
  const Eigen::Matrix<T, 2, 1> q(-p[0] / p[2], -p[1] / p[2]);
  const T n2 = q.squaredNorm();
  const T distortion = T(1) + k1 * n2 + k2 * n2 * n2;
  return q * (focal * distortion);
}

/// Throws kProjectionSingular when the point lies in the camera's z = 0 plane.
Vector2 project(const CameraPose& camera, const Vector3& point);

/// Projection together with its Jacobians with respect to the six pose
/// parameters (rotation, translation) and the point.
struct ProjectionJacobian {
  Vector2 value;
  Eigen::Matrix<double, 2, 6> d_pose;
  Eigen::Matrix<double, 2, 3> d_point;
};

ProjectionJacobian project_with_jacobian(const CameraPose& camera, const Vector3& point);

}  // namespace gapmm
