#include "gapmm/camera.hpp"

#include <unsupported/Eigen/AutoDiff>

#include "gapmm/error.hpp"

namespace gapmm {

namespace {

using Deriv = Eigen::Matrix<double, 9, 1>;
using Dual = Eigen::AutoDiffScalar<Deriv>;

void check_depth(double z) {
  if (z == 0.0 || !std::isfinite(z)) {
    fail(ErrorCode::kProjectionSingular, "point lies in the camera plane (z = 0)");
  }
}

}  // namespace

Vector2 project(const CameraPose& camera, const Vector3& point) {
  const Vector3 p = angle_axis_rotate<double>(camera.rotation, point) + camera.translation;
  check_depth(p[2]);
  return project_generic<double>(camera.rotation, camera.translation, point, camera.focal,
                                 camera.k1, camera.k2);
}

ProjectionJacobian project_with_jacobian(const CameraPose& camera, const Vector3& point) {
  const Vector3 p = angle_axis_rotate<double>(camera.rotation, point) + camera.translation;
  check_depth(p[2]);

  Eigen::Matrix<Dual, 3, 1> rot, trans, X;
  for (int k = 0; k < 3; ++k) {
    rot[k] = Dual(camera.rotation[k], 9, k);
    trans[k] = Dual(camera.translation[k], 9, 3 + k);
    X[k] = Dual(point[k], 9, 6 + k);
  }
  const Eigen::Matrix<Dual, 2, 1> f =
      project_generic<Dual>(rot, trans, X, camera.focal, camera.k1, camera.k2);

  ProjectionJacobian out;
  for (int r = 0; r < 2; ++r) {
    out.value[r] = f[r].value();
    const Deriv& d = f[r].derivatives();
    for (int c = 0; c < 6; ++c) out.d_pose(r, c) = d[c];
    for (int c = 0; c < 3; ++c) out.d_point(r, c) = d[6 + c];
  }
  return out;
}

}  // namespace gapmm
