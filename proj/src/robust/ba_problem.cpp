#include "gapmm/ba_problem.hpp"

#include <string>

#include "gapmm/error.hpp"
#include "gapmm/parallel.hpp"

namespace gapmm {

Vector RobustModel::residual_norms(const ParamVector& theta) const {
  Vector norms(observation_count());
  const Index dim = residual_dim();
  parallel_for(observation_count(), [&](Index i) {
    Vector r(dim);
    residual(i, theta, r);
    norms[i] = r.norm();
  });
  return norms;
}

void BAProblem::validate() const {
  const auto nc = static_cast<int>(cameras.size());
  const auto np = static_cast<int>(points.size());
  for (std::size_t k = 0; k < cameras.size(); ++k) {
    if (!(cameras[k].focal > 0.0)) {
      fail(ErrorCode::kInvalidArgument, "camera " + std::to_string(k) + " has focal <= 0");
    }
  }
  for (std::size_t i = 0; i < observations.size(); ++i) {
    const auto& o = observations[i];
    if (o.camera < 0 || o.camera >= nc || o.point < 0 || o.point >= np) {
      fail(ErrorCode::kInvalidArgument,
           "observation " + std::to_string(i) + " references a missing camera or point");
    }
  }
}

ParamVector pack_parameters(const BAProblem& problem) {
  const Index nc = static_cast<Index>(problem.cameras.size());
  const Index np = static_cast<Index>(problem.points.size());
  ParamVector theta(6 * nc + 3 * np);
  for (Index k = 0; k < nc; ++k) {
    theta.segment<3>(6 * k) = problem.cameras[k].rotation;
    theta.segment<3>(6 * k + 3) = problem.cameras[k].translation;
  }
  for (Index j = 0; j < np; ++j) theta.segment<3>(6 * nc + 3 * j) = problem.points[j];
  return theta;
}

void unpack_parameters(const ParamVector& theta, BAProblem& problem) {
  const Index nc = static_cast<Index>(problem.cameras.size());
  const Index np = static_cast<Index>(problem.points.size());
  if (theta.size() != 6 * nc + 3 * np) {
    fail(ErrorCode::kDimensionMismatch, "theta does not match the bundle adjustment layout");
  }
  for (Index k = 0; k < nc; ++k) {
    problem.cameras[k].rotation = theta.segment<3>(6 * k);
    problem.cameras[k].translation = theta.segment<3>(6 * k + 3);
  }
  for (Index j = 0; j < np; ++j) problem.points[j] = theta.segment<3>(6 * nc + 3 * j);
}

BAModel::BAModel(const BAProblem& problem) : problem_(problem) { problem_.validate(); }

Index BAModel::parameter_count() const {
  return reduced_count() + 3 * static_cast<Index>(problem_.points.size());
}

ObservationBlock BAModel::block(Index i) const {
  const auto& o = problem_.observations[i];
  return {6 * static_cast<Index>(o.camera), 6, static_cast<Index>(o.point)};
}

CameraPose BAModel::pose_from(Index camera, const ParamVector& theta) const {
  CameraPose pose = problem_.cameras[camera];
  pose.rotation = theta.segment<3>(6 * camera);
  pose.translation = theta.segment<3>(6 * camera + 3);
  return pose;
}

void BAModel::residual(Index i, const ParamVector& theta, Eigen::Ref<Vector> r) const {
  const auto& o = problem_.observations[i];
  const Vector3 X = theta.segment<3>(point_offset(o.point));
  r = project(pose_from(o.camera, theta), X) - o.measurement;
}

void BAModel::linearize(Index i, const ParamVector& theta, Eigen::Ref<Vector> r,
                        Eigen::Ref<Matrix> j_reduced, Eigen::Ref<Matrix> j_point) const {
  const auto& o = problem_.observations[i];
  const Vector3 X = theta.segment<3>(point_offset(o.point));
  const ProjectionJacobian pj = project_with_jacobian(pose_from(o.camera, theta), X);
  r = pj.value - o.measurement;
  j_reduced = pj.d_pose;
  j_point = pj.d_point;
}

}  // namespace gapmm
