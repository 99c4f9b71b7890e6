#pragma once

#include <vector>

#include "gapmm/camera.hpp"
#include "gapmm/robust_model.hpp"

namespace gapmm {

struct Observation {
  int camera = 0;
  int point = 0;
  Vector2 measurement = Vector2::Zero();
};

struct BAProblem {
  std::vector<CameraPose> cameras;
  std::vector<Vector3> points;
  std::vector<Observation> observations;
  RobustKernel kernel;

  /// Throws kInvalidArgument on out-of-range indices or non-positive focal.
  void validate() const;
};

/// theta = [pose_0 (6), ..., pose_{n-1}, X_0 (3), ..., X_{m-1}].
ParamVector pack_parameters(const BAProblem& problem);
/// Copies theta back into cameras and points; intrinsics are left alone.
void unpack_parameters(const ParamVector& theta, BAProblem& problem);

/// Bundle adjustment as a RobustModel. Keeps a reference to the problem's
/// intrinsics and observations; poses and points come from theta.
class BAModel final : public RobustModel {
 public:
  explicit BAModel(const BAProblem& problem);

  Index parameter_count() const override;
  Index reduced_count() const override { return 6 * static_cast<Index>(problem_.cameras.size()); }
  Index point_block_size() const override { return 3; }
  Index point_block_count() const override { return static_cast<Index>(problem_.points.size()); }
  Index observation_count() const override {
    return static_cast<Index>(problem_.observations.size());
  }
  Index residual_dim() const override { return 2; }
  ObservationBlock block(Index i) const override;
  const RobustKernel& kernel() const override { return problem_.kernel; }

  void residual(Index i, const ParamVector& theta, Eigen::Ref<Vector> r) const override;
  void linearize(Index i, const ParamVector& theta, Eigen::Ref<Vector> r,
                 Eigen::Ref<Matrix> j_reduced, Eigen::Ref<Matrix> j_point) const override;

  const BAProblem& problem() const { return problem_; }

 private:
  CameraPose pose_from(Index camera, const ParamVector& theta) const;

  const BAProblem& problem_;
};

}  // namespace gapmm
