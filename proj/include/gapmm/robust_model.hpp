#pragma once

#include "gapmm/robust_kernel.hpp"
#include "gapmm/types.hpp"

namespace gapmm {

/// Where observation i's residual depends on theta: a contiguous range of the
/// dense ("reduced") parameters and at most one eliminated point block.
struct ObservationBlock {
  Index reduced_offset = 0;
  Index reduced_width = 0;
  Index point_block = -1;  // -1: no point block
};

/// Robust nonlinear least squares J(theta) = sum_i psi(|r_i(theta)|).
///
/// Parameters are laid out as [reduced | point block 0 | point block 1 | ...];
/// the solver eliminates the point blocks with a Schur complement and solves
/// the reduced system densely.
class RobustModel {
 public:
  virtual ~RobustModel() = default;

  virtual Index parameter_count() const = 0;
  virtual Index reduced_count() const = 0;
  virtual Index point_block_size() const = 0;
  virtual Index point_block_count() const = 0;
  virtual Index observation_count() const = 0;
  virtual Index residual_dim() const = 0;
  virtual ObservationBlock block(Index i) const = 0;
  virtual const RobustKernel& kernel() const = 0;

  virtual void residual(Index i, const ParamVector& theta, Eigen::Ref<Vector> r) const = 0;
  /// r: residual_dim; j_reduced: residual_dim x reduced_width;
  /// j_point: residual_dim x point_block_size (untouched without a point block).
  virtual void linearize(Index i, const ParamVector& theta, Eigen::Ref<Vector> r,
                         Eigen::Ref<Matrix> j_reduced, Eigen::Ref<Matrix> j_point) const = 0;

  Index point_offset(Index block) const { return reduced_count() + block * point_block_size(); }

  /// |r_i(theta)| for all i.
  Vector residual_norms(const ParamVector& theta) const;
};

}  // namespace gapmm
