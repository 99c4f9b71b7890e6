#pragma once

#include <vector>

#include "gapmm/bound_problem.hpp"
#include "gapmm/robust_kernel.hpp"

namespace gapmm {

/// One-dimensional robust location problem in half-quadratic form:
///
///   Jbar(theta, u) = sum_i ( u_i (theta - m_i)^2 / 2 + kappa(u_i) ),
///   J(theta)       = sum_i psi(theta - m_i).
///
/// A refinement pass moves every weight a fraction `relaxation` of the way
/// towards its exact minimizer weight(|theta - m_i|); relaxation == 1 makes a
/// single pass exact. The exact objective stands in for the lower bound.
class ToyHQProblem final : public SeparableBoundProblem {
 public:
  ToyHQProblem(std::vector<double> targets, RobustKernel kernel, double relaxation = 1.0);

  Index dimension() const override { return 1; }
  Index term_count() const override { return static_cast<Index>(targets_.size()); }
  Capabilities capabilities() const override { return {true, false}; }

  Index term_upper_size() const override { return 1; }
  Index term_lower_size() const override { return 0; }

  Vector initial_upper_term(Index i) const override;
  Vector initial_lower_term(Index i) const override;
  double upper_value_term(Index i, const ParamVector& theta,
                          Eigen::Ref<const Vector> upper) const override;
  void refine_upper_term(Index i, const ParamVector& theta, Eigen::Ref<Vector> upper,
                         int passes) const override;
  void accumulate_grad_upper_term(Index i, const ParamVector& theta,
                                  Eigen::Ref<const Vector> upper,
                                  Eigen::Ref<Vector> grad) const override;
  void accumulate_hessian_upper_term(Index i, const ParamVector& theta,
                                     Eigen::Ref<const Vector> upper,
                                     Eigen::Ref<Matrix> hessian) const override;
  bool has_term_hessian() const override { return true; }
  double exact_objective_term(Index i, const ParamVector& theta) const override;

  /// Weighted mean; leaves theta unchanged when every weight is zero.
  ParamVector minimize_theta(const ParamVector& theta, const UpperLatent& upper) const override;

  /// Curvature bound of theta -> Jbar: weights never exceed one.
  double lipschitz() const { return static_cast<double>(targets_.size()); }

  const std::vector<double>& targets() const { return targets_; }
  const RobustKernel& kernel() const { return kernel_; }
  double relaxation() const { return relaxation_; }

 private:
  std::vector<double> targets_;
  RobustKernel kernel_;
  double relaxation_;
};

/// Inliers ~ N(0, inlier_sigma^2) and a fraction of outliers at +-outlier_offset
/// (sign alternating), deterministic under seed.
std::vector<double> make_toy_targets(int count, double outlier_fraction, double inlier_sigma,
                                     double outlier_offset, unsigned long long seed);

}  // namespace gapmm
