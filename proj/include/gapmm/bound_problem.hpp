#pragma once

#include "gapmm/types.hpp"

namespace gapmm {

struct Capabilities {
  /// J(theta) can be evaluated directly; drivers then use it in place of a
  /// lower bound.
  bool exact_objective = false;
  /// lower_value/refine_lower operate on a genuine dual latent.
  bool lower_bound = false;
};

/// A parametrized family of upper bounds Jbar(theta, u) >= J(theta) whose
/// lower envelope over u is J, optionally paired with a family of lower bounds
/// Jlow(theta, l) <= J(theta).
///
/// Contracts every implementation keeps:
///   lower_value(theta, l) <= J(theta) <= upper_value(theta, u)
///   refine_upper never increases upper_value at fixed theta,
///   refine_lower never decreases lower_value at fixed theta.
///
/// One "pass" is the problem's unit of inference work (one IRLS weight update,
/// one coordinate-descent sweep, ...). Refinement is cold-startable from
/// initial_upper()/initial_lower().
///
/// Implementations must allow concurrent const calls.
class BoundProblem {
 public:
  virtual ~BoundProblem() = default;

  virtual Index dimension() const = 0;
  virtual Index term_count() const { return 1; }
  virtual Capabilities capabilities() const = 0;

  virtual UpperLatent initial_upper() const = 0;
  virtual LowerLatent initial_lower() const = 0;

  virtual double upper_value(const ParamVector& theta, const UpperLatent& upper) const = 0;

  /// Lower bound value. In exact-objective mode this is J(theta) and the
  /// latent is ignored.
  virtual double lower_value(const ParamVector& theta, const LowerLatent& lower) const;

  virtual UpperLatent refine_upper(const ParamVector& theta, UpperLatent upper,
                                   int passes) const = 0;

  /// In exact-objective mode returns the input unchanged.
  virtual LowerLatent refine_lower(const ParamVector& theta, LowerLatent lower,
                                   int passes) const;

  /// Partial derivative d Jbar / d theta at fixed latent.
  virtual Vector grad_theta_upper(const ParamVector& theta, const UpperLatent& upper) const = 0;

  virtual double exact_objective(const ParamVector& theta) const;

  /// argmin_theta Jbar(theta, upper) or any update that does not increase it.
  /// Problems without an inner solver throw kUnsupported.
  virtual ParamVector minimize_theta(const ParamVector& theta, const UpperLatent& upper) const;

  double duality_gap(const ParamVector& theta, const UpperLatent& upper,
                     const LowerLatent& lower) const;

 protected:
  void check_theta(const ParamVector& theta) const;
  static void check_passes(int passes);
};

/// A problem of the form Jbar(theta, u) = sum_i Jbar_i(theta, u_i) whose
/// per-term latents share one layout. The whole-problem operations are
/// implemented by concatenating per-term latents and summing per-term values
/// in index order.
class SeparableBoundProblem : public BoundProblem {
 public:
  Index term_count() const override = 0;
  virtual Index term_upper_size() const = 0;
  virtual Index term_lower_size() const = 0;

  virtual Vector initial_upper_term(Index i) const = 0;
  virtual Vector initial_lower_term(Index i) const = 0;

  virtual double upper_value_term(Index i, const ParamVector& theta,
                                  Eigen::Ref<const Vector> upper) const = 0;
  virtual double lower_value_term(Index i, const ParamVector& theta,
                                  Eigen::Ref<const Vector> lower) const;
  virtual void refine_upper_term(Index i, const ParamVector& theta, Eigen::Ref<Vector> upper,
                                 int passes) const = 0;
  virtual void refine_lower_term(Index i, const ParamVector& theta, Eigen::Ref<Vector> lower,
                                 int passes) const;
  /// grad += d Jbar_i / d theta.
  virtual void accumulate_grad_upper_term(Index i, const ParamVector& theta,
                                          Eigen::Ref<const Vector> upper,
                                          Eigen::Ref<Vector> grad) const = 0;
  /// hessian += d^2 Jbar_i / d theta^2. Optional; enables Newton theta-updates
  /// in the constant-memory driver.
  virtual void accumulate_hessian_upper_term(Index i, const ParamVector& theta,
                                             Eigen::Ref<const Vector> upper,
                                             Eigen::Ref<Matrix> hessian) const;
  virtual bool has_term_hessian() const { return false; }

  virtual double exact_objective_term(Index i, const ParamVector& theta) const;

  UpperLatent initial_upper() const override;
  LowerLatent initial_lower() const override;
  double upper_value(const ParamVector& theta, const UpperLatent& upper) const override;
  double lower_value(const ParamVector& theta, const LowerLatent& lower) const override;
  UpperLatent refine_upper(const ParamVector& theta, UpperLatent upper,
                           int passes) const override;
  LowerLatent refine_lower(const ParamVector& theta, LowerLatent lower,
                           int passes) const override;
  Vector grad_theta_upper(const ParamVector& theta, const UpperLatent& upper) const override;
  double exact_objective(const ParamVector& theta) const override;

  Eigen::Ref<const Vector> upper_term(const UpperLatent& upper, Index i) const {
    return upper.values.segment(i * term_upper_size(), term_upper_size());
  }
  Eigen::Ref<const Vector> lower_term(const LowerLatent& lower, Index i) const {
    return lower.values.segment(i * term_lower_size(), term_lower_size());
  }

 protected:
  void check_upper(const UpperLatent& upper) const;
  void check_lower(const LowerLatent& lower) const;
};

}  // namespace gapmm
