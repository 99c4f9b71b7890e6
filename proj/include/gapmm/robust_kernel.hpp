#pragma once

#include <string_view>

namespace gapmm {

enum class KernelKind {
  kSmoothTruncatedQuadratic,
  kQuadratic,
  kWelsch,
};

/// A robust cost psi together with its half-quadratic lift
///
///   psi(r) = min_{w >= 0} [ w r^2 / 2 + kappa(w) ],   argmin = weight(r).
///
/// The smooth truncated quadratic is the kernel used by the bundle adjustment
/// experiments:
///
///   psi(r)    = r^2/2 - r^4/(4 tau^2)   for |r| <= tau,   tau^2/4 otherwise
///   weight(r) = max(0, 1 - r^2/tau^2)
///   kappa(w)  = tau^2/4 (w - 1)^2
///
/// Welsch uses psi(r) = tau^2/2 (1 - exp(-r^2/tau^2)). The quadratic kernel has
/// weight == 1 and kappa == 0; its lift is only a majorizer at w = 1.
class RobustKernel {
 public:
  RobustKernel() = default;
  RobustKernel(KernelKind kind, double tau);

  static RobustKernel smooth_truncated_quadratic(double tau) {
    return {KernelKind::kSmoothTruncatedQuadratic, tau};
  }
  static RobustKernel quadratic() { return {KernelKind::kQuadratic, 1.0}; }
  static RobustKernel welsch(double tau) { return {KernelKind::kWelsch, tau}; }

  /// Accepts "stq", "quadratic", "welsch".
  static RobustKernel parse(std::string_view name, double tau);

  KernelKind kind() const { return kind_; }
  double tau() const { return tau_; }

  double psi(double r) const;
  double weight(double r) const;
  double kappa(double w) const;
  double lifted(double r, double w) const;

  /// Signed square root s(w) with s(w)^2 / 2 == kappa(w), smooth in w. Used as
  /// the extra residual of the joint half-quadratic parametrization.
  double kappa_root(double w) const;
  double kappa_root_derivative(double w) const;

  /// Upper bound on weight(r) over all r.
  double max_weight() const { return 1.0; }

 private:
  KernelKind kind_ = KernelKind::kSmoothTruncatedQuadratic;
  double tau_ = 1.0;
};

}  // namespace gapmm
