#include "gapmm/robust_kernel.hpp"

#include <cmath>
#include <string>

#include "gapmm/error.hpp"

namespace gapmm {

RobustKernel::RobustKernel(KernelKind kind, double tau) : kind_(kind), tau_(tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    fail(ErrorCode::kInvalidArgument, "kernel scale tau must be positive and finite");
  }
}

RobustKernel RobustKernel::parse(std::string_view name, double tau) {
  if (name == "stq" || name == "smooth-truncated-quadratic") {
    return smooth_truncated_quadratic(tau);
  }
  if (name == "quadratic" || name == "l2") return quadratic();
  if (name == "welsch") return welsch(tau);
  fail(ErrorCode::kInvalidArgument, "unknown kernel '" + std::string(name) + "'");
}

double RobustKernel::psi(double r) const {
  const double r2 = r * r;
  const double t2 = tau_ * tau_;
  switch (kind_) {
    case KernelKind::kSmoothTruncatedQuadratic:
      if (r2 >= t2) return 0.25 * t2;
      return 0.5 * r2 - 0.25 * r2 * r2 / t2;
    case KernelKind::kQuadratic:
      return 0.5 * r2;
    case KernelKind::kWelsch:
      return 0.5 * t2 * -std::expm1(-r2 / t2);
  }
  return 0.0;
}

double RobustKernel::weight(double r) const {
  const double r2 = r * r;
  const double t2 = tau_ * tau_;
  switch (kind_) {
    case KernelKind::kSmoothTruncatedQuadratic:
      return r2 >= t2 ? 0.0 : 1.0 - r2 / t2;
    case KernelKind::kQuadratic:
      return 1.0;
    case KernelKind::kWelsch:
      return std::exp(-r2 / t2);
  }
  return 1.0;
}

double RobustKernel::kappa(double w) const {
  if (w < 0.0) fail(ErrorCode::kInvalidArgument, "kappa: weight must be non-negative");
  const double t2 = tau_ * tau_;
  switch (kind_) {
    case KernelKind::kSmoothTruncatedQuadratic:
      return 0.25 * t2 * (w - 1.0) * (w - 1.0);
    case KernelKind::kQuadratic:
      return 0.0;
    case KernelKind::kWelsch:
      if (w == 0.0) return 0.5 * t2;
      return 0.5 * t2 * (1.0 - w + w * std::log(w));
  }
  return 0.0;
}

double RobustKernel::lifted(double r, double w) const {
  if (w < 0.0) fail(ErrorCode::kInvalidArgument, "lifted: weight must be non-negative");
  return 0.5 * w * r * r + kappa(w);
}

double RobustKernel::kappa_root(double w) const {
  switch (kind_) {
    case KernelKind::kSmoothTruncatedQuadratic:
      return tau_ / std::sqrt(2.0) * (w - 1.0);
    case KernelKind::kQuadratic:
      fail(ErrorCode::kUnsupported, "quadratic kernel has no joint lift");
    case KernelKind::kWelsch: {
      const double f = 1.0 - w + (w > 0.0 ? w * std::log(w) : 0.0);
      const double s = tau_ * std::sqrt(std::max(f, 0.0));
      return w < 1.0 ? -s : s;
    }
  }
  return 0.0;
}

double RobustKernel::kappa_root_derivative(double w) const {
  switch (kind_) {
    case KernelKind::kSmoothTruncatedQuadratic:
      return tau_ / std::sqrt(2.0);
    case KernelKind::kQuadratic:
      fail(ErrorCode::kUnsupported, "quadratic kernel has no joint lift");
    case KernelKind::kWelsch: {
      const double d = w - 1.0;
      if (std::abs(d) < 1e-6) return tau_ / std::sqrt(2.0);
      const double wc = std::max(w, 1e-300);
      const double f = 1.0 - wc + wc * std::log(wc);
      const double sgn = w < 1.0 ? -1.0 : 1.0;
      return sgn * tau_ * std::log(wc) / (2.0 * std::sqrt(f));
    }
  }
  return 0.0;
}

}  // namespace gapmm
