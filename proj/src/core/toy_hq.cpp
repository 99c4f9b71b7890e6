#include "gapmm/toy_hq.hpp"

#include <cmath>
#include <random>

#include "gapmm/error.hpp"

namespace gapmm {

ToyHQProblem::ToyHQProblem(std::vector<double> targets, RobustKernel kernel, double relaxation)
    : targets_(std::move(targets)), kernel_(kernel), relaxation_(relaxation) {
  require(!targets_.empty(), ErrorCode::kInvalidArgument, "ToyHQ needs at least one target");
  require(relaxation > 0.0 && relaxation <= 1.0, ErrorCode::kInvalidArgument,
          "relaxation must lie in (0, 1]");
}

Vector ToyHQProblem::initial_upper_term(Index /*i*/) const { return Vector::Ones(1); }

Vector ToyHQProblem::initial_lower_term(Index /*i*/) const { return Vector(0); }

double ToyHQProblem::upper_value_term(Index i, const ParamVector& theta,
                                      Eigen::Ref<const Vector> upper) const {
  const double r = theta[0] - targets_[i];
  return kernel_.lifted(r, upper[0]);
}

void ToyHQProblem::refine_upper_term(Index i, const ParamVector& theta, Eigen::Ref<Vector> upper,
                                     int passes) const {
  check_passes(passes);
  const double target = kernel_.weight(std::abs(theta[0] - targets_[i]));
  double w = upper[0];
  for (int p = 0; p < passes; ++p) w += relaxation_ * (target - w);
  upper[0] = w;
}

void ToyHQProblem::accumulate_grad_upper_term(Index i, const ParamVector& theta,
                                              Eigen::Ref<const Vector> upper,
                                              Eigen::Ref<Vector> grad) const {
  grad[0] += upper[0] * (theta[0] - targets_[i]);
}

void ToyHQProblem::accumulate_hessian_upper_term(Index /*i*/, const ParamVector& /*theta*/,
                                                 Eigen::Ref<const Vector> upper,
                                                 Eigen::Ref<Matrix> hessian) const {
  hessian(0, 0) += upper[0];
}

double ToyHQProblem::exact_objective_term(Index i, const ParamVector& theta) const {
  return kernel_.psi(theta[0] - targets_[i]);
}

ParamVector ToyHQProblem::minimize_theta(const ParamVector& theta,
                                         const UpperLatent& upper) const {
  check_theta(theta);
  check_upper(upper);
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < targets_.size(); ++i) {
    num += upper.values[i] * targets_[i];
    den += upper.values[i];
  }
  if (den <= 0.0) return theta;
  ParamVector out(1);
  out[0] = num / den;
  return out;
}

std::vector<double> make_toy_targets(int count, double outlier_fraction, double inlier_sigma,
                                     double outlier_offset, unsigned long long seed) {
  require(count >= 1, ErrorCode::kInvalidArgument, "count must be positive");
  require(outlier_fraction >= 0.0 && outlier_fraction < 1.0, ErrorCode::kInvalidArgument,
          "outlier fraction must lie in [0, 1)");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, inlier_sigma);
  const int outliers = static_cast<int>(std::lround(outlier_fraction * count));
  std::vector<double> targets;
  targets.reserve(count);
  for (int i = 0; i < count - outliers; ++i) targets.push_back(noise(rng));
  for (int i = 0; i < outliers; ++i) {
    const double sign = (i % 2 == 0) ? 1.0 : -1.0;
    targets.push_back(sign * outlier_offset + noise(rng));
  }
  return targets;
}

}  // namespace gapmm
