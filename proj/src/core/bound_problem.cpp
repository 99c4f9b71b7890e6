#include "gapmm/bound_problem.hpp"

#include <algorithm>
#include <string>
#include <vector>

#include "gapmm/error.hpp"
#include "gapmm/parallel.hpp"

namespace gapmm {

void BoundProblem::check_theta(const ParamVector& theta) const {
  if (theta.size() != dimension()) {
    fail(ErrorCode::kDimensionMismatch, "theta has dimension " + std::to_string(theta.size()) +
                                            ", problem expects " + std::to_string(dimension()));
  }
}

void BoundProblem::check_passes(int passes) {
  if (passes < 1) fail(ErrorCode::kInvalidArgument, "refinement needs at least one pass");
}

double BoundProblem::lower_value(const ParamVector& theta, const LowerLatent& /*lower*/) const {
  if (capabilities().exact_objective) return exact_objective(theta);
  fail(ErrorCode::kUnsupported, "problem provides neither a lower bound nor an exact objective");
}

LowerLatent BoundProblem::refine_lower(const ParamVector& theta, LowerLatent lower,
                                       int passes) const {
  check_passes(passes);
  check_theta(theta);
  if (capabilities().exact_objective && !capabilities().lower_bound) return lower;
  fail(ErrorCode::kUnsupported, "problem provides no lower-bound refinement");
}

double BoundProblem::exact_objective(const ParamVector& /*theta*/) const {
  fail(ErrorCode::kUnsupported, "exact objective not available for this problem");
}

ParamVector BoundProblem::minimize_theta(const ParamVector& /*theta*/,
                                         const UpperLatent& /*upper*/) const {
  fail(ErrorCode::kUnsupported, "problem has no inner theta solver");
}

double BoundProblem::duality_gap(const ParamVector& theta, const UpperLatent& upper,
                                 const LowerLatent& lower) const {
  return upper_value(theta, upper) - lower_value(theta, lower);
}

// ---------------------------------------------------------------------------

void SeparableBoundProblem::check_upper(const UpperLatent& upper) const {
  if (upper.size() != term_count() * term_upper_size()) {
    fail(ErrorCode::kDimensionMismatch, "upper latent has wrong size");
  }
}

void SeparableBoundProblem::check_lower(const LowerLatent& lower) const {
  if (lower.size() != term_count() * term_lower_size()) {
    fail(ErrorCode::kDimensionMismatch, "lower latent has wrong size");
  }
}

double SeparableBoundProblem::lower_value_term(Index i, const ParamVector& theta,
                                               Eigen::Ref<const Vector> /*lower*/) const {
  if (capabilities().exact_objective) return exact_objective_term(i, theta);
  fail(ErrorCode::kUnsupported, "problem provides neither a lower bound nor an exact objective");
}

void SeparableBoundProblem::refine_lower_term(Index /*i*/, const ParamVector& /*theta*/,
                                              Eigen::Ref<Vector> /*lower*/, int passes) const {
  check_passes(passes);
  if (capabilities().exact_objective && !capabilities().lower_bound) return;
  fail(ErrorCode::kUnsupported, "problem provides no lower-bound refinement");
}

void SeparableBoundProblem::accumulate_hessian_upper_term(Index /*i*/,
                                                          const ParamVector& /*theta*/,
                                                          Eigen::Ref<const Vector> /*upper*/,
                                                          Eigen::Ref<Matrix> /*hessian*/) const {
  fail(ErrorCode::kUnsupported, "problem provides no per-term Hessian");
}

double SeparableBoundProblem::exact_objective_term(Index /*i*/,
                                                   const ParamVector& /*theta*/) const {
  fail(ErrorCode::kUnsupported, "exact objective not available for this problem");
}

UpperLatent SeparableBoundProblem::initial_upper() const {
  const Index n = term_count();
  const Index m = term_upper_size();
  Vector values(n * m);
  for (Index i = 0; i < n; ++i) values.segment(i * m, m) = initial_upper_term(i);
  return UpperLatent(std::move(values));
}

LowerLatent SeparableBoundProblem::initial_lower() const {
  const Index n = term_count();
  const Index m = term_lower_size();
  Vector values(n * m);
  for (Index i = 0; i < n; ++i) values.segment(i * m, m) = initial_lower_term(i);
  return LowerLatent(std::move(values));
}

double SeparableBoundProblem::upper_value(const ParamVector& theta,
                                          const UpperLatent& upper) const {
  check_theta(theta);
  check_upper(upper);
  std::vector<double> parts(term_count());
  parallel_for(term_count(),
               [&](Index i) { parts[i] = upper_value_term(i, theta, upper_term(upper, i)); });
  double total = 0.0;
  for (double p : parts) total += p;
  return total;
}

double SeparableBoundProblem::lower_value(const ParamVector& theta,
                                          const LowerLatent& lower) const {
  check_theta(theta);
  const auto caps = capabilities();
  if (!caps.lower_bound && !caps.exact_objective) {
    fail(ErrorCode::kUnsupported, "problem provides neither a lower bound nor an exact objective");
  }
  if (caps.lower_bound) check_lower(lower);
  std::vector<double> parts(term_count());
  parallel_for(term_count(), [&](Index i) {
    parts[i] = caps.lower_bound ? lower_value_term(i, theta, lower_term(lower, i))
                                : exact_objective_term(i, theta);
  });
  double total = 0.0;
  for (double p : parts) total += p;
  return total;
}

UpperLatent SeparableBoundProblem::refine_upper(const ParamVector& theta, UpperLatent upper,
                                                int passes) const {
  check_passes(passes);
  check_theta(theta);
  check_upper(upper);
  const Index m = term_upper_size();
  parallel_for(term_count(), [&](Index i) {
    refine_upper_term(i, theta, upper.values.segment(i * m, m), passes);
  });
  return upper;
}

LowerLatent SeparableBoundProblem::refine_lower(const ParamVector& theta, LowerLatent lower,
                                                int passes) const {
  check_passes(passes);
  check_theta(theta);
  if (!capabilities().lower_bound) return BoundProblem::refine_lower(theta, std::move(lower), passes);
  check_lower(lower);
  const Index m = term_lower_size();
  parallel_for(term_count(), [&](Index i) {
    refine_lower_term(i, theta, lower.values.segment(i * m, m), passes);
  });
  return lower;
}

Vector SeparableBoundProblem::grad_theta_upper(const ParamVector& theta,
                                               const UpperLatent& upper) const {
  check_theta(theta);
  check_upper(upper);
  // Fixed-size chunks keep the summation order independent of the worker count.
  constexpr Index kChunk = 32;
  const Index n = term_count();
  const Index d = dimension();
  const Index chunks = (n + kChunk - 1) / kChunk;
  Matrix parts = Matrix::Zero(d, chunks);
  parallel_for(chunks, [&](Index c) {
    const Index end = std::min(n, (c + 1) * kChunk);
    for (Index i = c * kChunk; i < end; ++i) {
      accumulate_grad_upper_term(i, theta, upper_term(upper, i), parts.col(c));
    }
  });
  Vector grad = Vector::Zero(d);
  for (Index c = 0; c < chunks; ++c) grad += parts.col(c);
  return grad;
}

double SeparableBoundProblem::exact_objective(const ParamVector& theta) const {
  check_theta(theta);
  if (!capabilities().exact_objective) {
    fail(ErrorCode::kUnsupported, "exact objective not available for this problem");
  }
  double total = 0.0;
  for (Index i = 0; i < term_count(); ++i) total += exact_objective_term(i, theta);
  return total;
}

}  // namespace gapmm
