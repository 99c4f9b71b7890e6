#pragma once

#include "gapmm/bound_problem.hpp"

namespace gapmm::oracle {

// Smallest R whose cold R-pass inference at theta meets the ReGeMM rule
// against previous_upper, found by trying R = 1, 2, 3, ...; -1 if none <= r_max.
inline int linear_scan_min_passes(const BoundProblem& problem, const ParamVector& theta,
                                  double previous_upper, double eta, int r_max) {
  for (int r = 1; r <= r_max; ++r) {
    const UpperLatent u = problem.refine_upper(theta, problem.initial_upper(), r);
    LowerLatent l = problem.initial_lower();
    if (problem.capabilities().lower_bound) l = problem.refine_lower(theta, std::move(l), r);
    const double j0 = problem.upper_value(theta, u);
    const double j1 = problem.lower_value(theta, l);
    if (j0 <= eta * j1 + (1.0 - eta) * previous_upper) return r;
  }
  return -1;
}

}  // namespace gapmm::oracle
