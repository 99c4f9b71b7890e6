#pragma once

#include <cstdint>
#include <functional>
#include <limits>

#include "gapmm/bound_problem.hpp"
#include "gapmm/schedule.hpp"
#include "gapmm/trace.hpp"

namespace gapmm {

enum class ThetaUpdate {
  /// theta <- theta - grad / L.
  kGradientStep,
  /// problem.minimize_theta; the constant-memory driver instead takes a
  /// Newton step with the accumulated per-term Hessians.
  kInnerSolver,
};

/// Sees each accepted record together with theta^(t-1) and the previous
/// accepted upper value the criterion was tested against.
using IterationObserver =
    std::function<void(const TraceRecord&, const ParamVector& theta_before, double previous_upper)>;

struct ReGeMMConfig {
  double eta = 0.5;
  int iterations = 100;
  int r_min = 1;
  int r_max = 1024;
  ThetaUpdate theta_update = ThetaUpdate::kInnerSolver;
  double lipschitz = std::numeric_limits<double>::quiet_NaN();  // gradient step only
  /// Stop with kConverged once c_t <= tolerance. Negative disables.
  double tolerance = 0.0;
  IterationObserver observer;
};

struct SuDeMMConfig {
  double rho = 0.5;
  double lipschitz = 1.0;
  int iterations = 100;
  int r_min = 1;
  int r_max = 1024;
  /// Stop with kConverged once the gradient norm drops below this.
  double grad_tolerance = 0.0;
  /// Check J(theta_t) <= J(theta_{t-1}) - (1 - rho)/(2L) |g|^2 when exact J
  /// is available.
  bool check_descent = true;
};

struct StochasticSuDeMMConfig {
  PowerSchedule alpha = PowerSchedule::constant(0.01);
  PowerSchedule rho = PowerSchedule::constant(0.5);
  int batch_size = 10;
  int iterations = 1000;
  int r_max = 40;
  std::uint64_t seed = 0;
  /// > 0 replaces the gap criterion by a fixed number of passes per batch.
  int fixed_passes = 0;
  /// Cold passes per term for the end-of-epoch full-dataset evaluation;
  /// 0 disables it.
  int epoch_eval_passes = 0;
  /// Rejected schedules throw unless this is set.
  bool allow_invalid_schedules = false;
};

struct AlternatingConfig {
  int passes_per_round = 1;
  int rounds = 100;
  ThetaUpdate theta_update = ThetaUpdate::kInnerSolver;
  double lipschitz = std::numeric_limits<double>::quiet_NaN();
  /// Refine from the previous round's latent instead of a cold start.
  bool warm_start = false;
};

RunTrace run_regemm(const BoundProblem& problem, const ParamVector& theta0,
                    const ReGeMMConfig& config);

/// Same acceptance rule evaluated in one sweep over the terms; per-term
/// latents live only while their contribution is accumulated.
RunTrace run_constant_memory_regemm(const SeparableBoundProblem& problem,
                                    const ParamVector& theta0, const ReGeMMConfig& config);

RunTrace run_sudemm(const BoundProblem& problem, const ParamVector& theta0,
                    const SuDeMMConfig& config);

/// Called after each epoch's full-dataset evaluation (when enabled).
using EpochObserver = std::function<void(const EpochRecord&, const ParamVector&)>;

RunTrace run_stochastic_sudemm(const SeparableBoundProblem& problem, const ParamVector& theta0,
                               const StochasticSuDeMMConfig& config,
                               const EpochObserver& observer = {});

RunTrace run_alternating_baseline(const BoundProblem& problem, const ParamVector& theta0,
                                  const AlternatingConfig& config);

/// True iff c_t >= kappa |grad_{t-1}|^2 / (2L) for every t >= 2, with L taken
/// from the trace. Throws if gradient norms or L were not recorded.
bool assert_gradient_regemm_bound(const RunTrace& trace, double kappa = 1.0);

/// Full-problem bound values after `passes` cold passes at theta.
EpochRecord evaluate_bounds(const BoundProblem& problem, const ParamVector& theta, int passes);

}  // namespace gapmm
