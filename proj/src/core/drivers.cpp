#include "gapmm/drivers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Cholesky>

#include "gapmm/error.hpp"
#include "gapmm/parallel.hpp"

namespace gapmm {

namespace {

// Relative size below which a failed inequality is attributed to rounding.
constexpr double kRoundoff = 1e-12;

double roundoff_slack(double a, double b, double c = 0.0) {
  return kRoundoff * std::max({1.0, std::abs(a), std::abs(b), std::abs(c)});
}

void check_finite(const ParamVector& theta) {
  require(theta.allFinite(), ErrorCode::kInvalidArgument, "theta0 must be finite");
}

void check_passes_range(int r_min, int r_max) {
  require(r_min >= 1, ErrorCode::kInvalidArgument, "R_min must be at least 1");
  require(r_max >= r_min, ErrorCode::kInvalidArgument, "R_max must be at least R_min");
}

void check_lower_available(const BoundProblem& problem) {
  const auto caps = problem.capabilities();
  if (!caps.lower_bound && !caps.exact_objective) {
    fail(ErrorCode::kUnsupported, "driver needs a lower bound or the exact objective");
  }
}

bool gradient_step_ok(double lipschitz) { return std::isfinite(lipschitz) && lipschitz > 0.0; }

// Bound values at theta from cold-started R-pass inference.
struct Inference {
  UpperLatent upper;
  LowerLatent lower;
  double upper_value = 0.0;
  double lower_value = 0.0;
};

Inference cold_inference(const BoundProblem& problem, const ParamVector& theta, int passes) {
  Inference inf;
  inf.upper = problem.refine_upper(theta, problem.initial_upper(), passes);
  inf.upper_value = problem.upper_value(theta, inf.upper);
  if (problem.capabilities().lower_bound) {
    inf.lower = problem.refine_lower(theta, problem.initial_lower(), passes);
  }
  inf.lower_value = problem.lower_value(theta, inf.lower);
  return inf;
}

int next_passes(int r, int r_max) { return r >= r_max ? r_max : std::min(2 * r, r_max); }

}  // namespace

EpochRecord evaluate_bounds(const BoundProblem& problem, const ParamVector& theta, int passes) {
  EpochRecord rec;
  const Inference inf = cold_inference(problem, theta, passes);
  rec.upper = inf.upper_value;
  rec.lower = inf.lower_value;
  rec.passes = passes;
  return rec;
}

RunTrace run_regemm(const BoundProblem& problem, const ParamVector& theta0,
                    const ReGeMMConfig& config) {
  require(config.eta > 0.0 && config.eta < 1.0, ErrorCode::kInvalidArgument,
          "eta must lie in (0, 1)");
  require(config.iterations >= 0, ErrorCode::kInvalidArgument, "iterations must be >= 0");
  check_passes_range(config.r_min, config.r_max);
  check_lower_available(problem);
  check_finite(theta0);
  if (config.theta_update == ThetaUpdate::kGradientStep) {
    require(gradient_step_ok(config.lipschitz), ErrorCode::kInvalidArgument,
            "gradient steps need a positive Lipschitz constant");
  }

  RunTrace trace;
  trace.driver = "regemm";
  trace.eta = config.eta;
  trace.lipschitz = config.lipschitz;
  ParamVector theta = theta0;
  if (theta.size() != problem.dimension()) {
    fail(ErrorCode::kDimensionMismatch, "theta0 does not match the problem dimension");
  }
  double previous_upper = problem.upper_value(theta, problem.initial_upper());
  trace.initial_upper = previous_upper;

  for (int t = 1; t <= config.iterations; ++t) {
    TraceRecord rec;
    rec.t = t;
    Inference inf;
    int r = config.r_min;
    bool accepted = false;
    double violation = 0.0;
    for (;;) {
      inf = cold_inference(problem, theta, r);
      rec.tried_passes.push_back(r);
      rec.passes += r;
      const double rhs = config.eta * inf.lower_value + (1.0 - config.eta) * previous_upper;
      if (inf.upper_value <= rhs) {
        accepted = true;
        break;
      }
      violation = inf.upper_value - rhs;
      if (r >= config.r_max) break;
      r = next_passes(r, config.r_max);
    }

    if (!accepted) {
      rec.upper = inf.upper_value;
      rec.lower = inf.lower_value;
      rec.gap = inf.upper_value - inf.lower_value;
      rec.flags |= kFlagCriterionUnreachable;
      if (violation <= roundoff_slack(inf.upper_value, inf.lower_value, previous_upper)) {
        rec.flags |= kFlagStationarity;
        trace.status = TraceStatus::kStationarityReached;
        trace.diagnostic = "acceptance failed only at rounding level at t=" + std::to_string(t);
      } else {
        trace.status = TraceStatus::kAborted;
        trace.diagnostic = "criterion unreachable within R_max=" + std::to_string(config.r_max) +
                           " at t=" + std::to_string(t) + " (upper " +
                           format_double(inf.upper_value) + ", lower " +
                           format_double(inf.lower_value) + ", previous upper " +
                           format_double(previous_upper) + ")";
      }
      trace.records.push_back(std::move(rec));
      break;
    }

    rec.accepted_passes = r;
    rec.upper = inf.upper_value;
    rec.lower = inf.lower_value;
    rec.c_t = previous_upper - inf.lower_value;
    rec.gap = inf.upper_value - inf.lower_value;
    const Vector grad = problem.grad_theta_upper(theta, inf.upper);
    rec.grad_norm = grad.norm();

    ParamVector next = config.theta_update == ThetaUpdate::kGradientStep
                           ? ParamVector(theta - grad / config.lipschitz)
                           : problem.minimize_theta(theta, inf.upper);
    rec.step_norm = (next - theta).norm();
    if (config.observer) config.observer(rec, theta, previous_upper);
    theta = std::move(next);
    if (problem.capabilities().exact_objective) rec.objective_after = problem.exact_objective(theta);

    previous_upper = inf.upper_value;
    const double c_t = rec.c_t;
    trace.records.push_back(std::move(rec));
    if (config.tolerance >= 0.0 && c_t <= config.tolerance) {
      trace.status = TraceStatus::kConverged;
      break;
    }
  }
  trace.theta = theta;
  return trace;
}

namespace {

// Counts per-term latent vectors alive at once in the constant-memory sweep.
class LiveCounter {
 public:
  class Handle {
   public:
    explicit Handle(LiveCounter& c) : c_(c) {
      ++c_.live_;
      c_.peak_ = std::max(c_.peak_, c_.live_);
    }
    ~Handle() { --c_.live_; }
    Handle(const Handle&) = delete;
    Handle& operator=(const Handle&) = delete;

   private:
    LiveCounter& c_;
  };

  long peak() const { return peak_; }

 private:
  long live_ = 0;
  long peak_ = 0;
};

struct Sweep {
  double j0 = 0.0;
  double j1 = 0.0;
  Vector grad;
  Matrix hessian;
};

}  // namespace

RunTrace run_constant_memory_regemm(const SeparableBoundProblem& problem,
                                    const ParamVector& theta0, const ReGeMMConfig& config) {
  require(config.eta > 0.0 && config.eta < 1.0, ErrorCode::kInvalidArgument,
          "eta must lie in (0, 1)");
  require(config.iterations >= 0, ErrorCode::kInvalidArgument, "iterations must be >= 0");
  check_passes_range(config.r_min, config.r_max);
  check_lower_available(problem);
  check_finite(theta0);
  const bool newton = config.theta_update == ThetaUpdate::kInnerSolver;
  if (newton) {
    require(problem.has_term_hessian(), ErrorCode::kUnsupported,
            "inner solves in the constant-memory driver need per-term Hessians");
  } else {
    require(gradient_step_ok(config.lipschitz), ErrorCode::kInvalidArgument,
            "gradient steps need a positive Lipschitz constant");
  }
  if (theta0.size() != problem.dimension()) {
    fail(ErrorCode::kDimensionMismatch, "theta0 does not match the problem dimension");
  }

  const Index n = problem.term_count();
  const Index d = problem.dimension();
  const bool has_lower = problem.capabilities().lower_bound;
  LiveCounter counter;

  auto sweep = [&](const ParamVector& theta, int passes) {
    Sweep s;
    s.grad = Vector::Zero(d);
    if (newton) s.hessian = Matrix::Zero(d, d);
    for (Index i = 0; i < n; ++i) {
      {
        LiveCounter::Handle h(counter);
        Vector u = problem.initial_upper_term(i);
        problem.refine_upper_term(i, theta, u, passes);
        s.j0 += problem.upper_value_term(i, theta, u);
        problem.accumulate_grad_upper_term(i, theta, u, s.grad);
        if (newton) problem.accumulate_hessian_upper_term(i, theta, u, s.hessian);
      }
      if (has_lower) {
        LiveCounter::Handle h(counter);
        Vector l = problem.initial_lower_term(i);
        problem.refine_lower_term(i, theta, l, passes);
        s.j1 += problem.lower_value_term(i, theta, l);
      } else {
        s.j1 += problem.exact_objective_term(i, theta);
      }
    }
    return s;
  };

  RunTrace trace;
  trace.driver = "regemm-constant-memory";
  trace.eta = config.eta;
  trace.lipschitz = config.lipschitz;
  ParamVector theta = theta0;
  double previous_upper = 0.0;
  for (Index i = 0; i < n; ++i) {
    LiveCounter::Handle h(counter);
    previous_upper += problem.upper_value_term(i, theta, problem.initial_upper_term(i));
  }
  trace.initial_upper = previous_upper;

  for (int t = 1; t <= config.iterations; ++t) {
    TraceRecord rec;
    rec.t = t;
    Sweep s;
    int r = config.r_min;
    bool accepted = false;
    double violation = 0.0;
    for (;;) {
      s = sweep(theta, r);
      rec.tried_passes.push_back(r);
      rec.passes += r;
      const double rhs = config.eta * s.j1 + (1.0 - config.eta) * previous_upper;
      if (s.j0 <= rhs) {
        accepted = true;
        break;
      }
      violation = s.j0 - rhs;
      if (r >= config.r_max) break;
      r = next_passes(r, config.r_max);
    }
    rec.upper = s.j0;
    rec.lower = s.j1;
    rec.gap = s.j0 - s.j1;
    if (!accepted) {
      rec.flags |= kFlagCriterionUnreachable;
      if (violation <= roundoff_slack(s.j0, s.j1, previous_upper)) {
        rec.flags |= kFlagStationarity;
        trace.status = TraceStatus::kStationarityReached;
        trace.diagnostic = "acceptance failed only at rounding level at t=" + std::to_string(t);
      } else {
        trace.status = TraceStatus::kAborted;
        trace.diagnostic = "R exceeded R_max=" + std::to_string(config.r_max) +
                           " at t=" + std::to_string(t);
      }
      trace.records.push_back(std::move(rec));
      break;
    }
    rec.accepted_passes = r;
    rec.c_t = previous_upper - s.j1;
    rec.grad_norm = s.grad.norm();

    Vector step;
    if (newton) {
      Eigen::LDLT<Matrix> ldlt(s.hessian);
      if (ldlt.info() != Eigen::Success || ldlt.isNegative() ||
          ldlt.vectorD().cwiseAbs().minCoeff() <= 0.0) {
        step = Vector::Zero(d);  // flat bound in theta: keep theta
      } else {
        step = -ldlt.solve(s.grad);
      }
    } else {
      step = -s.grad / config.lipschitz;
    }
    rec.step_norm = step.norm();
    if (config.observer) config.observer(rec, theta, previous_upper);
    theta += step;
    if (problem.capabilities().exact_objective) rec.objective_after = problem.exact_objective(theta);
    previous_upper = s.j0;
    const double c_t = rec.c_t;
    trace.records.push_back(std::move(rec));
    if (config.tolerance >= 0.0 && c_t <= config.tolerance) {
      trace.status = TraceStatus::kConverged;
      break;
    }
  }
  trace.theta = theta;
  trace.peak_live_term_latents = counter.peak();
  return trace;
}

RunTrace run_sudemm(const BoundProblem& problem, const ParamVector& theta0,
                    const SuDeMMConfig& config) {
  require(config.rho > 0.0 && config.rho < 1.0, ErrorCode::kInvalidArgument,
          "rho must lie in (0, 1)");
  require(gradient_step_ok(config.lipschitz), ErrorCode::kInvalidArgument, "L must be positive");
  require(config.iterations >= 0, ErrorCode::kInvalidArgument, "iterations must be >= 0");
  check_passes_range(config.r_min, config.r_max);
  check_lower_available(problem);
  check_finite(theta0);
  if (theta0.size() != problem.dimension()) {
    fail(ErrorCode::kDimensionMismatch, "theta0 does not match the problem dimension");
  }

  const double L = config.lipschitz;
  const bool exact = problem.capabilities().exact_objective;
  RunTrace trace;
  trace.driver = "sudemm";
  trace.rho = config.rho;
  trace.lipschitz = L;
  ParamVector theta = theta0;
  double previous_upper = problem.upper_value(theta, problem.initial_upper());
  trace.initial_upper = previous_upper;
  double objective = exact && config.check_descent ? problem.exact_objective(theta) : 0.0;

  for (int t = 1; t <= config.iterations; ++t) {
    TraceRecord rec;
    rec.t = t;
    Inference inf;
    Vector grad;
    int r = config.r_min;
    bool accepted = false;
    for (;;) {
      inf = cold_inference(problem, theta, r);
      grad = problem.grad_theta_upper(theta, inf.upper);
      rec.tried_passes.push_back(r);
      rec.passes += r;
      const double gap = inf.upper_value - inf.lower_value;
      if (gap <= config.rho / (2.0 * L) * grad.squaredNorm()) {
        accepted = true;
        break;
      }
      if (r >= config.r_max) break;
      r = next_passes(r, config.r_max);
    }
    rec.upper = inf.upper_value;
    rec.lower = inf.lower_value;
    rec.gap = inf.upper_value - inf.lower_value;
    rec.grad_norm = grad.norm();
    if (!accepted) {
      rec.flags |= kFlagCriterionUnreachable | kFlagStationarity;
      trace.status = TraceStatus::kStationarityReached;
      trace.diagnostic = "stationarity reached: gap criterion unreachable within R_max=" +
                         std::to_string(config.r_max) + " at t=" + std::to_string(t);
      trace.records.push_back(std::move(rec));
      break;
    }
    rec.accepted_passes = r;
    rec.c_t = previous_upper - inf.lower_value;
    const Vector step = -grad / L;
    rec.step_norm = step.norm();
    theta += step;
    if (exact && config.check_descent) {
      const double next_objective = problem.exact_objective(theta);
      rec.objective_after = next_objective;
      const double bound = objective - (1.0 - config.rho) / (2.0 * L) * grad.squaredNorm();
      if (next_objective > bound + roundoff_slack(objective, next_objective)) {
        rec.flags |= kFlagDescentViolation;
        ++trace.descent_violations;
      }
      objective = next_objective;
    }
    previous_upper = inf.upper_value;
    const double g = rec.grad_norm;
    trace.records.push_back(std::move(rec));
    if (g < config.grad_tolerance) {
      trace.status = TraceStatus::kConverged;
      break;
    }
  }
  trace.theta = theta;
  return trace;
}

RunTrace run_stochastic_sudemm(const SeparableBoundProblem& problem, const ParamVector& theta0,
                               const StochasticSuDeMMConfig& config,
                               const EpochObserver& observer) {
  require(config.batch_size >= 1, ErrorCode::kInvalidArgument, "batch size must be >= 1");
  require(config.iterations >= 0, ErrorCode::kInvalidArgument, "iterations must be >= 0");
  require(config.r_max >= 1, ErrorCode::kInvalidArgument, "R_max must be >= 1");
  require(config.fixed_passes >= 0, ErrorCode::kInvalidArgument, "fixed passes must be >= 0");
  check_lower_available(problem);
  check_finite(theta0);
  if (theta0.size() != problem.dimension()) {
    fail(ErrorCode::kDimensionMismatch, "theta0 does not match the problem dimension");
  }
  const ScheduleCheck check = validate_schedules(config.alpha, config.rho);
  if (check.verdict == ScheduleVerdict::kRejected && !config.allow_invalid_schedules) {
    fail(ErrorCode::kInvalidArgument, "invalid schedule: " + check.message);
  }

  const Index n = problem.term_count();
  require(n >= 1, ErrorCode::kInvalidArgument, "problem has no terms");
  const Index batch = std::min<Index>(config.batch_size, n);
  const Index per_epoch = n / batch;  // full batches only, the remainder waits
  const Index mu = problem.term_upper_size();
  const Index ml = problem.term_lower_size();
  const Index d = problem.dimension();
  const bool has_lower = problem.capabilities().lower_bound;

  RunTrace trace;
  trace.driver = config.fixed_passes > 0 ? "stochastic-fixed" : "stochastic-sudemm";
  trace.diagnostic = check.message;
  ParamVector theta = theta0;

  std::mt19937_64 rng(config.seed);
  std::vector<Index> order(n);
  std::iota(order.begin(), order.end(), Index{0});
  Index cursor = per_epoch * batch;  // forces a shuffle on the first draw
  long epoch_passes = 0;
  int epoch_iterations = 0;

  std::vector<Index> members(batch);
  Matrix uppers(mu, batch);
  Matrix lowers(ml, batch);
  std::vector<double> j0(batch), j1(batch);
  Matrix grads(d, batch);

  for (int t = 1; t <= config.iterations; ++t) {
    if (cursor + batch > n) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    for (Index b = 0; b < batch; ++b) members[b] = order[cursor + b];
    cursor += batch;

    parallel_for(batch, [&](Index b) {
      uppers.col(b) = problem.initial_upper_term(members[b]);
      if (has_lower) lowers.col(b) = problem.initial_lower_term(members[b]);
    });

    TraceRecord rec;
    rec.t = t;
    const double rho_t = config.rho.value(t);
    const double alpha_t = config.alpha.value(t);
    bool accepted = false;
    Vector g(d);
    double gap = 0.0;
    const int cap = config.fixed_passes > 0 ? config.fixed_passes : config.r_max;
    for (int r = 1; r <= cap; ++r) {
      // One more warm pass on every batch member.
      parallel_for(batch, [&](Index b) {
        const Index i = members[b];
        problem.refine_upper_term(i, theta, uppers.col(b), 1);
        if (has_lower) problem.refine_lower_term(i, theta, lowers.col(b), 1);
        j0[b] = problem.upper_value_term(i, theta, uppers.col(b));
        j1[b] = has_lower ? problem.lower_value_term(i, theta, lowers.col(b))
                          : problem.exact_objective_term(i, theta);
        grads.col(b).setZero();
        problem.accumulate_grad_upper_term(i, theta, uppers.col(b), grads.col(b));
      });
      rec.passes = r;
      double up = 0.0, lo = 0.0;
      g.setZero();
      for (Index b = 0; b < batch; ++b) {
        up += j0[b];
        lo += j1[b];
        g += grads.col(b);
      }
      const double inv = 1.0 / static_cast<double>(batch);
      g *= inv;
      gap = (up - lo) * inv;
      rec.upper = up;
      rec.lower = lo;
      if (config.fixed_passes > 0) {
        accepted = r == cap;
      } else if (gap <= 0.5 * rho_t * g.squaredNorm()) {
        accepted = true;
      }
      if (accepted) break;
    }
    rec.gap = gap;
    rec.grad_norm = g.norm();
    if (accepted) {
      rec.accepted_passes = static_cast<int>(rec.passes);
      const Vector step = -alpha_t * g;
      rec.step_norm = step.norm();
      theta += step;
    } else {
      rec.flags |= kFlagSkippedStep | kFlagCriterionUnreachable;
      rec.step_norm = 0.0;
    }
    epoch_passes += rec.passes;
    ++epoch_iterations;
    trace.records.push_back(std::move(rec));

    if (t % per_epoch == 0 || t == config.iterations) {
      if (config.epoch_eval_passes > 0 && epoch_iterations > 0) {
        EpochRecord e = evaluate_bounds(problem, theta, config.epoch_eval_passes);
        e.epoch = static_cast<int>(trace.epochs.size()) + 1;
        e.iterations = epoch_iterations;
        e.passes = epoch_passes;
        trace.epochs.push_back(e);
        if (observer) observer(e, theta);
      }
      epoch_passes = 0;
      epoch_iterations = 0;
    }
  }
  trace.theta = theta;
  return trace;
}

RunTrace run_alternating_baseline(const BoundProblem& problem, const ParamVector& theta0,
                                  const AlternatingConfig& config) {
  require(config.passes_per_round >= 1, ErrorCode::kInvalidArgument,
          "passes per round must be >= 1");
  require(config.rounds >= 0, ErrorCode::kInvalidArgument, "rounds must be >= 0");
  check_finite(theta0);
  if (theta0.size() != problem.dimension()) {
    fail(ErrorCode::kDimensionMismatch, "theta0 does not match the problem dimension");
  }
  if (config.theta_update == ThetaUpdate::kGradientStep) {
    require(gradient_step_ok(config.lipschitz), ErrorCode::kInvalidArgument,
            "gradient steps need a positive Lipschitz constant");
  }
  const auto caps = problem.capabilities();
  const bool has_bound = caps.lower_bound || caps.exact_objective;

  RunTrace trace;
  trace.driver = "alternating";
  trace.lipschitz = config.lipschitz;
  ParamVector theta = theta0;
  UpperLatent upper = problem.initial_upper();
  LowerLatent lower = problem.initial_lower();
  double previous_upper = problem.upper_value(theta, upper);
  trace.initial_upper = previous_upper;

  for (int t = 1; t <= config.rounds; ++t) {
    TraceRecord rec;
    rec.t = t;
    upper = problem.refine_upper(theta, config.warm_start ? std::move(upper)
                                                          : problem.initial_upper(),
                                 config.passes_per_round);
    rec.upper = problem.upper_value(theta, upper);
    if (has_bound) {
      if (caps.lower_bound) {
        lower = problem.refine_lower(theta, config.warm_start ? std::move(lower)
                                                              : problem.initial_lower(),
                                     config.passes_per_round);
      }
      rec.lower = problem.lower_value(theta, lower);
      rec.gap = rec.upper - rec.lower;
      rec.c_t = previous_upper - rec.lower;
    }
    rec.passes = config.passes_per_round;
    rec.accepted_passes = config.passes_per_round;
    rec.tried_passes.push_back(config.passes_per_round);
    const Vector grad = problem.grad_theta_upper(theta, upper);
    rec.grad_norm = grad.norm();
    ParamVector next = config.theta_update == ThetaUpdate::kGradientStep
                           ? ParamVector(theta - grad / config.lipschitz)
                           : problem.minimize_theta(theta, upper);
    rec.step_norm = (next - theta).norm();
    theta = std::move(next);
    if (caps.exact_objective) rec.objective_after = problem.exact_objective(theta);
    previous_upper = rec.upper;
    trace.records.push_back(std::move(rec));
  }
  trace.theta = theta;
  return trace;
}

bool assert_gradient_regemm_bound(const RunTrace& trace, double kappa) {
  require(kappa > 0.0 && kappa <= 1.0, ErrorCode::kInvalidArgument, "kappa must lie in (0, 1]");
  require(gradient_step_ok(trace.lipschitz), ErrorCode::kInvalidArgument,
          "trace has no Lipschitz constant");
  for (std::size_t k = 1; k < trace.records.size(); ++k) {
    const TraceRecord& prev = trace.records[k - 1];
    const TraceRecord& cur = trace.records[k];
    if (std::isnan(cur.c_t) && (cur.flags & kFlagCriterionUnreachable)) continue;
    if (std::isnan(prev.grad_norm) || std::isnan(cur.c_t)) {
      fail(ErrorCode::kInvalidArgument, "trace lacks gradient or c_t records");
    }
    const double bound = kappa * prev.grad_norm * prev.grad_norm / (2.0 * trace.lipschitz);
    if (cur.c_t < bound - roundoff_slack(prev.upper, cur.lower)) return false;
  }
  return true;
}

}  // namespace gapmm
