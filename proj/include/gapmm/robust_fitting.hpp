#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "gapmm/ba_problem.hpp"
#include "gapmm/bound_problem.hpp"
#include "gapmm/robust_model.hpp"
#include "gapmm/trace.hpp"

namespace gapmm {

/// sum_i psi(|r_i|).
double robust_cost(const RobustModel& model, const ParamVector& theta);
/// sum_i (w_i |r_i|^2 / 2 + kappa(w_i)).
double lifted_cost(const RobustModel& model, const ParamVector& theta, const Vector& weights);
/// w_i = weight(|r_i| / sigma).
Vector scaled_weights(const RobustModel& model, const ParamVector& theta, double sigma = 1.0);
/// d/dtheta of sum_i w_i |r_i|^2 / 2.
Vector weighted_gradient(const RobustModel& model, const ParamVector& theta,
                         const Vector& weights);

/// Levenberg-Marquardt settings and the damping carried between calls.
struct LMState {
  double damping = 1e-4;
  double shrink = 1.0 / 3.0;
  double grow = 10.0;
  double min_damping = 1e-14;
  double max_damping = 1e14;
  /// Linearizations per call.
  int max_iterations = 1;
  /// Damping increases tried per linearization before giving up.
  int max_retries = 12;
  double min_relative_decrease = 1e-9;
};

struct LMReport {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  double initial_gradient_norm = 0.0;
  int iterations = 0;
  int evaluations = 0;
  /// No damping level produced a decrease (includes singular systems).
  bool no_progress = false;
  /// Stopped because the predicted decrease was at rounding level.
  bool stationary = false;
};

/// Minimizes sum_i w_i |r_i(theta)|^2 / 2 with Schur-complement LM. The cost
/// never increases.
ParamVector solve_weighted_nlls(const RobustModel& model, const ParamVector& theta,
                                const Vector& weights, LMState& state,
                                LMReport* report = nullptr);

struct JointHQResult {
  ParamVector theta;
  Vector weights;
  LMReport report;
};

/// LM on (theta, v) for the lifted cost with w = v^2; the per-observation v
/// is eliminated before the point blocks. Needs a kernel with a joint lift.
JointHQResult solve_joint_hq(const RobustModel& model, const ParamVector& theta,
                             const Vector& weights, LMState& state);

struct RoundResult {
  ParamVector theta;
  Vector weights;  // latent used (IRLS, graduated, ReGeMM) or reached (joint HQ)
  double upper = 0.0;
  LMReport report;
};

RoundResult irls_round(const RobustModel& model, const ParamVector& theta, LMState& state);
RoundResult joint_hq_round(const RobustModel& model, const ParamVector& theta,
                           const Vector& weights, LMState& state);
RoundResult graduated_round(const RobustModel& model, const ParamVector& theta, double sigma,
                            LMState& state);

struct SigmaSelection {
  double sigma = 1.0;
  Vector weights;
  double upper = 0.0;       // lifted cost at the selected weights
  double objective = 0.0;   // J(theta_prev)
  double window_low = 0.0;  // eta' J + (1 - eta') J_prev_upper
  double window_high = 0.0; // eta J + (1 - eta) J_prev_upper
  int evaluations = 0;
  bool linear_scan = false;
  /// False when even unit weights stay below the window; upper then still
  /// satisfies the ReGeMM side.
  bool window_met = true;
};

/// Picks sigma >= 1 so that the lifted cost at w_i = weight(|r_i| / sigma)
/// lands in [window_low, window_high]: bracket doubling from [1, 2], then
/// bisection to 1e-6 in sigma (at most 60 steps). Falls back to a grid scan if
/// the lifted cost is not monotone over the bracket.
SigmaSelection select_sigma_regemm(const RobustModel& model, const ParamVector& theta_prev,
                                   double j_prev_upper, double eta, double eta_prime);

enum class RobustStrategy { kIrls, kJointHq, kGraduated, kReGeMM };

const char* to_string(RobustStrategy strategy);
/// "irls", "joint-hq", "graduated", "regemm".
RobustStrategy parse_robust_strategy(std::string_view name);

/// sigma_k = max(1, start * factor^level), level advancing every
/// rounds_per_level rounds.
struct GraduatedSchedule {
  double sigma_start = 8.0;
  double factor = 0.5;
  int rounds_per_level = 10;

  double sigma(int round) const;  // round counts from 1
};

struct RobustFitConfig {
  int rounds = 100;
  double eta = 0.5;
  double eta_prime = 0.75;
  LMState lm;
  GraduatedSchedule graduated;
};

/// Runs `rounds` outer iterations. Record t holds lower = J(theta^(t-1)),
/// upper = lifted cost at (theta^(t-1), weights used), c_t against the
/// previous upper (starting from unit weights at theta0), the theta-gradient
/// of the lifted cost, weight evaluations as passes, and J(theta^(t)).
RunTrace run_robust_strategy(const RobustModel& model, const ParamVector& theta0,
                             RobustStrategy strategy, const RobustFitConfig& config);

struct BenchmarkInstance {
  std::string name;
  BAProblem problem;
  ParamVector theta0;  // empty: taken from the problem
};

struct BenchmarkRow {
  std::string instance;
  std::string strategy;
  double final_cost = 0.0;
  int rounds = 0;
  double wall_ms = 0.0;
  std::string error;  // empty on success
  RunTrace trace;
};

inline constexpr const char* kSummaryCsvHeader = "instance,strategy,final_cost,rounds,wall_ms";

/// Every (instance, strategy) pair in order. With a non-empty out_dir writes
/// <instance>__<strategy>.csv per run plus summary.csv. A failing run is
/// recorded and the benchmark continues.
std::vector<BenchmarkRow> run_ba_benchmark(const std::vector<BenchmarkInstance>& instances,
                                           const std::vector<RobustStrategy>& strategies,
                                           const RobustFitConfig& config,
                                           const std::string& out_dir = {});

void write_summary_csv(const std::vector<BenchmarkRow>& rows, const std::string& path);

/// A RobustModel as a separable bound problem: one term per observation, the
/// term's upper latent is its weight, one pass sets it to weight(|r_i|), and
/// the exact objective replaces the lower bound. minimize_theta runs LM with
/// the given settings from a fresh copy of the state.
class RobustFitProblem final : public SeparableBoundProblem {
 public:
  RobustFitProblem(const RobustModel& model, LMState lm = {});

  Index dimension() const override { return model_.parameter_count(); }
  Index term_count() const override { return model_.observation_count(); }
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
  double exact_objective_term(Index i, const ParamVector& theta) const override;
  ParamVector minimize_theta(const ParamVector& theta, const UpperLatent& upper) const override;

 private:
  const RobustModel& model_;
  LMState lm_;
};

}  // namespace gapmm
