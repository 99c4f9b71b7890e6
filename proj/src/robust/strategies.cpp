#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>

#include "gapmm/error.hpp"
#include "gapmm/robust_fitting.hpp"

namespace gapmm {

namespace {

double lifted_from_norms(const RobustKernel& kernel, const Vector& norms, const Vector& w) {
  double total = 0.0;
  for (Index i = 0; i < norms.size(); ++i) total += kernel.lifted(norms[i], w[i]);
  return total;
}

Vector weights_from_norms(const RobustKernel& kernel, const Vector& norms, double sigma) {
  Vector w(norms.size());
  for (Index i = 0; i < norms.size(); ++i) w[i] = kernel.weight(norms[i] / sigma);
  return w;
}

}  // namespace

RoundResult irls_round(const RobustModel& model, const ParamVector& theta, LMState& state) {
  return graduated_round(model, theta, 1.0, state);
}

RoundResult graduated_round(const RobustModel& model, const ParamVector& theta, double sigma,
                            LMState& state) {
  require(sigma >= 1.0, ErrorCode::kInvalidArgument, "sigma must be >= 1");
  RoundResult out;
  const Vector norms = model.residual_norms(theta);
  out.weights = weights_from_norms(model.kernel(), norms, sigma);
  out.upper = lifted_from_norms(model.kernel(), norms, out.weights);
  out.theta = solve_weighted_nlls(model, theta, out.weights, state, &out.report);
  return out;
}

RoundResult joint_hq_round(const RobustModel& model, const ParamVector& theta,
                           const Vector& weights, LMState& state) {
  RoundResult out;
  out.upper = lifted_cost(model, theta, weights);
  JointHQResult res = solve_joint_hq(model, theta, weights, state);
  out.theta = std::move(res.theta);
  out.weights = std::move(res.weights);
  out.report = res.report;
  return out;
}

SigmaSelection select_sigma_regemm(const RobustModel& model, const ParamVector& theta_prev,
                                   double j_prev_upper, double eta, double eta_prime) {
  require(eta > 0.0 && eta < eta_prime && eta_prime < 1.0, ErrorCode::kInvalidArgument,
          "need 0 < eta < eta' < 1");
  const RobustKernel& kernel = model.kernel();
  const Vector norms = model.residual_norms(theta_prev);
  double objective = 0.0;
  for (Index i = 0; i < norms.size(); ++i) objective += kernel.psi(norms[i]);

  SigmaSelection sel;
  sel.objective = objective;
  sel.window_low = eta_prime * objective + (1.0 - eta_prime) * j_prev_upper;
  sel.window_high = eta * objective + (1.0 - eta) * j_prev_upper;
  const double slack = 1e-12 * std::max({1.0, std::abs(objective), std::abs(j_prev_upper)});
  if (objective > j_prev_upper + slack) {
    fail(ErrorCode::kInvariantViolation,
         "J(theta_prev) exceeds the previous upper bound; the selection window is empty");
  }

  auto value = [&](double sigma) {
    ++sel.evaluations;
    return lifted_from_norms(kernel, norms, weights_from_norms(kernel, norms, sigma));
  };
  auto finish = [&](double sigma, double upper, bool met) {
    sel.sigma = sigma;
    sel.weights = weights_from_norms(kernel, norms, sigma);
    sel.upper = upper;
    sel.window_met = met;
    return sel;
  };
  auto in_window = [&](double v) { return v >= sel.window_low && v <= sel.window_high; };

  auto linear_scan = [&](double sigma_max) {
    sel.linear_scan = true;
    constexpr int kGrid = 2000;
    double best_sigma = 1.0;
    double best_value = value(1.0);
    const double log_max = std::log(sigma_max);
    for (int k = 0; k <= kGrid; ++k) {
      const double s = std::exp(log_max * k / kGrid);
      const double v = value(s);
      if (in_window(v)) return finish(s, v, true);
      if (v <= sel.window_high && v > best_value) {
        best_sigma = s;
        best_value = v;
      }
    }
    return finish(best_sigma, best_value, in_window(best_value));
  };

  double lo = 1.0;
  double f_lo = value(lo);
  if (f_lo >= sel.window_low) return finish(lo, f_lo, f_lo <= sel.window_high);

  constexpr double kSigmaCap = 1099511627776.0;  // 2^40
  double hi = 2.0;
  double f_hi = value(hi);
  while (f_hi < sel.window_low) {
    if (f_hi < f_lo) return linear_scan(hi);
    if (hi >= kSigmaCap) return finish(hi, f_hi, false);
    lo = hi;
    f_lo = f_hi;
    hi *= 2.0;
    f_hi = value(hi);
  }
  if (f_hi < f_lo) return linear_scan(hi);
  if (f_hi <= sel.window_high) return finish(hi, f_hi, true);

  for (int step = 0; step < 60 && hi - lo > 1e-6; ++step) {
    const double mid = 0.5 * (lo + hi);
    const double f_mid = value(mid);
    if (f_mid < f_lo || f_mid > f_hi) return linear_scan(hi);
    if (in_window(f_mid)) return finish(mid, f_mid, true);
    if (f_mid < sel.window_low) {
      lo = mid;
      f_lo = f_mid;
    } else {
      hi = mid;
      f_hi = f_mid;
    }
  }
  // lo still satisfies the ReGeMM side of the window.
  return finish(lo, f_lo, false);
}

const char* to_string(RobustStrategy strategy) {
  switch (strategy) {
    case RobustStrategy::kIrls: return "irls";
    case RobustStrategy::kJointHq: return "joint-hq";
    case RobustStrategy::kGraduated: return "graduated";
    case RobustStrategy::kReGeMM: return "regemm";
  }
  return "unknown";
}

RobustStrategy parse_robust_strategy(std::string_view name) {
  if (name == "irls") return RobustStrategy::kIrls;
  if (name == "joint-hq") return RobustStrategy::kJointHq;
  if (name == "graduated") return RobustStrategy::kGraduated;
  if (name == "regemm") return RobustStrategy::kReGeMM;
  fail(ErrorCode::kInvalidArgument, "unknown strategy '" + std::string(name) + "'");
}

double GraduatedSchedule::sigma(int round) const {
  const int level = rounds_per_level > 0 ? (std::max(round, 1) - 1) / rounds_per_level : 0;
  return std::max(1.0, sigma_start * std::pow(factor, level));
}

RunTrace run_robust_strategy(const RobustModel& model, const ParamVector& theta0,
                             RobustStrategy strategy, const RobustFitConfig& config) {
  require(config.rounds >= 0, ErrorCode::kInvalidArgument, "rounds must be >= 0");
  if (theta0.size() != model.parameter_count()) {
    fail(ErrorCode::kDimensionMismatch, "theta0 does not match the model's parameter count");
  }
  if (strategy == RobustStrategy::kGraduated) {
    require(config.graduated.sigma_start >= 1.0 && config.graduated.factor > 0.0 &&
                config.graduated.factor < 1.0,
            ErrorCode::kInvalidArgument, "graduated schedule needs start >= 1, factor in (0,1)");
  }

  LMState lm = config.lm;
  RunTrace trace;
  trace.driver = to_string(strategy);
  trace.eta = config.eta;
  ParamVector theta = theta0;
  Vector weights = Vector::Ones(model.observation_count());
  double previous_upper = lifted_cost(model, theta, weights);
  trace.initial_upper = previous_upper;
  double objective = robust_cost(model, theta);

  for (int t = 1; t <= config.rounds; ++t) {
    TraceRecord rec;
    rec.t = t;
    rec.lower = objective;
    RoundResult round;
    switch (strategy) {
      case RobustStrategy::kIrls:
        round = irls_round(model, theta, lm);
        rec.passes = 1;
        break;
      case RobustStrategy::kGraduated:
        round = graduated_round(model, theta, config.graduated.sigma(t), lm);
        rec.passes = 1;
        break;
      case RobustStrategy::kJointHq:
        round = joint_hq_round(model, theta, weights, lm);
        rec.passes = 1;
        break;
      case RobustStrategy::kReGeMM: {
        const SigmaSelection sel =
            select_sigma_regemm(model, theta, previous_upper, config.eta, config.eta_prime);
        round.weights = sel.weights;
        round.upper = sel.upper;
        round.theta = solve_weighted_nlls(model, theta, sel.weights, lm, &round.report);
        rec.passes = sel.evaluations;
        if (!sel.window_met) rec.flags |= kFlagCriterionUnreachable;
        break;
      }
    }
    rec.accepted_passes = static_cast<int>(rec.passes);
    rec.upper = round.upper;
    rec.c_t = previous_upper - objective;
    rec.gap = round.upper - objective;
    rec.grad_norm = round.report.initial_gradient_norm;
    rec.step_norm = (round.theta - theta).norm();
    theta = std::move(round.theta);
    weights = std::move(round.weights);
    objective = robust_cost(model, theta);
    rec.objective_after = objective;
    previous_upper = round.upper;
    trace.records.push_back(std::move(rec));
  }
  trace.theta = theta;
  return trace;
}

void write_summary_csv(const std::vector<BenchmarkRow>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot open '" + path + "' for writing");
  out << kSummaryCsvHeader << '\n';
  for (const auto& r : rows) {
    out << r.instance << ',' << r.strategy << ',' << format_double(r.final_cost) << ','
        << r.rounds << ',' << format_double(r.wall_ms) << '\n';
  }
  out.flush();
  if (!out) fail(ErrorCode::kIo, "failed writing '" + path + "'");
}

std::vector<BenchmarkRow> run_ba_benchmark(const std::vector<BenchmarkInstance>& instances,
                                           const std::vector<RobustStrategy>& strategies,
                                           const RobustFitConfig& config,
                                           const std::string& out_dir) {
  namespace fs = std::filesystem;
  if (!out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) fail(ErrorCode::kIo, "cannot create output directory '" + out_dir + "'");
  }
  std::vector<BenchmarkRow> rows;
  for (const auto& inst : instances) {
    for (RobustStrategy s : strategies) {
      BenchmarkRow row;
      row.instance = inst.name;
      row.strategy = to_string(s);
      const auto start = std::chrono::steady_clock::now();
      try {
        const BAModel model(inst.problem);
        const ParamVector theta0 =
            inst.theta0.size() > 0 ? inst.theta0 : pack_parameters(inst.problem);
        row.trace = run_robust_strategy(model, theta0, s, config);
        row.rounds = static_cast<int>(row.trace.records.size());
        row.final_cost = row.rounds > 0 ? row.trace.records.back().objective_after
                                        : robust_cost(model, theta0);
      } catch (const std::exception& e) {
        row.error = e.what();
        row.final_cost = std::numeric_limits<double>::quiet_NaN();
        row.trace.status = TraceStatus::kAborted;
        row.trace.diagnostic = e.what();
      }
      row.wall_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
              .count();
      if (!out_dir.empty()) {
        save_trace_csv(row.trace,
                       (fs::path(out_dir) / (row.instance + "__" + row.strategy + ".csv")).string());
      }
      rows.push_back(std::move(row));
    }
  }
  if (!out_dir.empty()) write_summary_csv(rows, (fs::path(out_dir) / "summary.csv").string());
  return rows;
}

// ---------------------------------------------------------------------------

RobustFitProblem::RobustFitProblem(const RobustModel& model, LMState lm)
    : model_(model), lm_(lm) {}

Vector RobustFitProblem::initial_upper_term(Index /*i*/) const { return Vector::Ones(1); }

Vector RobustFitProblem::initial_lower_term(Index /*i*/) const { return Vector(0); }

double RobustFitProblem::upper_value_term(Index i, const ParamVector& theta,
                                          Eigen::Ref<const Vector> upper) const {
  Vector r(model_.residual_dim());
  model_.residual(i, theta, r);
  return model_.kernel().lifted(r.norm(), upper[0]);
}

void RobustFitProblem::refine_upper_term(Index i, const ParamVector& theta,
                                         Eigen::Ref<Vector> upper, int passes) const {
  check_passes(passes);
  Vector r(model_.residual_dim());
  model_.residual(i, theta, r);
  upper[0] = model_.kernel().weight(r.norm());
}

void RobustFitProblem::accumulate_grad_upper_term(Index i, const ParamVector& theta,
                                                  Eigen::Ref<const Vector> upper,
                                                  Eigen::Ref<Vector> grad) const {
  const ObservationBlock b = model_.block(i);
  const Index dim = model_.residual_dim();
  Vector r(dim);
  Matrix jc(dim, b.reduced_width);
  Matrix jp = Matrix::Zero(dim, b.point_block >= 0 ? model_.point_block_size() : 0);
  model_.linearize(i, theta, r, jc, jp);
  grad.segment(b.reduced_offset, b.reduced_width) += upper[0] * jc.transpose() * r;
  if (b.point_block >= 0) {
    grad.segment(model_.point_offset(b.point_block), model_.point_block_size()) +=
        upper[0] * jp.transpose() * r;
  }
}

double RobustFitProblem::exact_objective_term(Index i, const ParamVector& theta) const {
  Vector r(model_.residual_dim());
  model_.residual(i, theta, r);
  return model_.kernel().psi(r.norm());
}

ParamVector RobustFitProblem::minimize_theta(const ParamVector& theta,
                                             const UpperLatent& upper) const {
  check_theta(theta);
  check_upper(upper);
  LMState state = lm_;
  return solve_weighted_nlls(model_, theta, upper.values, state);
}

}  // namespace gapmm
