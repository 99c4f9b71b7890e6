#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "gapmm/datasets.hpp"
#include "gapmm/drivers.hpp"
#include "gapmm/error.hpp"
#include "gapmm/robust_fitting.hpp"
#include "gapmm/toy_hq.hpp"
#include "support/linear_model.hpp"

namespace gapmm {
namespace {

constexpr double kPi = 3.14159265358979323846;

CameraPose unit_camera() {
  CameraPose c;
  c.translation = Vector3(0, 0, -1);
  c.focal = 1.0;
  return c;
}

SyntheticBASpec small_spec(std::uint64_t seed) {
  SyntheticBASpec s;
  s.cameras = 3;
  s.points = 20;
  s.density = 0.8;
  s.seed = seed;
  return s;
}

TEST(Projection, OnAxisPointProjectsToOrigin) {
  const Vector2 p = project(unit_camera(), Vector3(0, 0, 0));
  EXPECT_DOUBLE_EQ(p.x(), 0.0);
  EXPECT_DOUBLE_EQ(p.y(), 0.0);
}

TEST(Projection, OffsetPoint) {
  const Vector2 p = project(unit_camera(), Vector3(0.1, 0, 0));
  EXPECT_NEAR(p.x(), 0.1, 1e-15);
  EXPECT_NEAR(p.y(), 0.0, 1e-15);
}

TEST(Projection, HalfTurnAboutZ) {
  CameraPose c = unit_camera();
  c.rotation = Vector3(0, 0, kPi);
  // Rodrigues by hand: a half turn about z maps (x, y, z) to (-x, -y, z).
  const Vector2 p = project(c, Vector3(0.1, 0, 0));
  EXPECT_NEAR(p.x(), -0.1, 1e-15);
  EXPECT_NEAR(p.y(), 0.0, 1e-15);
}

TEST(Projection, PointInCameraPlaneIsSingular) {
  CameraPose c;
  try {
    project(c, Vector3(1, 2, 0));
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kProjectionSingular);
  }
}

TEST(Projection, JacobiansMatchCentralDifferences) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double h = 1e-6;
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    CameraPose c;
    c.rotation = Vector3(u(rng), u(rng), u(rng));
    c.translation = Vector3(u(rng), u(rng), -5.0 + u(rng));
    c.focal = 300.0 + 200.0 * u(rng);
    c.k1 = 0.1 * u(rng);
    c.k2 = 0.01 * u(rng);
    const Vector3 X(u(rng), u(rng), u(rng));
    if (std::abs((angle_axis_rotate(c.rotation, X) + c.translation).z()) < 1.0) continue;
    const ProjectionJacobian pj = project_with_jacobian(c, X);
    Eigen::Matrix<double, 2, 9> fd;
    for (int k = 0; k < 9; ++k) {
      CameraPose cp = c, cm = c;
      Vector3 Xp = X, Xm = X;
      if (k < 3) {
        cp.rotation[k] += h;
        cm.rotation[k] -= h;
      } else if (k < 6) {
        cp.translation[k - 3] += h;
        cm.translation[k - 3] -= h;
      } else {
        Xp[k - 6] += h;
        Xm[k - 6] -= h;
      }
      fd.col(k) = (project(cp, Xp) - project(cm, Xm)) / (2 * h);
    }
    Eigen::Matrix<double, 2, 9> an;
    an << pj.d_pose, pj.d_point;
    worst = std::max(worst, (an - fd).norm() / std::max(1.0, fd.norm()));
    EXPECT_LT((pj.value - project(c, X)).norm(), 1e-12);
  }
  EXPECT_LE(worst, 1e-5);
}

TEST(RobustCost, ZeroResidualsGiveZero) {
  SyntheticBASpec spec = small_spec(3);
  spec.noise_px = 0.0;
  spec.outlier_fraction = 0.0;
  const SyntheticBA inst = synth_ba(spec);
  const BAModel model(inst.problem);
  EXPECT_NEAR(robust_cost(model, inst.truth), 0.0, 1e-18);
}

TEST(RobustCost, MatchesGridMinimumOfTheLift) {
  const SyntheticBA inst = synth_ba(small_spec(4));
  const BAModel model(inst.problem);
  const ParamVector theta = pack_parameters(inst.problem);
  const Vector norms = model.residual_norms(theta);
  const RobustKernel& k = model.kernel();
  double grid_total = 0.0;
  for (Index i = 0; i < norms.size(); ++i) {
    double best = k.lifted(norms[i], 0.0);
    for (int s = 1; s <= 10000; ++s) best = std::min(best, k.lifted(norms[i], s * 1e-4));
    grid_total += best;
  }
  EXPECT_NEAR(robust_cost(model, theta), grid_total, 1e-6 * static_cast<double>(norms.size()));
}

TEST(RobustCost, SingleFarObservationSitsOnThePlateau) {
  const double tau = 3.0;
  std::vector<oracle::LinearModel::Row> rows{
      {Matrix::Identity(1, 1), Matrix(), -1, Vector::Constant(1, -5 * tau)}};
  const oracle::LinearModel model(1, 0, 0, rows, RobustKernel::smooth_truncated_quadratic(tau));
  EXPECT_DOUBLE_EQ(robust_cost(model, ParamVector::Zero(1)), tau * tau / 4);
}

TEST(LiftedCost, TouchesAtOptimalWeights) {
  const SyntheticBA inst = synth_ba(small_spec(5));
  const BAModel model(inst.problem);
  const ParamVector theta = pack_parameters(inst.problem);
  const Vector w = scaled_weights(model, theta);
  EXPECT_NEAR(lifted_cost(model, theta, w), robust_cost(model, theta), 1e-10);
}

TEST(LiftedCost, UnitWeightsGiveLeastSquares) {
  const SyntheticBA inst = synth_ba(small_spec(6));
  const BAModel model(inst.problem);
  const ParamVector theta = pack_parameters(inst.problem);
  const Vector norms = model.residual_norms(theta);
  EXPECT_NEAR(lifted_cost(model, theta, Vector::Ones(norms.size())),
              0.5 * norms.squaredNorm(), 1e-9 * norms.squaredNorm());
}

TEST(LiftedCost, MajorizesForRandomWeights) {
  const SyntheticBA inst = synth_ba(small_spec(7));
  const BAModel model(inst.problem);
  const ParamVector theta = pack_parameters(inst.problem);
  const double j = robust_cost(model, theta);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.5);
  for (int trial = 0; trial < 1000; ++trial) {
    Vector w(model.observation_count());
    for (Index i = 0; i < w.size(); ++i) w[i] = u(rng);
    ASSERT_GE(lifted_cost(model, theta, w), j);
  }
}

TEST(LiftedCost, NegativeWeightsRejected) {
  const SyntheticBA inst = synth_ba(small_spec(7));
  const BAModel model(inst.problem);
  Vector w = Vector::Ones(model.observation_count());
  w[0] = -1.0;
  EXPECT_THROW(lifted_cost(model, pack_parameters(inst.problem), w), Error);
}

TEST(WeightedNlls, LinearModelMatchesClosedForm) {
  std::mt19937_64 rng(21);
  for (Index points : {0, 4}) {
    const auto model =
        oracle::LinearModel::random(rng, 3, 2, points, 4, 2, RobustKernel::quadratic());
    Vector w(model.observation_count());
    std::uniform_real_distribution<double> u(0.2, 2.0);
    for (Index i = 0; i < w.size(); ++i) w[i] = u(rng);
    LMState state;
    state.max_iterations = 50;
    state.min_relative_decrease = 0.0;
    const ParamVector theta =
        solve_weighted_nlls(model, ParamVector::Zero(model.parameter_count()), w, state);
    const Vector expected = model.weighted_least_squares(w);
    EXPECT_LE((theta - expected).norm(), 1e-8 * std::max(1.0, expected.norm()));
  }
}

TEST(WeightedNlls, ZeroWeightsLeaveThetaUnchanged) {
  const SyntheticBA inst = synth_ba(small_spec(9));
  const BAModel model(inst.problem);
  const ParamVector theta = pack_parameters(inst.problem);
  LMState state;
  LMReport rep;
  const ParamVector out =
      solve_weighted_nlls(model, theta, Vector::Zero(model.observation_count()), state, &rep);
  EXPECT_EQ(out, theta);
  EXPECT_EQ(rep.final_cost, 0.0);
}

TEST(WeightedNlls, CostNeverIncreases) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const SyntheticBA inst = synth_ba(small_spec(100 + trial));
    const BAModel model(inst.problem);
    const ParamVector theta = pack_parameters(inst.problem);
    Vector w(model.observation_count());
    for (Index i = 0; i < w.size(); ++i) w[i] = u(rng);
    LMState state;
    state.max_iterations = 3;
    const ParamVector out = solve_weighted_nlls(model, theta, w, state);
    ASSERT_LE(lifted_cost(model, out, w), lifted_cost(model, theta, w));
  }
}

oracle::LinearModel toy_model(const std::vector<double>& targets, const RobustKernel& kernel) {
  std::vector<oracle::LinearModel::Row> rows;
  for (double m : targets) rows.push_back({Matrix::Ones(1, 1), Matrix(), -1, Vector::Constant(1, m)});
  return oracle::LinearModel(1, 0, 0, std::move(rows), kernel);
}

TEST(Irls, OneDimensionalRoundsMatchAlternatingBaseline) {
  const RobustKernel kernel = RobustKernel::smooth_truncated_quadratic(1.0);
  const std::vector<double> targets = make_toy_targets(60, 0.2, 0.3, 3.0, 3);
  const ToyHQProblem toy(targets, kernel);
  AlternatingConfig cfg;
  cfg.rounds = 15;
  const ParamVector theta0 = ParamVector::Constant(1, 0.8);
  const RunTrace baseline = run_alternating_baseline(toy, theta0, cfg);

  const auto model = toy_model(targets, kernel);
  LMState state;
  state.max_iterations = 100;
  state.min_relative_decrease = 0.0;
  ParamVector theta = theta0;
  for (int t = 0; t < cfg.rounds; ++t) {
    theta = irls_round(model, theta, state).theta;
    EXPECT_NEAR(robust_cost(model, theta), baseline.records[t].objective_after, 1e-9) << t;
  }
  EXPECT_NEAR(theta[0], baseline.theta[0], 1e-8);
}

TEST(Irls, StationaryThetaIsKept) {
  const RobustKernel kernel = RobustKernel::smooth_truncated_quadratic(1.0);
  const auto model = toy_model({-0.3, 0.1, 0.2, 4.0}, kernel);
  LMState state;
  state.max_iterations = 100;
  ParamVector theta = ParamVector::Zero(1);
  for (int t = 0; t < 50; ++t) theta = irls_round(model, theta, state).theta;
  const ParamVector again = irls_round(model, theta, state).theta;
  EXPECT_NEAR(again[0], theta[0], 1e-10);
}

TEST(Irls, DescendsOnSyntheticBundleAdjustment) {
  SyntheticBASpec spec;
  spec.cameras = 4;
  spec.points = 60;
  const SyntheticBA inst = synth_ba(spec);
  const BAModel model(inst.problem);
  LMState state;
  ParamVector theta = pack_parameters(inst.problem);
  double j = robust_cost(model, theta);
  for (int t = 0; t < 50; ++t) {
    theta = irls_round(model, theta, state).theta;
    const double next = robust_cost(model, theta);
    ASSERT_LE(next, j) << "round " << t;
    j = next;
  }
}

TEST(JointHq, LiftedCostNeverIncreases) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const SyntheticBA inst = synth_ba(small_spec(300 + trial));
    const BAModel model(inst.problem);
    const ParamVector theta = pack_parameters(inst.problem);
    Vector w(model.observation_count());
    for (Index i = 0; i < w.size(); ++i) w[i] = u(rng);
    LMState state;
    const RoundResult r = joint_hq_round(model, theta, w, state);
    ASSERT_NEAR(r.upper, lifted_cost(model, theta, w), 1e-12 * std::max(1.0, r.upper));
    ASSERT_LE(lifted_cost(model, r.theta, r.weights), r.upper);
  }
}

TEST(JointHq, ConvergedPointIsFixed) {
  const RobustKernel kernel = RobustKernel::smooth_truncated_quadratic(1.0);
  const auto model = toy_model({-0.3, 0.1, 0.2, 0.25, 4.0}, kernel);
  LMState state;
  ParamVector theta = ParamVector::Zero(1);
  Vector w = Vector::Ones(model.observation_count());
  for (int t = 0; t < 300; ++t) {
    const RoundResult r = joint_hq_round(model, theta, w, state);
    theta = r.theta;
    w = r.weights;
  }
  EXPECT_LT((w - scaled_weights(model, theta)).norm(), 1e-6);
  const RoundResult again = joint_hq_round(model, theta, w, state);
  EXPECT_NEAR(again.theta[0], theta[0], 1e-8);
  EXPECT_LT((again.weights - w).norm(), 1e-8);
}

TEST(JointHq, QuadraticKernelUnsupported) {
  const auto model = toy_model({0.0, 1.0}, RobustKernel::quadratic());
  LMState state;
  EXPECT_THROW(joint_hq_round(model, ParamVector::Zero(1), Vector::Ones(2), state), Error);
}

TEST(Graduated, UnitScaleIsIrls) {
  const SyntheticBA inst = synth_ba(small_spec(13));
  const BAModel model(inst.problem);
  const ParamVector theta = pack_parameters(inst.problem);
  LMState a, b;
  const RoundResult g = graduated_round(model, theta, 1.0, a);
  const RoundResult i = irls_round(model, theta, b);
  EXPECT_EQ(g.theta, i.theta);
  EXPECT_EQ(g.weights, i.weights);
}

TEST(Graduated, LargeScaleGivesUnitWeights) {
  const SyntheticBA inst = synth_ba(small_spec(14));
  const BAModel model(inst.problem);
  const Vector w = scaled_weights(model, pack_parameters(inst.problem), 1e9);
  EXPECT_LT((w - Vector::Ones(w.size())).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Graduated, ScheduleHalvesEveryLevel) {
  const GraduatedSchedule s;
  EXPECT_EQ(s.sigma(1), 8.0);
  EXPECT_EQ(s.sigma(10), 8.0);
  EXPECT_EQ(s.sigma(11), 4.0);
  EXPECT_EQ(s.sigma(31), 1.0);
  EXPECT_EQ(s.sigma(100), 1.0);
  LMState st;
  const SyntheticBA inst = synth_ba(small_spec(1));
  const BAModel model(inst.problem);
  EXPECT_THROW(graduated_round(model, pack_parameters(inst.problem), 0.5, st), Error);
}

TEST(SigmaSelection, UnitScaleTouches) {
  const SyntheticBA inst = synth_ba(small_spec(15));
  const BAModel model(inst.problem);
  const ParamVector theta = pack_parameters(inst.problem);
  const double j = robust_cost(model, theta);
  // With the previous upper equal to J the window collapses onto J itself.
  const SigmaSelection sel = select_sigma_regemm(model, theta, j, 0.5, 0.75);
  EXPECT_EQ(sel.sigma, 1.0);
  EXPECT_NEAR(sel.upper, j, 1e-9 * j);
}

TEST(SigmaSelection, WindowIsNonEmptyBelowThePreviousUpper) {
  std::mt19937_64 rng(16);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const double j = u(rng);
    const double prev = j + u(rng);
    EXPECT_LE(0.75 * j + 0.25 * prev, 0.5 * j + 0.5 * prev);
  }
}

TEST(SigmaSelection, LandsInTheWindow) {
  const SyntheticBA inst = synth_ba(small_spec(17));
  const BAModel model(inst.problem);
  const ParamVector theta = pack_parameters(inst.problem);
  const double j = robust_cost(model, theta);
  const double prev = lifted_cost(model, theta, Vector::Ones(model.observation_count()));
  ASSERT_GT(prev, j);
  const SigmaSelection sel = select_sigma_regemm(model, theta, prev, 0.5, 0.75);
  EXPECT_TRUE(sel.window_met);
  EXPECT_GE(sel.upper, sel.window_low);
  EXPECT_LE(sel.upper, sel.window_high);
  EXPECT_GE(sel.sigma, 1.0);
  EXPECT_NEAR(sel.upper, lifted_cost(model, theta, sel.weights), 1e-9 * sel.upper);
}

TEST(SigmaSelection, EmptyWindowIsAnInvariantViolation) {
  const SyntheticBA inst = synth_ba(small_spec(18));
  const BAModel model(inst.problem);
  const ParamVector theta = pack_parameters(inst.problem);
  const double j = robust_cost(model, theta);
  try {
    select_sigma_regemm(model, theta, 0.5 * j, 0.5, 0.75);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvariantViolation);
  }
  EXPECT_THROW(select_sigma_regemm(model, theta, j, 0.75, 0.5), Error);
}

TEST(ReGeMMStrategy, EveryRoundSatisfiesBothWindowInequalities) {
  SyntheticBASpec spec;
  spec.cameras = 5;
  spec.points = 80;
  const SyntheticBA inst = synth_ba(spec);
  const BAModel model(inst.problem);
  RobustFitConfig cfg;
  cfg.rounds = 60;
  const RunTrace trace =
      run_robust_strategy(model, pack_parameters(inst.problem), RobustStrategy::kReGeMM, cfg);
  ASSERT_EQ(trace.records.size(), 60u);
  double prev = trace.initial_upper;
  double sum_c = 0.0;
  for (const auto& r : trace.records) {
    const double slack = 1e-12 * std::max(1.0, prev);
    ASSERT_GE(r.c_t, -slack);
    ASSERT_LE(r.upper, cfg.eta * r.lower + (1 - cfg.eta) * prev + slack) << r.t;
    if (!(r.flags & kFlagCriterionUnreachable)) {
      ASSERT_GE(r.upper, cfg.eta_prime * r.lower + (1 - cfg.eta_prime) * prev - slack) << r.t;
    }
    ASSERT_LE(r.objective_after, r.upper + slack);
    sum_c += r.c_t;
    prev = r.upper;
  }
  EXPECT_LE(sum_c, (trace.initial_upper - prev) / cfg.eta + 1e-9 * trace.initial_upper);
}

TEST(RobustStrategy, ParseAndName) {
  for (auto s : {RobustStrategy::kIrls, RobustStrategy::kJointHq, RobustStrategy::kGraduated,
                 RobustStrategy::kReGeMM}) {
    EXPECT_EQ(parse_robust_strategy(to_string(s)), s);
  }
  EXPECT_THROW(parse_robust_strategy("lbfgs"), Error);
}

TEST(RobustStrategy, AllStrategiesProduceEqualLengthTraces) {
  const SyntheticBA inst = synth_ba(small_spec(19));
  const BAModel model(inst.problem);
  RobustFitConfig cfg;
  cfg.rounds = 12;
  const double j0 = robust_cost(model, pack_parameters(inst.problem));
  for (auto s : {RobustStrategy::kIrls, RobustStrategy::kJointHq, RobustStrategy::kGraduated,
                 RobustStrategy::kReGeMM}) {
    const RunTrace t = run_robust_strategy(model, pack_parameters(inst.problem), s, cfg);
    EXPECT_EQ(t.records.size(), 12u);
    EXPECT_LE(t.records.back().objective_after, j0) << to_string(s);
  }
}

TEST(BABenchmark, WritesOneTracePerRunAndASummary) {
  std::vector<BenchmarkInstance> instances;
  for (int k = 0; k < 20; ++k) {
    SyntheticBASpec spec = small_spec(500 + k);
    spec.points = 10;
    instances.push_back({"inst" + std::to_string(k), synth_ba(spec).problem, {}});
  }
  const auto dir = std::filesystem::temp_directory_path() / "gapmm_ba_benchmark_test";
  std::filesystem::remove_all(dir);
  RobustFitConfig cfg;
  cfg.rounds = 3;
  const auto rows =
      run_ba_benchmark(instances,
                       {RobustStrategy::kIrls, RobustStrategy::kJointHq,
                        RobustStrategy::kGraduated, RobustStrategy::kReGeMM},
                       cfg, dir.string());
  EXPECT_EQ(rows.size(), 80u);
  int csv = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    csv += entry.path().extension() == ".csv" ? 1 : 0;
  }
  EXPECT_EQ(csv, 81);
  std::ifstream summary(dir / "summary.csv");
  std::string header;
  std::getline(summary, header);
  EXPECT_EQ(header, kSummaryCsvHeader);
  int lines = 0;
  for (std::string line; std::getline(summary, line);) ++lines;
  EXPECT_EQ(lines, 80);
  std::filesystem::remove_all(dir);
}

TEST(BABenchmark, FailingRunIsRecordedAndTheRestContinue) {
  SyntheticBASpec spec = small_spec(21);
  BenchmarkInstance bad{"bad", synth_ba(spec).problem, ParamVector::Zero(3)};
  BenchmarkInstance good{"good", synth_ba(spec).problem, {}};
  RobustFitConfig cfg;
  cfg.rounds = 2;
  const auto rows = run_ba_benchmark({bad, good}, {RobustStrategy::kIrls}, cfg);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_FALSE(rows[0].error.empty());
  EXPECT_TRUE(std::isnan(rows[0].final_cost));
  EXPECT_TRUE(rows[1].error.empty());
  EXPECT_EQ(rows[1].rounds, 2);
}

// Outlier-contaminated instances with perturbed starts: the graduated and
// joint strategies escape the poor minimum plain IRLS settles in, and ReGeMM
// runs at IRLS cost.
TEST(BABenchmark, EscapesPoorMinimaAtComparableCost) {
  std::vector<BenchmarkInstance> instances;
  for (int k = 0; k < 20; ++k) {
    SyntheticBASpec spec;
    spec.seed = 1000 + k;
    instances.push_back({"s" + std::to_string(k), synth_ba(spec).problem, {}});
  }
  RobustFitConfig cfg;
  const auto rows =
      run_ba_benchmark(instances,
                       {RobustStrategy::kIrls, RobustStrategy::kJointHq,
                        RobustStrategy::kGraduated, RobustStrategy::kReGeMM},
                       cfg);
  int joint = 0, graduated = 0, regemm = 0;
  double irls_ms = 0.0, regemm_ms = 0.0;
  for (int k = 0; k < 20; ++k) {
    const double irls = rows[4 * k].final_cost;
    joint += rows[4 * k + 1].final_cost <= irls ? 1 : 0;
    graduated += rows[4 * k + 2].final_cost < irls ? 1 : 0;
    regemm += rows[4 * k + 3].final_cost <= irls ? 1 : 0;
    irls_ms += rows[4 * k].wall_ms;
    regemm_ms += rows[4 * k + 3].wall_ms;
  }
  EXPECT_GT(joint, 10);
  EXPECT_GT(graduated, 10);
  EXPECT_GE(regemm, 15);
  EXPECT_GE(regemm_ms, 0.8 * irls_ms);
  EXPECT_LE(regemm_ms, 2.0 * irls_ms);
}

}  // namespace
}  // namespace gapmm
