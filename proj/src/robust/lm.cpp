#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Cholesky>

#include "gapmm/error.hpp"
#include "gapmm/parallel.hpp"
#include "gapmm/robust_fitting.hpp"

namespace gapmm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Linearization {
  Vector r;
  Matrix jc;
  Matrix jp;
};

// One observation's share of the Gauss-Newton system after any
// per-observation variable has been eliminated.
struct Contribution {
  Matrix hcc;
  Matrix hcp;
  Matrix hpp;
  Vector gc;
  Vector gp;
};

std::vector<std::vector<Index>> observations_by_point(const RobustModel& model) {
  std::vector<std::vector<Index>> lists(model.point_block_count());
  for (Index i = 0; i < model.observation_count(); ++i) {
    const Index p = model.block(i).point_block;
    if (p >= 0) lists[p].push_back(i);
  }
  return lists;
}

std::vector<Linearization> linearize_all(const RobustModel& model, const ParamVector& theta) {
  const Index n = model.observation_count();
  const Index dim = model.residual_dim();
  const Index pb = model.point_block_size();
  std::vector<Linearization> lin(n);
  parallel_for(n, [&](Index i) {
    const ObservationBlock b = model.block(i);
    Linearization& l = lin[i];
    l.r.resize(dim);
    l.jc.resize(dim, b.reduced_width);
    l.jp.setZero(dim, b.point_block >= 0 ? pb : 0);
    model.linearize(i, theta, l.r, l.jc, l.jp);
  });
  return lin;
}

// Solution of the damped block system for the full theta update.
// A rejected step whose first-order predicted decrease is below this fraction
// of the cost failed on rounding noise; more damping will not help.
constexpr double kStationaryDecrease = 1e-12;

struct BlockStep {
  Vector delta;
  bool ok = false;
};

BlockStep solve_block_system(const RobustModel& model,
                             const std::vector<std::vector<Index>>& by_point,
                             const std::vector<Contribution>& contrib, double lambda) {
  const Index nr = model.reduced_count();
  const Index pb = model.point_block_size();
  const Index np = model.point_block_count();

  Matrix hcc = Matrix::Zero(nr, nr);
  Vector gc = Vector::Zero(nr);
  std::vector<Matrix> hpp(np, Matrix::Zero(pb, pb));
  std::vector<Vector> gp(np, Vector::Zero(pb));
  for (std::size_t i = 0; i < contrib.size(); ++i) {
    const ObservationBlock b = model.block(static_cast<Index>(i));
    const Contribution& c = contrib[i];
    hcc.block(b.reduced_offset, b.reduced_offset, b.reduced_width, b.reduced_width) += c.hcc;
    gc.segment(b.reduced_offset, b.reduced_width) += c.gc;
    if (b.point_block >= 0) {
      hpp[b.point_block] += c.hpp;
      gp[b.point_block] += c.gp;
    }
  }
  for (Index k = 0; k < nr; ++k) hcc(k, k) += lambda * std::max(hcc(k, k), 1e-6);

  std::vector<Matrix> hpp_inv(np);
  Matrix S = hcc;
  Vector rhs = -gc;
  for (Index p = 0; p < np; ++p) {
    Matrix h = hpp[p];
    for (Index k = 0; k < pb; ++k) h(k, k) += lambda * std::max(h(k, k), 1e-6);
    Eigen::LDLT<Matrix> ldlt(h);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return {};
    hpp_inv[p] = ldlt.solve(Matrix::Identity(pb, pb));
    const auto& obs = by_point[p];
    for (Index i : obs) {
      const ObservationBlock bi = model.block(i);
      const Matrix t = contrib[i].hcp * hpp_inv[p];
      rhs.segment(bi.reduced_offset, bi.reduced_width) += t * gp[p];
      for (Index j : obs) {
        const ObservationBlock bj = model.block(j);
        S.block(bi.reduced_offset, bj.reduced_offset, bi.reduced_width, bj.reduced_width) -=
            t * contrib[j].hcp.transpose();
      }
    }
  }

  BlockStep step;
  step.delta = Vector::Zero(model.parameter_count());
  if (nr > 0) {
    Eigen::LDLT<Matrix> ldlt(S);
    if (ldlt.info() != Eigen::Success) return {};
    step.delta.head(nr) = ldlt.solve(rhs);
  }
  for (Index p = 0; p < np; ++p) {
    Vector b = -gp[p];
    for (Index i : by_point[p]) {
      const ObservationBlock bi = model.block(i);
      b -= contrib[i].hcp.transpose() * step.delta.segment(bi.reduced_offset, bi.reduced_width);
    }
    step.delta.segment(model.point_offset(p), pb) = hpp_inv[p] * b;
  }
  step.ok = step.delta.allFinite();
  return step;
}

// Residuals at a trial point; a singular projection rejects the trial.
bool try_residual_norms(const RobustModel& model, const ParamVector& theta, Vector& norms) {
  try {
    norms = model.residual_norms(theta);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kProjectionSingular) return false;
    throw;
  }
  return norms.allFinite();
}

double weighted_sum(const Vector& norms, const Vector& weights) {
  double total = 0.0;
  for (Index i = 0; i < norms.size(); ++i) total += 0.5 * weights[i] * norms[i] * norms[i];
  return total;
}

double joint_sum(const RobustKernel& kernel, const Vector& norms, const Vector& v) {
  double total = 0.0;
  for (Index i = 0; i < norms.size(); ++i) {
    const double w = v[i] * v[i];
    total += 0.5 * w * norms[i] * norms[i] + kernel.kappa(w);
  }
  return total;
}

void check_weights(const RobustModel& model, const Vector& weights) {
  if (weights.size() != model.observation_count()) {
    fail(ErrorCode::kDimensionMismatch, "weight vector length differs from observation count");
  }
  if ((weights.array() < 0.0).any()) {
    fail(ErrorCode::kInvalidArgument, "weights must be non-negative");
  }
}

void check_theta(const RobustModel& model, const ParamVector& theta) {
  if (theta.size() != model.parameter_count()) {
    fail(ErrorCode::kDimensionMismatch, "theta does not match the model's parameter count");
  }
}

void clamp_damping(LMState& s) { s.damping = std::clamp(s.damping, s.min_damping, s.max_damping); }

}  // namespace

double robust_cost(const RobustModel& model, const ParamVector& theta) {
  check_theta(model, theta);
  const Vector norms = model.residual_norms(theta);
  double total = 0.0;
  for (Index i = 0; i < norms.size(); ++i) total += model.kernel().psi(norms[i]);
  return total;
}

double lifted_cost(const RobustModel& model, const ParamVector& theta, const Vector& weights) {
  check_theta(model, theta);
  check_weights(model, weights);
  const Vector norms = model.residual_norms(theta);
  double total = 0.0;
  for (Index i = 0; i < norms.size(); ++i) total += model.kernel().lifted(norms[i], weights[i]);
  return total;
}

Vector scaled_weights(const RobustModel& model, const ParamVector& theta, double sigma) {
  check_theta(model, theta);
  require(sigma > 0.0, ErrorCode::kInvalidArgument, "sigma must be positive");
  Vector w = model.residual_norms(theta);
  for (Index i = 0; i < w.size(); ++i) w[i] = model.kernel().weight(w[i] / sigma);
  return w;
}

Vector weighted_gradient(const RobustModel& model, const ParamVector& theta,
                         const Vector& weights) {
  check_theta(model, theta);
  check_weights(model, weights);
  const auto lin = linearize_all(model, theta);
  Vector g = Vector::Zero(model.parameter_count());
  for (Index i = 0; i < model.observation_count(); ++i) {
    const ObservationBlock b = model.block(i);
    g.segment(b.reduced_offset, b.reduced_width) += weights[i] * lin[i].jc.transpose() * lin[i].r;
    if (b.point_block >= 0) {
      g.segment(model.point_offset(b.point_block), model.point_block_size()) +=
          weights[i] * lin[i].jp.transpose() * lin[i].r;
    }
  }
  return g;
}

ParamVector solve_weighted_nlls(const RobustModel& model, const ParamVector& theta,
                                const Vector& weights, LMState& state, LMReport* report) {
  check_theta(model, theta);
  check_weights(model, weights);
  require(state.damping > 0.0, ErrorCode::kInvalidArgument, "LM damping must be positive");
  const auto by_point = observations_by_point(model);
  const Index n = model.observation_count();

  LMReport rep;
  ParamVector current = theta;
  Vector norms = model.residual_norms(current);
  double cost = weighted_sum(norms, weights);
  rep.initial_cost = cost;
  rep.evaluations = 1;

  for (int it = 0; it < state.max_iterations; ++it) {
    const auto lin = linearize_all(model, current);
    std::vector<Contribution> contrib(n);
    Vector grad = Vector::Zero(model.parameter_count());
    for (Index i = 0; i < n; ++i) {
      const double w = weights[i];
      const ObservationBlock b = model.block(i);
      Contribution& c = contrib[i];
      c.hcc = w * lin[i].jc.transpose() * lin[i].jc;
      c.gc = w * lin[i].jc.transpose() * lin[i].r;
      grad.segment(b.reduced_offset, b.reduced_width) += c.gc;
      if (b.point_block >= 0) {
        c.hcp = w * lin[i].jc.transpose() * lin[i].jp;
        c.hpp = w * lin[i].jp.transpose() * lin[i].jp;
        c.gp = w * lin[i].jp.transpose() * lin[i].r;
        grad.segment(model.point_offset(b.point_block), model.point_block_size()) += c.gp;
      }
    }
    if (it == 0) rep.initial_gradient_norm = grad.norm();
    if (grad.squaredNorm() == 0.0) break;

    bool accepted = false;
    bool stationary = false;
    double relative = 0.0;
    const double damping0 = state.damping;
    for (int retry = 0; retry < state.max_retries; ++retry) {
      const BlockStep step = solve_block_system(model, by_point, contrib, state.damping);
      if (step.ok) {
        const double predicted = -grad.dot(step.delta);
        const ParamVector trial = current + step.delta;
        Vector trial_norms;
        ++rep.evaluations;
        if (try_residual_norms(model, trial, trial_norms)) {
          const double trial_cost = weighted_sum(trial_norms, weights);
          if (trial_cost < cost) {
            relative = (cost - trial_cost) / std::max(cost, 1e-300);
            current = trial;
            cost = trial_cost;
            state.damping *= state.shrink;
            clamp_damping(state);
            accepted = true;
            break;
          }
        }
        if (predicted <= kStationaryDecrease * cost) {
          stationary = true;
          break;
        }
      }
      state.damping *= state.grow;
      clamp_damping(state);
    }
    ++rep.iterations;
    if (!accepted) {
      state.damping = damping0;
      rep.stationary = stationary;
      rep.no_progress = !stationary;
      break;
    }
    if (relative < state.min_relative_decrease) break;
  }
  rep.final_cost = cost;
  if (report) *report = rep;
  return current;
}

JointHQResult solve_joint_hq(const RobustModel& model, const ParamVector& theta,
                             const Vector& weights, LMState& state) {
  check_theta(model, theta);
  check_weights(model, weights);
  const RobustKernel& kernel = model.kernel();
  if (kernel.kind() == KernelKind::kQuadratic) {
    fail(ErrorCode::kUnsupported, "joint HQ needs a kernel with a non-trivial lift");
  }
  const auto by_point = observations_by_point(model);
  const Index n = model.observation_count();
  const Index pb = model.point_block_size();

  JointHQResult out;
  LMReport& rep = out.report;
  ParamVector current = theta;
  Vector v = weights.cwiseSqrt();
  Vector norms = model.residual_norms(current);
  double cost = joint_sum(kernel, norms, v);
  rep.initial_cost = cost;
  rep.evaluations = 1;

  for (int it = 0; it < state.max_iterations; ++it) {
    const auto lin = linearize_all(model, current);
    // Per observation: theta-part of J^T J and J^T r, the theta-v coupling,
    // and the v-v entry.
    std::vector<Contribution> base(n);
    std::vector<Vector> coupling_c(n), coupling_p(n);
    Vector hvv(n), gv(n);
    Vector grad = Vector::Zero(model.parameter_count());
    for (Index i = 0; i < n; ++i) {
      const ObservationBlock b = model.block(i);
      const double vi = v[i];
      const double w = vi * vi;
      const Linearization& l = lin[i];
      const double rr = l.r.squaredNorm();
      const double s = kernel.kappa_root(w);
      const double a = 2.0 * vi * kernel.kappa_root_derivative(w);
      Contribution& c = base[i];
      c.hcc = w * l.jc.transpose() * l.jc;
      c.gc = w * l.jc.transpose() * l.r;
      coupling_c[i] = vi * l.jc.transpose() * l.r;
      grad.segment(b.reduced_offset, b.reduced_width) += c.gc;
      if (b.point_block >= 0) {
        c.hcp = w * l.jc.transpose() * l.jp;
        c.hpp = w * l.jp.transpose() * l.jp;
        c.gp = w * l.jp.transpose() * l.r;
        coupling_p[i] = vi * l.jp.transpose() * l.r;
        grad.segment(model.point_offset(b.point_block), pb) += c.gp;
      }
      hvv[i] = rr + a * a;
      gv[i] = vi * rr + a * s;
    }
    if (it == 0) rep.initial_gradient_norm = grad.norm();
    if (grad.squaredNorm() == 0.0 && gv.squaredNorm() == 0.0) break;

    bool accepted = false;
    bool stationary = false;
    double relative = 0.0;
    const double damping0 = state.damping;
    for (int retry = 0; retry < state.max_retries; ++retry) {
      const double lambda = state.damping;
      std::vector<Contribution> contrib(n);
      Vector hvv_d(n);
      for (Index i = 0; i < n; ++i) {
        hvv_d[i] = hvv[i] + lambda * std::max(hvv[i], 1e-6);
        const double inv = 1.0 / hvv_d[i];
        Contribution c = base[i];
        c.hcc -= inv * coupling_c[i] * coupling_c[i].transpose();
        c.gc -= inv * gv[i] * coupling_c[i];
        if (model.block(i).point_block >= 0) {
          c.hcp -= inv * coupling_c[i] * coupling_p[i].transpose();
          c.hpp -= inv * coupling_p[i] * coupling_p[i].transpose();
          c.gp -= inv * gv[i] * coupling_p[i];
        }
        contrib[i] = std::move(c);
      }
      const BlockStep step = solve_block_system(model, by_point, contrib, lambda);
      if (step.ok) {
        Vector dv(n);
        for (Index i = 0; i < n; ++i) {
          const ObservationBlock b = model.block(i);
          double coupled = coupling_c[i].dot(step.delta.segment(b.reduced_offset, b.reduced_width));
          if (b.point_block >= 0) {
            coupled += coupling_p[i].dot(step.delta.segment(model.point_offset(b.point_block), pb));
          }
          dv[i] = -(gv[i] + coupled) / hvv_d[i];
        }
        const double predicted = -(grad.dot(step.delta) + gv.dot(dv));
        const ParamVector trial = current + step.delta;
        const Vector trial_v = v + dv;
        Vector trial_norms;
        ++rep.evaluations;
        if (trial_v.allFinite() && try_residual_norms(model, trial, trial_norms)) {
          const double trial_cost = joint_sum(kernel, trial_norms, trial_v);
          if (trial_cost < cost) {
            relative = (cost - trial_cost) / std::max(cost, 1e-300);
            current = trial;
            v = trial_v;
            cost = trial_cost;
            state.damping *= state.shrink;
            clamp_damping(state);
            accepted = true;
            break;
          }
        }
        if (predicted <= kStationaryDecrease * cost) {
          stationary = true;
          break;
        }
      }
      state.damping *= state.grow;
      clamp_damping(state);
    }
    ++rep.iterations;
    if (!accepted) {
      state.damping = damping0;
      rep.stationary = stationary;
      rep.no_progress = !stationary;
      break;
    }
    if (relative < state.min_relative_decrease) break;
  }
  rep.final_cost = cost;
  out.theta = current;
  out.weights = v.cwiseProduct(v);
  return out;
}

}  // namespace gapmm
