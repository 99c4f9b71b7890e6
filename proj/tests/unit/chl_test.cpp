#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include <gtest/gtest.h>

#include "gapmm/chl.hpp"
#include "gapmm/error.hpp"

namespace gapmm {
namespace {

// Once a sweep has converged, re-evaluating the energy may move by a few ulps.
constexpr double kRounding = 1e-14;

struct Rng {
  std::mt19937_64 gen;
  explicit Rng(std::uint64_t seed) : gen(seed) {}
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(gen); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(gen);
  }
  Vector vec(Index n) {
    Vector v(n);
    for (Index i = 0; i < n; ++i) v[i] = normal();
    return v;
  }
  Vector nonneg(Index n) { return vec(n).cwiseAbs(); }
};

PrimalState random_primal(const LayeredNet& net, Rng& rng) {
  PrimalState z = zero_primal(net);
  for (auto& v : z.z) v = rng.nonneg(v.size());
  return z;
}

DualState random_dual(const LayeredNet& net, Rng& rng, bool clamped) {
  DualState d = zero_dual(net);
  for (auto& v : d.s) v = rng.nonneg(v.size());
  if (clamped) d.top = rng.vec(d.top.size());
  return d;
}

// Term-by-term energy with explicit loops.
double energy_oracle(const LayeredNet& net, const Vector& x, const Vector* y,
                     const PrimalState& z) {
  const int L = net.layers();
  double e = 0.0;
  std::vector<double> prev(x.data(), x.data() + x.size());
  for (int k = 0; k < L; ++k) {
    const bool last = k == L - 1;
    if (last && y == nullptr) break;
    std::vector<double> cur;
    for (Index i = 0; i < net.W[k].rows(); ++i) {
      double pre = net.b[k][i];
      for (Index j = 0; j < net.W[k].cols(); ++j) pre += net.W[k](i, j) * prev[j];
      const double target = last ? (*y)[i] : z.z[k][i];
      e += 0.5 * (target - pre) * (target - pre);
      if (!last) cur.push_back(z.z[k][i]);
    }
    prev = cur;
  }
  return e;
}

// Projected gradient on the convex primal energy, many small steps.
double projected_gradient_min(const LayeredNet& net, const Vector& x, const Vector* y,
                              int steps) {
  PrimalState z = zero_primal(net);
  const int L = net.layers();
  double curvature = 1.0;
  for (int k = 0; k < L; ++k) curvature += net.W[k].squaredNorm();
  const double step = 1.0 / (2.0 * curvature);
  for (int s = 0; s < steps; ++s) {
    std::vector<Vector> g(L - 1);
    const Vector* prev = &x;
    for (int k = 1; k < L; ++k) {
      g[k - 1] = z.z[k - 1] - net.W[k - 1] * *prev - net.b[k - 1];
      prev = &z.z[k - 1];
    }
    for (int k = 1; k < L; ++k) {
      if (k + 1 < L) {
        const Vector e = z.z[k] - net.W[k] * z.z[k - 1] - net.b[k];
        g[k - 1] -= net.W[k].transpose() * e;
      } else if (y != nullptr) {
        const Vector r = net.W[k] * z.z[k - 1] + net.b[k] - *y;
        g[k - 1] += net.W[k].transpose() * r;
      }
    }
    for (int k = 1; k < L; ++k) z.z[k - 1] = (z.z[k - 1] - step * g[k - 1]).cwiseMax(0.0);
  }
  return y != nullptr ? clamped_energy(net, x, *y, z) : free_energy(net, x, z);
}

LayeredNet nonneg_net(const NetLayout& layout, Rng& rng) {
  LayeredNet net = LayeredNet::zeros(layout);
  for (auto& W : net.W)
    for (Index j = 0; j < W.cols(); ++j)
      for (Index i = 0; i < W.rows(); ++i) W(i, j) = rng.uniform(0.0, 1.0);
  for (auto& b : net.b) b = rng.nonneg(b.size());
  return net;
}

TEST(ChlLayout, OffsetsAndParsing) {
  const NetLayout layout = parse_architecture("8-6-6-4");
  EXPECT_EQ(layout.layers(), 3);
  EXPECT_EQ(layout.parameter_count(), 8 * 6 + 6 + 6 * 6 + 6 + 6 * 4 + 4);
  EXPECT_EQ(layout.hidden_total(), 12);
  EXPECT_THROW(parse_architecture("8-x-4"), Error);
  EXPECT_THROW(parse_architecture("8-4"), Error);
  EXPECT_THROW(parse_architecture("8--4"), Error);
  std::mt19937_64 g(1);
  const LayeredNet net = LayeredNet::random(layout, g);
  const LayeredNet back = LayeredNet::unpack(layout, net.pack());
  for (int k = 0; k < 3; ++k) {
    EXPECT_EQ(back.W[k], net.W[k]);
    EXPECT_EQ(back.b[k], net.b[k]);
  }
}

TEST(ChlEnergy, AllZeroIsZero) {
  const LayeredNet net = LayeredNet::zeros(NetLayout({2, 2, 1}));
  const Vector x = Vector::Zero(2), y = Vector::Zero(1);
  EXPECT_EQ(clamped_energy(net, x, y, zero_primal(net)), 0.0);
  EXPECT_EQ(free_energy(net, x, zero_primal(net)), 0.0);
}

TEST(ChlEnergy, NoiselessForwardPassHasZeroEnergy) {
  Rng rng(2);
  const LayeredNet net = nonneg_net(NetLayout({2, 2, 1}), rng);
  const Vector x = rng.nonneg(2);
  const PrimalState z = ff_init(net, x);
  const Vector y = network_output(net, z);
  EXPECT_NEAR(clamped_energy(net, x, y, z), 0.0, 1e-28);
  EXPECT_NEAR(free_energy(net, x, z), 0.0, 1e-28);
}

TEST(ChlEnergy, MatchesTermByTermOracle) {
  Rng rng(3);
  const NetLayout layout({2, 2, 1});
  for (int trial = 0; trial < 100; ++trial) {
    const LayeredNet net = LayeredNet::random(layout, rng.gen, 1.5, 0.5);
    const Vector x = rng.vec(2), y = rng.vec(1);
    const PrimalState z = random_primal(net, rng);
    EXPECT_NEAR(clamped_energy(net, x, y, z), energy_oracle(net, x, &y, z), 1e-12);
    EXPECT_NEAR(free_energy(net, x, z), energy_oracle(net, x, nullptr, z), 1e-12);
  }
}

TEST(ChlEnergy, InfeasibleAndMisshapedStatesRejected) {
  const LayeredNet net = LayeredNet::zeros(NetLayout({2, 2, 1}));
  PrimalState z = zero_primal(net);
  z.z[0][1] = -1.0;
  EXPECT_THROW(free_energy(net, Vector::Zero(2), z), Error);
  EXPECT_THROW(free_energy(net, Vector::Zero(3), zero_primal(net)), Error);
  DualState d = zero_dual(net);
  d.top[0] = 1.0;
  EXPECT_THROW(free_dual(net, Vector::Zero(2), d), Error);
  d = zero_dual(net);
  d.s[0][0] = -0.5;
  EXPECT_THROW(clamped_dual(net, Vector::Zero(2), Vector::Zero(1), d), Error);
}

TEST(ChlDual, ZeroDualsGiveZero) {
  Rng rng(4);
  const LayeredNet net = LayeredNet::random(NetLayout({2, 2, 1}), rng.gen);
  const Vector x = rng.vec(2), y = rng.vec(1);
  EXPECT_EQ(clamped_dual(net, x, y, zero_dual(net)), 0.0);
  EXPECT_EQ(free_dual(net, x, zero_dual(net)), 0.0);
}

TEST(ChlDual, WeakDualityOnRandomPairs) {
  Rng rng(5);
  const NetLayout layout({2, 2, 1});
  int violations = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const LayeredNet net = LayeredNet::random(layout, rng.gen, 1.5, 0.5);
    const Vector x = rng.vec(2), y = rng.vec(1);
    const PrimalState z = random_primal(net, rng);
    if (clamped_dual(net, x, y, random_dual(net, rng, true)) > clamped_energy(net, x, y, z)) {
      ++violations;
    }
    if (free_dual(net, x, random_dual(net, rng, false)) > free_energy(net, x, z)) ++violations;
  }
  EXPECT_EQ(violations, 0);
}

TEST(ChlDual, LossConjugateClosedForm) {
  Rng rng(6);
  for (int trial = 0; trial < 1000; ++trial) {
    const Vector v = rng.vec(3), y = rng.vec(3);
    // Stationarity of v.a - |a - y|^2 / 2 gives a = y + v.
    const Vector a = y + v;
    const double value = v.dot(a) - 0.5 * (a - y).squaredNorm();
    EXPECT_NEAR(value, 0.5 * v.squaredNorm() + v.dot(y), 1e-10);
    const Vector other = a + 0.1 * rng.vec(3);
    EXPECT_LE(v.dot(other) - 0.5 * (other - y).squaredNorm(), value);
  }
}

// With the bias term entering the dual with a plus sign, weak duality breaks
// on a one-unit chain; the implemented sign keeps it.
TEST(ChlDual, BiasSignIsForcedByWeakDuality) {
  LayeredNet net = LayeredNet::zeros(NetLayout({1, 1, 1}));
  net.W[0](0, 0) = 1.0;
  net.W[1](0, 0) = 1.0;
  net.b[0][0] = 1.0;
  net.b[1][0] = 0.0;
  const Vector x = Vector::Zero(1), y = Vector::Constant(1, 1.0);
  // Primal minimum: z = 1 reproduces both the pre-activation and the target.
  PrimalState z = zero_primal(net);
  z.z[0][0] = 1.0;
  EXPECT_EQ(clamped_energy(net, x, y, z), 0.0);
  DualState d = zero_dual(net);
  d.s[0][0] = 1.0;
  const std::vector<Vector> lam = reconstruct_lambdas(net, d);
  const double flipped = d.top.dot(y) - 0.5 * d.top.squaredNorm() -
                         0.5 * lam[0].squaredNorm() + lam[0].dot(net.b[0]) +
                         lam[1].dot(net.b[1]);
  EXPECT_GT(flipped, clamped_energy(net, x, y, z));
  EXPECT_LE(clamped_dual(net, x, y, d), clamped_energy(net, x, y, z));
}

TEST(ChlDual, FreeStrongDualityAfterInference) {
  Rng rng(7);
  const LayeredNet net = LayeredNet::random(NetLayout({2, 2, 1}), rng.gen, 1.5, 0.5);
  const Vector x = rng.vec(2);
  PrimalState z = zero_primal(net);
  DualState d = zero_dual(net);
  for (int s = 0; s < 500; ++s) {
    cd_primal_pass(net, x, nullptr, z);
    cd_dual_pass(net, x, nullptr, d);
  }
  EXPECT_LT(free_energy(net, x, z) - free_dual(net, x, d), 1e-6);
  EXPECT_GE(free_energy(net, x, z) - free_dual(net, x, d), -1e-12);
}

TEST(ChlInference, PrimalSweepsAreMonotone) {
  Rng rng(8);
  const NetLayout layout({4, 3, 3, 2});
  for (int trial = 0; trial < 100; ++trial) {
    const LayeredNet net = LayeredNet::random(layout, rng.gen, 1.5, 0.5);
    const Vector x = rng.vec(4), y = rng.vec(2);
    PrimalState zc = random_primal(net, rng), zf = random_primal(net, rng);
    double ec = clamped_energy(net, x, y, zc), ef = free_energy(net, x, zf);
    for (int s = 0; s < 20; ++s) {
      cd_primal_pass(net, x, &y, zc);
      cd_primal_pass(net, x, nullptr, zf);
      const double nc = clamped_energy(net, x, y, zc), nf = free_energy(net, x, zf);
      ASSERT_LE(nc, ec + kRounding * std::max(1.0, ec));
      ASSERT_LE(nf, ef + kRounding * std::max(1.0, ef));
      ec = nc;
      ef = nf;
    }
  }
}

TEST(ChlInference, DualSweepsAreMonotone) {
  Rng rng(9);
  const NetLayout layout({4, 3, 3, 2});
  for (int trial = 0; trial < 100; ++trial) {
    const LayeredNet net = LayeredNet::random(layout, rng.gen, 1.5, 0.5);
    const Vector x = rng.vec(4), y = rng.vec(2);
    DualState dc = random_dual(net, rng, true), df = random_dual(net, rng, false);
    double vc = clamped_dual(net, x, y, dc), vf = free_dual(net, x, df);
    for (int s = 0; s < 20; ++s) {
      cd_dual_pass(net, x, &y, dc);
      cd_dual_pass(net, x, nullptr, df);
      const double nc = clamped_dual(net, x, y, dc), nf = free_dual(net, x, df);
      ASSERT_GE(nc, vc - kRounding * std::max(1.0, std::abs(vc)));
      ASSERT_GE(nf, vf - kRounding * std::max(1.0, std::abs(vf)));
      vc = nc;
      vf = nf;
    }
  }
}

TEST(ChlInference, OptimaAreFixedPoints) {
  Rng rng(10);
  const LayeredNet net = LayeredNet::random(NetLayout({4, 3, 2}), rng.gen, 1.5, 0.5);
  const Vector x = rng.vec(4), y = rng.vec(2);
  PrimalState z = zero_primal(net);
  DualState d = zero_dual(net);
  for (int s = 0; s < 3000; ++s) {
    cd_primal_pass(net, x, &y, z);
    cd_dual_pass(net, x, &y, d);
  }
  PrimalState z2 = z;
  DualState d2 = d;
  cd_primal_pass(net, x, &y, z2);
  cd_dual_pass(net, x, &y, d2);
  for (std::size_t k = 0; k < z.z.size(); ++k) {
    EXPECT_LT((z2.z[k] - z.z[k]).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((d2.s[k] - d.s[k]).cwiseAbs().maxCoeff(), 1e-12);
  }
  EXPECT_LT((d2.top - d.top).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ChlInference, PrimalMatchesProjectedGradientOracle) {
  Rng rng(11);
  const LayeredNet net = LayeredNet::random(NetLayout({4, 3, 2}), rng.gen, 1.5, 0.5);
  const Vector x = rng.vec(4), y = rng.vec(2);
  PrimalState z = zero_primal(net);
  for (int s = 0; s < 500; ++s) cd_primal_pass(net, x, &y, z);
  const double oracle = projected_gradient_min(net, x, &y, 1000000);
  EXPECT_NEAR(clamped_energy(net, x, y, z), oracle, 1e-8);
}

TEST(ChlInference, ClampedGapClosesOnFourThreeTwo) {
  Rng rng(12);
  const LayeredNet net = LayeredNet::random(NetLayout({4, 3, 2}), rng.gen, 1.5, 0.5);
  const Vector x = rng.vec(4), y = rng.vec(2);
  PrimalState z = zero_primal(net);
  DualState d = zero_dual(net);
  for (int s = 0; s < 500; ++s) {
    cd_primal_pass(net, x, &y, z);
    cd_dual_pass(net, x, &y, d);
  }
  EXPECT_LT(clamped_energy(net, x, y, z) - clamped_dual(net, x, y, d), 1e-6);
}

TEST(ChlInference, StrongDualityUpToEightSixFour) {
  Rng rng(13);
  for (const auto& sizes : {std::vector<Index>{4, 3, 2}, std::vector<Index>{6, 5, 3},
                            std::vector<Index>{8, 6, 4}}) {
    const LayeredNet net = LayeredNet::random(NetLayout(sizes), rng.gen, 1.5, 0.5);
    const Vector x = rng.vec(sizes.front()), y = rng.vec(sizes.back());
    PrimalState zc = zero_primal(net), zf = zero_primal(net);
    DualState dc = zero_dual(net), df = zero_dual(net);
    for (int s = 0; s < 1000; ++s) {
      cd_primal_pass(net, x, &y, zc);
      cd_dual_pass(net, x, &y, dc);
      cd_primal_pass(net, x, nullptr, zf);
      cd_dual_pass(net, x, nullptr, df);
    }
    EXPECT_LT(clamped_energy(net, x, y, zc) - clamped_dual(net, x, y, dc), 1e-6);
    EXPECT_LT(free_energy(net, x, zf) - free_dual(net, x, df), 1e-6);
  }
}

TEST(ChlInit, ForwardPassIsFeasibleAndExactForNonnegativePreactivations) {
  Rng rng(14);
  const LayeredNet net = nonneg_net(NetLayout({3, 4, 2}), rng);
  const Vector x = rng.nonneg(3);
  EXPECT_NEAR(free_energy(net, x, ff_init(net, x)), 0.0, 1e-28);
  const LayeredNet any = LayeredNet::random(NetLayout({3, 4, 4, 2}), rng.gen, 2.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Vector xr = rng.vec(3);
    const PrimalState z = ff_init(any, xr);
    for (const auto& v : z.z) ASSERT_GE(v.minCoeff(), 0.0);
    PrimalState best = zero_primal(any);
    for (int s = 0; s < 300; ++s) cd_primal_pass(any, xr, nullptr, best);
    EXPECT_GE(free_energy(any, xr, z), free_energy(any, xr, best) - 1e-12);
  }
}

struct Inferred {
  PrimalState zc, zf;
  DualState dc, df;
};

Inferred infer(const LayeredNet& net, const Sample& s, int sweeps) {
  Inferred r{zero_primal(net), zero_primal(net), zero_dual(net), zero_dual(net)};
  for (int k = 0; k < sweeps; ++k) {
    cd_primal_pass(net, s.x, &s.y, r.zc);
    cd_dual_pass(net, s.x, nullptr, r.df);
    cd_primal_pass(net, s.x, nullptr, r.zf);
    cd_dual_pass(net, s.x, &s.y, r.dc);
  }
  return r;
}

TEST(ChlContrastive, InferredBoundsMatchTheContrastiveLoss) {
  Rng rng(15);
  const LayeredNet net = LayeredNet::random(NetLayout({2, 2, 1}), rng.gen, 1.5, 0.5);
  const Sample s{rng.vec(2), rng.vec(1)};
  const Inferred st = infer(net, s, 500);
  const double j = projected_gradient_min(net, s.x, &s.y, 1000000) -
                   projected_gradient_min(net, s.x, nullptr, 1000000);
  EXPECT_NEAR(contrastive_upper(net, {s}, {st.zc}, {st.df}), j, 2e-6);
  EXPECT_NEAR(contrastive_lower(net, {s}, {st.dc}, {st.zf}), j, 2e-6);
}

TEST(ChlContrastive, DroppingTheFreeDualLoosensTheUpperBound) {
  Rng rng(16);
  const LayeredNet net = LayeredNet::random(NetLayout({3, 3, 2}), rng.gen, 1.5, 0.5);
  const Sample s{rng.vec(3), rng.vec(2)};
  const Inferred st = infer(net, s, 300);
  EXPECT_GE(contrastive_upper(net, {s}, {st.zc}, {zero_dual(net)}),
            contrastive_upper(net, {s}, {st.zc}, {st.df}));
  // Mirror: a zero clamped dual can only lower the lower bound.
  EXPECT_LE(contrastive_lower(net, {s}, {zero_dual(net)}, {st.zf}),
            contrastive_lower(net, {s}, {st.dc}, {st.zf}));
}

TEST(ChlContrastive, LowerNeverExceedsUpper) {
  Rng rng(17);
  const NetLayout layout({3, 3, 2});
  for (int trial = 0; trial < 1000; ++trial) {
    const LayeredNet net = LayeredNet::random(layout, rng.gen, 1.5, 0.5);
    const Sample s{rng.vec(3), rng.vec(2)};
    const double up = contrastive_upper(net, {s}, {random_primal(net, rng)},
                                        {random_dual(net, rng, false)});
    const double lo = contrastive_lower(net, {s}, {random_dual(net, rng, true)},
                                        {random_primal(net, rng)});
    ASSERT_LE(lo, up);
  }
}

TEST(ChlContrastive, StateCountMismatchRejected) {
  const LayeredNet net = LayeredNet::zeros(NetLayout({2, 2, 1}));
  const Sample s{Vector::Zero(2), Vector::Zero(1)};
  EXPECT_THROW(contrastive_upper(net, {s, s}, {zero_primal(net)}, {zero_dual(net)}), Error);
  EXPECT_THROW(contrastive_lower(net, {s}, {}, {zero_primal(net)}), Error);
}

TEST(ChlContrastive, PerfectFitReachesZero) {
  Rng rng(18);
  const NetLayout layout({3, 4, 2});
  const LayeredNet net = nonneg_net(layout, rng);
  const Vector x = rng.nonneg(3);
  const Sample s{x, network_output(net, ff_init(net, x))};
  ChlProblem problem(layout, {s});
  const ParamVector theta = net.pack();
  const UpperLatent u = problem.refine_upper(theta, problem.initial_upper(), 5);
  EXPECT_LE(problem.upper_value(theta, u), 1e-8);
  EXPECT_GE(problem.upper_value(theta, u), -1e-12);
}

ParamVector central_difference(const std::function<double(const ParamVector&)>& f,
                               const ParamVector& theta, double h) {
  ParamVector g(theta.size());
  for (Index k = 0; k < theta.size(); ++k) {
    ParamVector p = theta, m = theta;
    p[k] += h;
    m[k] -= h;
    g[k] = (f(p) - f(m)) / (2 * h);
  }
  return g;
}

TEST(ChlGradient, ZeroResidualsAndDualsGiveZero) {
  Rng rng(19);
  const LayeredNet net = nonneg_net(NetLayout({2, 2, 1}), rng);
  const Vector x = rng.nonneg(2);
  const PrimalState z = ff_init(net, x);
  const Sample s{x, network_output(net, z)};
  EXPECT_LT(grad_params_upper(net, {s}, {z}, {zero_dual(net)}).norm(), 1e-14);
}

TEST(ChlGradient, MatchesCentralDifferences) {
  Rng rng(20);
  const NetLayout layout({2, 2, 1});
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const LayeredNet net = LayeredNet::random(layout, rng.gen, 1.5, 0.5);
    const Sample s{rng.vec(2), rng.vec(1)};
    const PrimalState z = random_primal(net, rng);
    const DualState d = random_dual(net, rng, false);
    const ParamVector g = grad_params_upper(net, {s}, {z}, {d});
    const ParamVector fd = central_difference(
        [&](const ParamVector& t) {
          return contrastive_upper(LayeredNet::unpack(layout, t), {s}, {z}, {d});
        },
        net.pack(), 1e-6);
    worst = std::max(worst, (g - fd).norm() / std::max(1.0, fd.norm()));
  }
  EXPECT_LE(worst, 1e-5);
}

TEST(ChlGradient, BatchGradientIsTheSumOfSampleGradients) {
  Rng rng(21);
  const LayeredNet net = LayeredNet::random(NetLayout({3, 3, 2}), rng.gen);
  std::vector<Sample> batch;
  std::vector<PrimalState> zs;
  std::vector<DualState> ds;
  ParamVector sum = ParamVector::Zero(net.layout.parameter_count());
  for (int i = 0; i < 5; ++i) {
    batch.push_back({rng.vec(3), rng.vec(2)});
    zs.push_back(random_primal(net, rng));
    ds.push_back(random_dual(net, rng, false));
    sum += grad_params_upper(net, {batch.back()}, {zs.back()}, {ds.back()});
  }
  EXPECT_LT((grad_params_upper(net, batch, zs, ds) - sum).norm(), 1e-12 * sum.norm());
}

TEST(ChlLipschitz, EmptyDatasetRejected) {
  const LayeredNet net = LayeredNet::zeros(NetLayout({2, 2, 1}));
  EXPECT_THROW(estimate_lipschitz(net, {}), Error);
}

TEST(ChlLipschitz, ZeroDataKeepsTheBiasCurvature) {
  const LayeredNet net = LayeredNet::zeros(NetLayout({2, 2, 1}));
  const double L = estimate_lipschitz(net, {{Vector::Zero(2), Vector::Zero(1)}});
  EXPECT_GE(L, 1e-3);
  EXPECT_EQ(L, 2.0);
}

TEST(ChlLipschitz, DoublingTheInputScaleAtLeastDoublesTheBound) {
  Rng rng(22);
  LayeredNet net = LayeredNet::random(NetLayout({3, 4, 2}), rng.gen);
  for (auto& b : net.b) b.setZero();
  std::vector<Sample> data, doubled;
  for (int i = 0; i < 10; ++i) {
    const Vector x = rng.vec(3).normalized() * 2.0;
    data.push_back({x, rng.vec(2)});
    doubled.push_back({2.0 * x, data.back().y});
  }
  EXPECT_GE(estimate_lipschitz(net, doubled), 2.0 * estimate_lipschitz(net, data));
}

TEST(ChlLipschitz, DescentInequalityHoldsOnProbes) {
  Rng rng(23);
  const NetLayout layout({3, 3, 2});
  std::vector<Sample> data;
  for (int i = 0; i < 20; ++i) data.push_back({rng.vec(3), rng.vec(2)});
  const ChlProblem problem(layout, data);
  int violations = 0;
  for (int probe = 0; probe < 1000; ++probe) {
    const LayeredNet net = LayeredNet::random(layout, rng.gen);
    const double L = estimate_lipschitz(net, data);
    const Index i = probe % 20;
    const ParamVector theta = net.pack();
    Vector u = problem.initial_upper_term(i);
    problem.refine_upper_term(i, theta, u, 1 + probe % 5);
    ParamVector step(theta.size());
    for (Index k = 0; k < step.size(); ++k) step[k] = 0.05 * rng.normal();
    Vector g = Vector::Zero(theta.size());
    problem.accumulate_grad_upper_term(i, theta, u, g);
    const double lhs = problem.upper_value_term(i, theta + step, u);
    const double rhs =
        problem.upper_value_term(i, theta, u) + g.dot(step) + 0.5 * L * step.squaredNorm();
    violations += lhs > rhs + 1e-12 ? 1 : 0;
  }
  EXPECT_EQ(violations, 0);
}

TEST(ChlProblem, RefinementIsMonotoneAndBoundsAreOrdered) {
  Rng rng(24);
  const NetLayout layout({4, 3, 3, 2});
  std::vector<Sample> data;
  for (int i = 0; i < 8; ++i) data.push_back({rng.vec(4), rng.vec(2)});
  const ChlProblem problem(layout, data);
  const ParamVector theta = LayeredNet::random(layout, rng.gen, 1.5, 0.5).pack();
  UpperLatent u = problem.initial_upper();
  LowerLatent l = problem.initial_lower();
  double up = problem.upper_value(theta, u), lo = problem.lower_value(theta, l);
  for (int p = 0; p < 30; ++p) {
    u = problem.refine_upper(theta, u, 1);
    l = problem.refine_lower(theta, l, 1);
    const double nu = problem.upper_value(theta, u), nl = problem.lower_value(theta, l);
    ASSERT_LE(nu, up);
    ASSERT_GE(nl, lo);
    ASSERT_LE(nl, nu);
    up = nu;
    lo = nl;
  }
  EXPECT_LT(up - lo, 1e-3);
}

TEST(ChlProblem, GradientMatchesCentralDifferencesAtUnconvergedLatents) {
  Rng rng(25);
  const NetLayout layout({3, 3, 2});
  std::vector<Sample> data;
  for (int i = 0; i < 4; ++i) data.push_back({rng.vec(3), rng.vec(2)});
  const ChlProblem problem(layout, data);
  const ParamVector theta = LayeredNet::random(layout, rng.gen, 1.5, 0.5).pack();
  const UpperLatent u = problem.refine_upper(theta, problem.initial_upper(), 2);
  const ParamVector g = problem.grad_theta_upper(theta, u);
  const ParamVector fd = central_difference(
      [&](const ParamVector& t) { return problem.upper_value(t, u); }, theta, 1e-6);
  EXPECT_LE((g - fd).norm() / std::max(1.0, fd.norm()), 1e-5);
}

}  // namespace
}  // namespace gapmm
