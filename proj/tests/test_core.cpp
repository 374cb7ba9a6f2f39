#include <algorithm>
#include <cmath>
#include <memory>
#include <random>

#include <gtest/gtest.h>

#include "qvi/newton.hpp"
#include "qvi/penalty.hpp"
#include "qvi/qvi_core.hpp"
#include "qvi/switching_pde.hpp"
#include "qvi/generators.hpp"

using namespace qvi;

namespace {

// F_i(u) = u^i - b_i on a single node.
std::shared_ptr<const AffineSystem> shifted_identity(const Eigen::VectorXd& b, double gamma = 1.0) {
  const Index n = b.size();
  SparseMatrix a(n, n);
  a.setIdentity();
  return std::make_shared<const AffineSystem>(n, 1, a * gamma, b, gamma);
}

}  // namespace

TEST(RegimeField, RejectsBadShapesAndNonFinite) {
  EXPECT_THROW(RegimeField(1, 3), InvalidInput);
  EXPECT_THROW(RegimeField(2, 0), InvalidInput);
  Eigen::VectorXd v(4);
  v << 1, 2, std::nan(""), 4;
  EXPECT_THROW(RegimeField(2, 2, v), InvalidInput);
  EXPECT_THROW((RegimeField{{1.0, 2.0}, {3.0}}), InvalidInput);
}

TEST(RegimeField, SupNorm) {
  const RegimeField u{{-3.0, 2.0}, {1.0, -4.0}};
  EXPECT_DOUBLE_EQ(sup_norm(u), 4.0);
  EXPECT_DOUBLE_EQ(u(1, 1), -4.0);
}

TEST(SwitchingCosts, UniformAndValidation) {
  const SwitchingCosts c = SwitchingCosts::uniform(3, 0.5);
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(c(i, j), i == j ? 0.0 : 0.5);
  Eigen::MatrixXd bad = Eigen::MatrixXd::Ones(2, 2);
  bad(0, 1) = -1.0;
  EXPECT_THROW(SwitchingCosts{bad}, InvalidInput);
  EXPECT_THROW(SwitchingCosts::uniform(2, -0.1), InvalidInput);
}

TEST(Intervention, SingleCompetitor) {
  const RegimeField u{{5.0}, {3.0}};
  const Intervention m = intervention(u, SwitchingCosts::uniform(2, 1.0), 0);
  EXPECT_DOUBLE_EQ(m.values[0], 2.0);
  EXPECT_EQ(m.argmax[0], 1);
}

TEST(Intervention, PerPairCostsPickLargest) {
  const RegimeField u{{0.0}, {4.0}, {4.0}};
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(3, 3);
  c(0, 1) = 1.0;
  c(0, 2) = 2.0;
  const Intervention m = intervention(u, SwitchingCosts(c), 0);
  EXPECT_DOUBLE_EQ(m.values[0], 3.0);
  EXPECT_EQ(m.argmax[0], 1);
}

TEST(Intervention, TiesGoToLowestIndex) {
  const RegimeField u{{0.0}, {4.0}, {4.0}};
  const Intervention m = intervention(u, SwitchingCosts::uniform(3, 1.0), 0);
  EXPECT_EQ(m.argmax[0], 1);
}

TEST(Intervention, DimensionMismatch) {
  const RegimeField u{{0.0}, {1.0}};
  EXPECT_THROW(intervention(u, SwitchingCosts::uniform(3, 1.0), 0), InvalidInput);
  EXPECT_THROW(intervention(u, SwitchingCosts::uniform(2, 1.0), 2), InvalidInput);
}

TEST(QviResidual, ZeroSolutionWhenFZeroVanishes) {
  auto sys = shifted_identity(Eigen::VectorXd::Zero(2));
  const RegimeField g = qvi_residual(RegimeField(2, 1), *sys, SwitchingCosts::uniform(2, 1.0));
  EXPECT_DOUBLE_EQ(sup_norm(g), 0.0);
}

TEST(QviResidual, NegativeBelowObstacle) {
  auto sys = shifted_identity(Eigen::VectorXd::Zero(2));
  const RegimeField u{{0.0}, {5.0}};
  const RegimeField g = qvi_residual(u, *sys, SwitchingCosts::uniform(2, 1.0));
  EXPECT_LT(g(0, 0), 0.0);
}

TEST(QviResidual, RejectsZeroCost) {
  auto sys = shifted_identity(Eigen::VectorXd::Zero(2));
  EXPECT_THROW(qvi_residual(RegimeField(2, 1), *sys, SwitchingCosts::uniform(2, 0.0)), InvalidInput);
}

TEST(PenalizedResidual, RhoZeroIsF) {
  gen::Rng rng(3);
  auto sys = gen::random_affine_system(3, 4, 0.5, rng);
  const RegimeField u = gen::random_field(3, 4, -2, 2, rng);
  const PenalizedProblem prob(sys, SwitchingCosts::uniform(3, 0.1), 0.0);
  EXPECT_EQ(penalized_residual(u, prob).flat(), sys->evaluate(u).flat());
}

TEST(PenalizedResidual, HandSolvedTwoByTwo) {
  // u1 - (u2 - u1)^+ = 0, u2 - 2 - (u1 - u2)^+ = 0. With u2 > u1 the first
  // row gives u2 = 2 u1 and the second u2 = 2, so u = (1, 2).
  Eigen::VectorXd b(2);
  b << 0.0, 2.0;
  const PenalizedProblem prob(shifted_identity(b), SwitchingCosts::uniform(2, 0.0), 1.0);
  EXPECT_EQ(sup_norm(penalized_residual(RegimeField{{1.0}, {2.0}}, prob)), 0.0);
  EXPECT_GT(sup_norm(penalized_residual(RegimeField{{2.0 / 3.0}, {4.0 / 3.0}}, prob)), 0.5);
  const SolveResult s = solve_penalized(prob, RegimeField(2, 1));
  EXPECT_NEAR(s.solution(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(s.solution(1, 0), 2.0, 1e-12);
}

TEST(PenalizedResidual, TwoRegimeNewtonSolutionHasSmallResidual) {
  auto sys = pde::assemble(pde::PdeParams::two_regime());
  const PenalizedProblem prob(sys, SwitchingCosts::uniform(2, 0.5), 1e3);
  const SolveResult s = solve_penalized(prob, root_of(*sys));
  EXPECT_LE(sup_norm(penalized_residual(s.solution, prob)), 1e-8);
}

TEST(QviResidual, LargeRhoSolutionNearlySolvesQvi) {
  auto sys = pde::assemble(pde::PdeParams::two_regime());
  const PenalizedProblem prob(sys, SwitchingCosts::uniform(2, 0.5), 32e3);
  const SolveResult s = solve_penalized(prob, root_of(*sys));
  EXPECT_LE(sup_norm(qvi_residual(s.solution, *sys, prob.costs)), 6e-4);
  for (Index i = 0; i < 2; ++i)
    EXPECT_GE((s.solution.regime(i) - intervention(s.solution, prob.costs, i).values).minCoeff(), -6e-4);
}

TEST(PenalizedSlant, InactiveEqualsSlantOfF) {
  auto sys = shifted_identity(Eigen::VectorXd::Zero(2));
  const PenalizedProblem prob(sys, SwitchingCosts::uniform(2, 1.0), 5.0);
  const RegimeField u{{0.0}, {0.5}};
  const Eigen::MatrixXd l = Eigen::MatrixXd(penalized_slant(u, prob));
  EXPECT_TRUE(l.isApprox(Eigen::MatrixXd(sys->slant_at(u))));
}

TEST(PenalizedSlant, ActivePairAssembly) {
  auto sys = shifted_identity(Eigen::VectorXd::Zero(2));
  const PenalizedProblem prob(sys, SwitchingCosts::uniform(2, 1.0), 5.0);
  const RegimeField u{{0.0}, {1.1}};  // u2 - c - u1 = 0.1
  const Eigen::MatrixXd l = Eigen::MatrixXd(penalized_slant(u, prob));
  EXPECT_DOUBLE_EQ(l(0, 0), 6.0);
  EXPECT_DOUBLE_EQ(l(0, 1), -5.0);
  EXPECT_DOUBLE_EQ(l(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(l(1, 1), 1.0);
}

TEST(PenalizedSlant, KinkCountsAsInactive) {
  auto sys = shifted_identity(Eigen::VectorXd::Zero(2));
  const PenalizedProblem prob(sys, SwitchingCosts::uniform(2, 1.0), 5.0);
  const RegimeField u{{0.0}, {1.0}};
  EXPECT_DOUBLE_EQ(Eigen::MatrixXd(penalized_slant(u, prob))(0, 0), 1.0);
}

TEST(PenalizedSlant, RejectsNonLinearPenalty) {
  auto sys = shifted_identity(Eigen::VectorXd::Zero(2));
  const PenalizedProblem prob(sys, SwitchingCosts::uniform(2, 1.0), 5.0, PowerPenalty(0.5));
  EXPECT_THROW(penalized_slant(RegimeField(2, 1), prob), UnsupportedPenaltyDegree);
}

TEST(PenalizedSlant, FiniteDifferenceProbe) {
  gen::Rng rng(11);
  std::uniform_real_distribution<double> rho_dist(1.0, 10.0);
  int probes = 0;
  while (probes < 100) {
    const Index d = 2 + static_cast<Index>(rng() % 2), n = 1 + static_cast<Index>(rng() % 4);
    SystemPtr sys = probes % 2 == 0 ? SystemPtr(gen::random_affine_system(d, n, 0.5, rng))
                                    : SystemPtr(gen::random_policy_system(d, n, 0.5, rng));
    const PenalizedProblem prob(sys, SwitchingCosts::uniform(d, 0.1), rho_dist(rng));
    const RegimeField u = gen::random_field(d, n, -2, 2, rng);
    const RegimeField h = gen::random_field(d, n, -1, 1, rng);
    // Skip points within 1e-3 of a penalty kink.
    bool near_kink = false;
    for (Index i = 0; i < d; ++i)
      for (Index j = 0; j < d; ++j)
        for (Index l = 0; l < n; ++l)
          if (i != j && std::abs(u(j, l) - 0.1 - u(i, l)) < 1e-3) near_kink = true;
    if (near_kink) continue;
    // ... and of a policy switch.
    if (auto* pm = dynamic_cast<const PolicyMinSystem*>(sys.get())) {
      const double t = 1e-7;
      if (Eigen::MatrixXd(pm->slant_at(u)) != Eigen::MatrixXd(pm->slant_at(u + t * h)) ||
          Eigen::MatrixXd(pm->slant_at(u)) != Eigen::MatrixXd(pm->slant_at(u + 1e-3 * h)))
        continue;
    }
    const double t = 1e-7;
    const Eigen::VectorXd lhs = penalized_residual(u + t * h, prob).flat() - penalized_residual(u, prob).flat() -
                                t * (penalized_slant(u, prob) * h.flat());
    EXPECT_LE(sup_norm(lhs) / t, 1e-6);
    ++probes;
  }
}

TEST(APriori, ZeroWhenFZeroVanishes) {
  auto sys = shifted_identity(Eigen::VectorXd::Zero(3), 2.0);
  EXPECT_DOUBLE_EQ(a_priori_bound(*sys), 0.0);
}

TEST(APriori, PenalizedSolutionsRespectBound) {
  gen::Rng rng(5);
  for (int k = 0; k < 30; ++k) {
    const Index d = 2 + k % 2;
    auto sys = gen::random_affine_system(d, 3, 0.3, rng, 2.0);
    for (double rho : {0.0, 10.0, 1e4}) {
      const PenalizedProblem prob(sys, SwitchingCosts::uniform(d, 0.05 * (k % 3)), rho);
      const SolveResult s = solve_penalized(prob, RegimeField(d, 3));
      EXPECT_LE(sup_norm(s.solution), a_priori_bound(*sys) + 1e-6);
    }
  }
}

TEST(Comparison, PenalizedSubBelowSuper) {
  gen::Rng rng(17);
  std::uniform_real_distribution<double> shift(0.0, 3.0);
  for (int k = 0; k < 40; ++k) {
    const Index d = 2 + k % 2, n = 1 + k % 4;
    auto sys = gen::random_affine_system(d, n, 0.4, rng);
    const PenalizedProblem prob(sys, SwitchingCosts::uniform(d, 0.2), 50.0);
    const RegimeField star = solve_penalized(prob, RegimeField(d, n)).solution;
    // Translating a solution by a constant gives sub- and supersolutions;
    // random perturbations are kept only when the signs survive.
    RegimeField sub = star - RegimeField(d, n, shift(rng)) - gen::random_field(d, n, 0, 0.01, rng);
    RegimeField super = star + RegimeField(d, n, shift(rng)) + gen::random_field(d, n, 0, 0.01, rng);
    const bool signs = penalized_residual(sub, prob).flat().maxCoeff() <= 1e-9 &&
                       penalized_residual(super, prob).flat().minCoeff() >= -1e-9;
    if (!signs) continue;
    EXPECT_TRUE(leq(sub, super, 1e-8));
  }
}

TEST(Translation, AssembledSystems) {
  gen::Rng rng(23);
  for (const auto& params : {pde::PdeParams::two_regime(), pde::PdeParams::three_regime()}) {
    auto sys = pde::assemble(params);
    // Rows carry entries of size ~4e2, so forming F at u + 10 loses ~1e-12 to roundoff.
    for (double shift : {0.1, 1.0, 10.0})
      EXPECT_GE(gen::translation_margin(*sys, shift, 20, 1.0, rng), -1e-12 * std::max(1.0, shift));
  }
}

TEST(Monotonicity, RandomSystemsSatisfyCondition) {
  gen::Rng rng(29);
  for (int k = 0; k < 20; ++k) {
    auto a = gen::random_affine_system(2 + k % 2, 1 + k % 5, 0.7, rng);
    EXPECT_GE(gen::monotonicity_margin(*a, 50, 5.0, rng), -1e-12);
    auto p = gen::random_policy_system(2 + k % 2, 1 + k % 5, 0.7, rng);
    EXPECT_GE(gen::monotonicity_margin(*p, 50, 5.0, rng), -1e-12);
  }
}

TEST(Penalty, Laws) {
  auto sys = pde::assemble(pde::PdeParams::two_regime());
  const double top = 2.0 * a_priori_bound(*sys);
  for (double sigma : {0.5, 1.0, 2.0}) {
    const PowerPenalty pi(sigma);
    EXPECT_DOUBLE_EQ(pi.tau(), 1.0);
    double prev = -1.0;
    for (int k = 0; k <= 1000; ++k) {
      const double y = -top + 2.0 * top * k / 1000.0;
      const double v = pi(y);
      if (y > 0.0) {
        EXPECT_GT(v, 0.0);
        EXPECT_GE(v, pi.tau() * std::pow(y, 1.0 / sigma) * (1.0 - 1e-15));
        EXPECT_GT(pi.subderivative(y), 0.0);
      } else {
        EXPECT_EQ(v, 0.0);
        EXPECT_EQ(pi.subderivative(y), 0.0);
      }
      EXPECT_GE(v, prev);
      prev = v;
    }
  }
  EXPECT_THROW(PowerPenalty(0.0), InvalidInput);
}
