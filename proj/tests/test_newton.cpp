#include <cmath>
#include <memory>
#include <random>

#include <gtest/gtest.h>

#include "qvi/newton.hpp"
#include "qvi/regularize.hpp"
#include "qvi/switching_pde.hpp"
#include "qvi/generators.hpp"

using namespace qvi;

namespace {

std::shared_ptr<const AffineSystem> scaled_identity(Index d, Index n, double gamma, const Eigen::VectorXd& b) {
  SparseMatrix a(d * n, d * n);
  a.setIdentity();
  return std::make_shared<const AffineSystem>(d, n, a * gamma, b, gamma);
}

// Textbook Gaussian elimination with partial pivoting.
Eigen::VectorXd dense_gauss(Eigen::MatrixXd a, Eigen::VectorXd b) {
  const Index n = a.rows();
  for (Index k = 0; k < n; ++k) {
    Index p = k;
    for (Index r = k + 1; r < n; ++r)
      if (std::abs(a(r, k)) > std::abs(a(p, k))) p = r;
    a.row(k).swap(a.row(p));
    std::swap(b[k], b[p]);
    for (Index r = k + 1; r < n; ++r) {
      const double f = a(r, k) / a(k, k);
      a.row(r) -= f * a.row(k);
      b[r] -= f * b[k];
    }
  }
  Eigen::VectorXd x(n);
  for (Index k = n - 1; k >= 0; --k) {
    double s = b[k];
    for (Index j = k + 1; j < n; ++j) s -= a(k, j) * x[j];
    x[k] = s / a(k, k);
  }
  return x;
}

double value_at(const RegimeField& u, const pde::PdeParams& p, double x) {
  return u(0, static_cast<Index>(std::lround(x / p.h())));
}

}  // namespace

TEST(LinearSolve, Identity) {
  SparseMatrix id(4, 4);
  id.setIdentity();
  Eigen::VectorXd r(4);
  r << 1, -2, 3, 0.5;
  EXPECT_EQ(linear_solve(id, r), r);
}

TEST(LinearSolve, PoissonMatchesDenseElimination) {
  const Index n = 5;
  std::vector<Triplet> t;
  for (Index k = 0; k < n; ++k) {
    t.emplace_back(k, k, 2.0);
    if (k > 0) t.emplace_back(k, k - 1, -1.0);
    if (k + 1 < n) t.emplace_back(k, k + 1, -1.0);
  }
  SparseMatrix a(n, n);
  a.setFromTriplets(t.begin(), t.end());
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
  const Eigen::VectorXd x = linear_solve(a, ones);
  EXPECT_LT(sup_norm(x - dense_gauss(Eigen::MatrixXd(a), ones)), 1e-13);
  EXPECT_NEAR(x[2], 4.5, 1e-13);
}

TEST(LinearSolve, BackwardErrorOnSwitchingSlant) {
  auto sys = pde::assemble(pde::PdeParams::two_regime());
  const PenalizedProblem prob(sys, SwitchingCosts::uniform(2, 0.125), 1e3);
  const SolveResult s = solve_penalized(prob, root_of(*sys));
  const SparseMatrix l = penalized_slant(s.solution, prob);
  gen::Rng rng(1);
  for (int k = 0; k < 5; ++k) {
    const Eigen::VectorXd rhs = gen::random_field(2, 100, -10, 10, rng).flat();
    const Eigen::VectorXd x = linear_solve(l, rhs);
    EXPECT_LE(sup_norm(l * x - rhs), 1e-10 * (1.0 + sup_norm(rhs)));
  }
}

TEST(LinearSolve, SingularAndMismatch) {
  SparseMatrix z(3, 3);
  z.insert(0, 0) = 1.0;
  EXPECT_THROW(linear_solve(z, Eigen::VectorXd::Ones(3)), SingularSlant);
  SparseMatrix id(3, 3);
  id.setIdentity();
  EXPECT_THROW(linear_solve(id, Eigen::VectorXd::Ones(2)), InvalidInput);
}

TEST(NewtonConfig, Validation) {
  NewtonConfig c;
  c.tol = 0.0;
  EXPECT_THROW(c.validate(), InvalidInput);
  c = {};
  c.max_iter = 0;
  EXPECT_THROW(c.validate(), InvalidInput);
}

TEST(SolveRoot, LinearSystemOneStep) {
  auto sys = pde::assemble(pde::PdeParams::two_regime());
  gen::Rng rng(2);
  const SolveResult s = solve_root(*sys, gen::random_field(2, 100, -50, 50, rng));
  // The first step lands on the root; the second only confirms the increment.
  EXPECT_LE(s.report.residuals[1], 1e-8);
  EXPECT_EQ(s.report.iterations, 2);
  EXPECT_TRUE(s.report.converged);
}

TEST(SolveRoot, IdentityTypeMap) {
  auto sys = scaled_identity(2, 3, 0.5, Eigen::VectorXd::Zero(6));
  const SolveResult s = solve_root(*sys, RegimeField(2, 3, 7.0));
  EXPECT_EQ(s.report.residuals[1], 0.0);
  EXPECT_EQ(sup_norm(s.solution), 0.0);
}

TEST(SolveRoot, RootSolvesEachRegimeSeparately) {
  const pde::PdeParams p = pde::PdeParams::two_regime();
  auto sys = pde::assemble(p);
  const RegimeField u0 = root_of(*sys);
  EXPECT_LE(sup_norm(sys->evaluate(u0)), 1e-8);
  // x = 0 decouples; the rest of regime 0 is pure transport, solved backwards from the boundary.
  const Eigen::VectorXd ell = pde::reward_values(p);
  EXPECT_NEAR(u0(0, 0), ell[0] / p.r, 1e-12);
  double next = 0.0;
  for (Index l = p.nodes - 1; l >= 1; --l) {
    const double drift = p.r * p.x(l) / p.h();
    next = (ell[l] + drift * next) / (drift + p.r);
    EXPECT_NEAR(u0(0, l), next, 1e-9);
  }
}

TEST(SolvePenalized, TwoRegimeFirstCell) {
  const pde::PdeParams p = pde::PdeParams::two_regime();
  auto sys = pde::assemble(p);
  const SolveResult s = solve_penalized(PenalizedProblem(sys, SwitchingCosts::uniform(2, 0.5), 1e3), root_of(*sys));
  EXPECT_NEAR(value_at(s.solution, p, 0.5), 3.37521, 1e-3);
  EXPECT_NEAR(value_at(s.solution, p, 0.5), 3.37521, 6e-6);
  EXPECT_GE(s.report.iterations, 3);
  EXPECT_LE(s.report.iterations, 10);
  EXPECT_LE(s.report.final_residual, 1e-8);
}

TEST(SolvePenalized, ThreeRegimeFirstCell) {
  const pde::PdeParams p = pde::PdeParams::three_regime();
  auto sys = pde::assemble(p);
  const SolveResult s = solve_penalized(PenalizedProblem(sys, SwitchingCosts::uniform(3, 0.25), 4e3), root_of(*sys));
  EXPECT_NEAR(value_at(s.solution, p, 1.0), 6.849917, 1e-3);
  EXPECT_GE(s.report.iterations, 6);
  EXPECT_LE(s.report.iterations, 24);
}

TEST(SolvePenalized, HugeCostMakesRhoIrrelevant) {
  gen::Rng rng(4);
  auto sys = gen::random_affine_system(2, 3, 0.5, rng);
  const double c = 2.0 * sys->norm_F0() / sys->gamma() + 1.0;
  const SwitchingCosts costs = SwitchingCosts::uniform(2, c);
  const RegimeField ref = solve_penalized(PenalizedProblem(sys, costs, 0.0), RegimeField(2, 3)).solution;
  for (double rho : {1e3, 1e6}) {
    const RegimeField u = solve_penalized(PenalizedProblem(sys, costs, rho), RegimeField(2, 3)).solution;
    EXPECT_LE(sup_norm(u - ref), 1e-9);
  }
}

TEST(SolvePenalized, RejectsNonLinearPenalty) {
  auto sys = scaled_identity(2, 1, 1.0, Eigen::VectorXd::Zero(2));
  const PenalizedProblem prob(sys, SwitchingCosts::uniform(2, 0.1), 1.0, PowerPenalty(2.0));
  EXPECT_THROW(solve_penalized(prob, RegimeField(2, 1)), UnsupportedPenaltyDegree);
}

TEST(SolvePenalized, MaxIterCarriesDiagnostics) {
  auto sys = pde::assemble(pde::PdeParams::two_regime());
  NewtonConfig cfg;
  cfg.max_iter = 1;
  try {
    solve_penalized(PenalizedProblem(sys, SwitchingCosts::uniform(2, 0.125), 1e3), root_of(*sys), cfg);
    FAIL() << "expected MaxIterExceeded";
  } catch (const MaxIterExceeded& e) {
    EXPECT_EQ(e.last_iterate().size(), 200);
    EXPECT_GT(e.last_residual(), 0.0);
  }
}

TEST(SolvePenalized, IteratesIncreaseAfterFirstStep) {
  // G is concave with M-matrix slants, so from the first Newton iterate on
  // G(u_k) <= 0 and the iterates increase monotonically. The residual norm
  // itself is not monotone (it carries a factor rho).
  for (const auto& p : {pde::PdeParams::two_regime(), pde::PdeParams::three_regime()}) {
    auto sys = pde::assemble(p);
    const RegimeField u0 = root_of(*sys);
    for (double c : {0.5, 1.0 / 32, 1.0 / 2048}) {
      const PenalizedProblem prob(sys, SwitchingCosts::uniform(p.regimes, c), 8e3);
      const SolveResult full = solve_penalized(prob, u0);
      std::vector<RegimeField> iterates;
      for (int k = 1; k < full.report.iterations; ++k) {
        NewtonConfig cfg;
        cfg.max_iter = k;
        try {
          solve_penalized(prob, u0, cfg);
        } catch (const MaxIterExceeded& e) {
          iterates.emplace_back(p.regimes, p.nodes, e.last_iterate());
        }
      }
      iterates.push_back(full.solution);
      for (std::size_t k = 0; k < iterates.size(); ++k) {
        const double scale = 1e-9 * prob.rho * (1.0 + sup_norm(iterates[k]));
        EXPECT_LE(penalized_residual(iterates[k], prob).flat().maxCoeff(), scale);
        if (k > 0) {
          EXPECT_TRUE(leq(iterates[k - 1], iterates[k], 1e-9));
        }
      }
    }
  }
}

TEST(SolvePenalized, MonotoneInRhoAndCost) {
  gen::Rng rng(6);
  for (int k = 0; k < 20; ++k) {
    const Index d = 2 + k % 2, n = 1 + k % 6;
    auto sys = gen::random_policy_system(d, n, 0.3, rng);
    const RegimeField start(d, n);
    RegimeField prev = solve_penalized(PenalizedProblem(sys, SwitchingCosts::uniform(d, 0.1), 0.0), start).solution;
    for (double rho : {1.0, 10.0, 100.0, 1e4}) {
      const RegimeField u = solve_penalized(PenalizedProblem(sys, SwitchingCosts::uniform(d, 0.1), rho), start).solution;
      EXPECT_TRUE(leq(prev, u, 1e-8));
      prev = u;
    }
    const RegimeField hi = solve_penalized(PenalizedProblem(sys, SwitchingCosts::uniform(d, 0.5), 1e4), start).solution;
    const RegimeField lo = solve_penalized(PenalizedProblem(sys, SwitchingCosts::uniform(d, 0.05), 1e4), start).solution;
    EXPECT_TRUE(leq(hi, lo, 1e-8));
  }
}

TEST(SolveObstacle, NeverBindingObstacleGivesRoot) {
  auto sys = pde::assemble(pde::PdeParams::two_regime());
  const SolveResult s = solve_obstacle(ObstacleProblem::fixed(sys, RegimeField(2, 100, -1e6)), RegimeField(2, 100));
  EXPECT_LT(sup_norm(s.solution - root_of(*sys)), 1e-9);
}

TEST(SolveObstacle, HandCheckedFrozenObstacle) {
  Eigen::VectorXd b(2);
  b << 0.0, 2.0;
  auto sys = scaled_identity(2, 1, 1.0, b);
  const RegimeField psi = obstacle_field(RegimeField(2, 1), SwitchingCosts::uniform(2, 1.0));
  EXPECT_DOUBLE_EQ(psi(0, 0), -1.0);
  const SolveResult s = solve_obstacle(ObstacleProblem::fixed(sys, psi), RegimeField(2, 1));
  EXPECT_NEAR(s.solution(0, 0), 0.0, 1e-14);
  EXPECT_NEAR(s.solution(1, 0), 2.0, 1e-14);
}

TEST(SolveObstacle, BindingObstacleLiftsSolution) {
  Eigen::VectorXd b(2);
  b << 0.0, 2.0;
  auto sys = scaled_identity(2, 1, 1.0, b);
  const RegimeField psi{{1.0}, {-1.0}};
  const SolveResult s = solve_obstacle(ObstacleProblem::fixed(sys, psi), RegimeField(2, 1));
  EXPECT_NEAR(s.solution(0, 0), 1.0, 1e-14);
  EXPECT_NEAR(s.solution(1, 0), 2.0, 1e-14);
  EXPECT_LE(sup_norm(obstacle_residual(s.solution, ObstacleProblem::fixed(sys, psi))), 1e-12);
}

TEST(SolveObstacle, LargeEpsilonStaysAtSupersolutionAnchor) {
  gen::Rng rng(8);
  auto sys = gen::random_affine_system(2, 3, 0.5, rng);
  const SwitchingCosts costs = SwitchingCosts::uniform(2, 0.4);
  // A strict supersolution has F > 0 and clears its own obstacle, so the
  // dominant pseudo-time term pins the solution to it.
  const RegimeField anchor = strict_supersolution(sys, costs, 0.2);
  const SolveResult s =
      solve_obstacle(ObstacleProblem::time_marching(sys, costs, 1e6, anchor), anchor);
  EXPECT_LE(sup_norm(s.solution - anchor), 1e-4);
}

TEST(SolveObstacle, ValidatesInputs) {
  auto sys = scaled_identity(2, 1, 1.0, Eigen::VectorXd::Zero(2));
  ObstacleProblem p{sys, RegimeField(2, 1), SwitchingCosts::uniform(2, 1.0), 0.0, std::nullopt};
  EXPECT_THROW(p.validate(), InvalidInput);
  EXPECT_THROW(ObstacleProblem::fixed(sys, RegimeField(2, 3)), InvalidInput);
}
