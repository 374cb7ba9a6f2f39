#pragma once

#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

#include "qvi/errors.hpp"
#include "qvi/monotone_system.hpp"
#include "qvi/qvi_core.hpp"
#include "qvi/regime_field.hpp"

namespace qvi {

/// Stopping rule: ||u_k - u_{k-1}|| / max(||u_k||, scale) < tol, and ||residual(u_k)|| <= residual_tol.
struct NewtonConfig {
  double tol = 1e-9;
  double scale = 1.0;
  double residual_tol = 1e-8;
  int max_iter = 100;

  void validate() const {
    if (!(tol > 0.0)) throw InvalidInput("NewtonConfig: tol must be > 0");
    if (!(scale > 0.0)) throw InvalidInput("NewtonConfig: scale must be > 0");
    if (!(residual_tol > 0.0)) throw InvalidInput("NewtonConfig: residual_tol must be > 0");
    if (max_iter < 1) throw InvalidInput("NewtonConfig: max_iter must be >= 1");
  }
};

struct SolveReport {
  int iterations = 0;
  double final_residual = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> increments;  // relative increment per iteration
  std::vector<double> residuals;   // residual sup-norm at each iterate, starting with the initial guess
  double elapsed_seconds = 0.0;
  bool converged = false;
};

struct SolveResult {
  RegimeField solution;
  SolveReport report;
};

/// Largest system handed to the direct solver.
inline constexpr Index kLinearSolveCap = Index{1} << 22;

/// Solves op * x = rhs with a sparse LU factorization, followed by one step
/// of iterative refinement when the backward error exceeds 1e-10 (1 + ||rhs||).
inline Eigen::VectorXd linear_solve(const SparseMatrix& op, const Eigen::VectorXd& rhs) {
  if (op.rows() != op.cols()) throw InvalidInput("linear_solve: operator is not square");
  if (op.rows() != rhs.size()) throw InvalidInput("linear_solve: rhs size mismatch");
  if (op.rows() > kLinearSolveCap) throw InvalidInput("linear_solve: system exceeds size cap");

  Eigen::SparseMatrix<double, Eigen::ColMajor> a = op;
  a.makeCompressed();
  Eigen::SparseLU<Eigen::SparseMatrix<double, Eigen::ColMajor>, Eigen::COLAMDOrdering<int>> lu;
  lu.compute(a);
  if (lu.info() != Eigen::Success) {
    throw SingularSlant("linear_solve: factorization failed (" + lu.lastErrorMessage() + ")",
                        std::numeric_limits<double>::quiet_NaN());
  }
  Eigen::VectorXd x = lu.solve(rhs);
  if (lu.info() != Eigen::Success || !x.allFinite()) {
    throw SingularSlant("linear_solve: back substitution failed", std::numeric_limits<double>::quiet_NaN());
  }
  Eigen::VectorXd r = rhs - op * x;
  if (sup_norm(r) > 1e-10 * (1.0 + sup_norm(rhs))) x += lu.solve(r);
  return x;
}

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

/// Plain semismooth Newton: u <- u - J(u)^{-1} R(u), no damping.
/// `floor(u)` gives the roundoff level below which the residual cannot be
/// pushed; the residual check uses max(residual_tol, floor(u)).
template <class Residual, class Slant, class Floor>
SolveResult newton_loop(RegimeField u, Residual&& residual, Slant&& slant, Floor&& floor,
                        const NewtonConfig& cfg, const char* what) {
  cfg.validate();
  if (!u.all_finite()) throw InvalidInput(std::string(what) + ": initial guess is not finite");
  const auto start = Clock::now();
  SolveReport report;

  Eigen::VectorXd r = residual(u);
  report.residuals.push_back(sup_norm(r));
  for (int k = 1; k <= cfg.max_iter; ++k) {
    Eigen::VectorXd step;
    try {
      step = linear_solve(slant(u), -r);
    } catch (const SingularSlant& e) {
      throw SingularSlant(std::string(what) + ": singular slant at iteration " + std::to_string(k),
                          sup_norm(r), u.flat());
    }
    RegimeField next(u.regimes(), u.nodes());
    next.flat() = u.flat() + step;
    if (!next.all_finite()) {
      throw SingularSlant(std::string(what) + ": non-finite iterate at iteration " + std::to_string(k),
                          sup_norm(r), u.flat());
    }
    const double inc = sup_norm(step) / std::max(sup_norm(next), cfg.scale);
    u = std::move(next);
    r = residual(u);
    const double res = sup_norm(r);
    report.increments.push_back(inc);
    report.residuals.push_back(res);
    if (inc < cfg.tol && res <= std::max(cfg.residual_tol, floor(u))) {
      report.iterations = k;
      report.final_residual = res;
      report.converged = true;
      report.elapsed_seconds = seconds_since(start);
      return {std::move(u), std::move(report)};
    }
  }
  throw MaxIterExceeded(std::string(what) + ": no convergence in " + std::to_string(cfg.max_iter) +
                            " iterations",
                        sup_norm(r), u.flat());
}

inline double no_floor(const RegimeField&) { return 0.0; }

/// Evaluating rho * pi(u^j - c - u^i) loses about eps * rho * |u| per term.
inline double penalty_roundoff(const RegimeField& u, double rho) {
  return 8.0 * std::numeric_limits<double>::epsilon() * rho * static_cast<double>(u.regimes() - 1) *
         (1.0 + sup_norm(u));
}

inline SolveResult solve_penalized_coupled(const PenalizedProblem& prob, const Coupling& cp,
                                           const RegimeField& initial, const NewtonConfig& cfg,
                                           const char* what) {
  if (!prob.penalty.is_linear()) {
    throw UnsupportedPenaltyDegree(std::string(what) +
                                   ": the Newton path supports penalty degree sigma = 1 only");
  }
  prob.system->check_shape(initial);
  const double eps_scale = cp.kind == Coupling::Kind::march ? 1.0 + cp.epsilon : 1.0;
  return newton_loop(
      initial, [&](const RegimeField& v) { return penalized_residual_flat(v, prob, cp); },
      [&](const RegimeField& v) { return penalized_slant_flat(v, prob, cp); },
      [&](const RegimeField& v) { return penalty_roundoff(v, prob.rho * eps_scale); }, cfg, what);
}

}  // namespace detail

/// Solves F(u) = 0.
inline SolveResult solve_root(const MonotoneSystem& system, const RegimeField& initial,
                              const NewtonConfig& cfg = {}) {
  system.check_shape(initial);
  return detail::newton_loop(
      initial, [&](const RegimeField& v) { return system.evaluate_flat(v.flat()); },
      [&](const RegimeField& v) { return system.slant_flat(v.flat()); }, detail::no_floor, cfg,
      "solve_root");
}

/// Root of F started from zero; the initial guess u^0 used throughout.
inline RegimeField root_of(const MonotoneSystem& system, const NewtonConfig& cfg = {}) {
  return solve_root(system, RegimeField(system.regimes(), system.nodes()), cfg).solution;
}

/// Semismooth Newton on G^rho(u) = 0:
///   G^rho(u_k) + L[u_k] (u_{k+1} - u_k) = 0.
inline SolveResult solve_penalized(const PenalizedProblem& prob, const RegimeField& initial,
                                   const NewtonConfig& cfg = {}) {
  return detail::solve_penalized_coupled(prob, {}, initial, cfg, "solve_penalized");
}

/// Obstacle problem min(F_i(v), B_i(v)) = 0 where the obstacle branch is
///
///   B_i(v) = v^i - psi^i + eps (v^i - anchor^i)      fixed obstacle psi
///   B_i(v) = v^i - M_i v + eps (v^i - anchor^i)      self-referential obstacle (costs given)
///
/// eps = 0 drops the pseudo-time term.
struct ObstacleProblem {
  SystemPtr system;
  std::optional<RegimeField> psi;
  std::optional<SwitchingCosts> costs;
  double epsilon = 0.0;
  std::optional<RegimeField> anchor;

  static ObstacleProblem fixed(SystemPtr sys, RegimeField obstacle) {
    ObstacleProblem p{std::move(sys), std::move(obstacle), std::nullopt, 0.0, std::nullopt};
    p.validate();
    return p;
  }

  static ObstacleProblem fixed_marching(SystemPtr sys, RegimeField obstacle, double eps, RegimeField anchor_) {
    ObstacleProblem p{std::move(sys), std::move(obstacle), std::nullopt, eps, std::move(anchor_)};
    p.validate();
    return p;
  }

  static ObstacleProblem time_marching(SystemPtr sys, SwitchingCosts c, double eps, RegimeField anchor_) {
    ObstacleProblem p{std::move(sys), std::nullopt, std::move(c), eps, std::move(anchor_)};
    p.validate();
    return p;
  }

  void validate() const {
    if (!system) throw InvalidInput("ObstacleProblem: null system");
    if (psi.has_value() == costs.has_value())
      throw InvalidInput("ObstacleProblem: give exactly one of a fixed obstacle or switching costs");
    if (psi) system->check_shape(*psi);
    if (costs && costs->regimes() != system->regimes())
      throw InvalidInput("ObstacleProblem: cost matrix and system disagree on regime count");
    if (!(epsilon >= 0.0)) throw InvalidInput("ObstacleProblem: epsilon must be >= 0");
    if (epsilon > 0.0) {
      if (!anchor) throw InvalidInput("ObstacleProblem: pseudo-time term needs an anchor field");
      system->check_shape(*anchor);
    }
  }
};

namespace detail {

struct ObstacleEval {
  Eigen::VectorXd f;         // F(v)
  Eigen::VectorXd barrier;   // B(v)
  std::vector<Index> argmax; // per row, the obstacle's maximizing regime (self-referential case)
};

inline ObstacleEval eval_obstacle(const ObstacleProblem& prob, const RegimeField& v) {
  const Index d = v.regimes(), n = v.nodes();
  ObstacleEval e;
  e.f = prob.system->evaluate_flat(v.flat());
  e.barrier = v.flat();
  if (prob.psi) {
    e.barrier -= prob.psi->flat();
  } else {
    e.argmax.resize(static_cast<std::size_t>(d * n));
    for (Index i = 0; i < d; ++i) {
      Intervention m = intervention(v, *prob.costs, i);
      e.barrier.segment(i * n, n) -= m.values;
      for (Index l = 0; l < n; ++l) e.argmax[static_cast<std::size_t>(i * n + l)] = m.argmax[static_cast<std::size_t>(l)];
    }
  }
  if (prob.epsilon > 0.0) e.barrier += prob.epsilon * (v.flat() - prob.anchor->flat());
  return e;
}

}  // namespace detail

inline RegimeField obstacle_residual(const RegimeField& v, const ObstacleProblem& prob) {
  prob.validate();
  prob.system->check_shape(v);
  detail::ObstacleEval e = detail::eval_obstacle(prob, v);
  return RegimeField(v.regimes(), v.nodes(), e.f.cwiseMin(e.barrier));
}

/// Semismooth Newton on the obstacle problem. Row (i,l) of the slant is the F
/// row when F_i(v)_l <= B_i(v)_l (ties to F), otherwise the obstacle row.
inline SolveResult solve_obstacle(const ObstacleProblem& prob, const RegimeField& initial,
                                  const NewtonConfig& cfg = {}) {
  prob.validate();
  prob.system->check_shape(initial);
  const Index n = initial.nodes();
  auto residual = [&](const RegimeField& v) {
    detail::ObstacleEval e = detail::eval_obstacle(prob, v);
    return Eigen::VectorXd(e.f.cwiseMin(e.barrier));
  };
  auto slant = [&](const RegimeField& v) {
    detail::ObstacleEval e = detail::eval_obstacle(prob, v);
    SparseMatrix jf = prob.system->slant_flat(v.flat());
    std::vector<Triplet> trips;
    trips.reserve(static_cast<std::size_t>(jf.nonZeros() + 2 * v.size()));
    for (Index r = 0; r < v.size(); ++r) {
      if (e.f[r] <= e.barrier[r]) {
        for (SparseMatrix::InnerIterator it(jf, r); it; ++it) trips.emplace_back(r, it.col(), it.value());
      } else {
        trips.emplace_back(r, r, 1.0 + prob.epsilon);
        if (prob.costs) {
          const Index j = e.argmax[static_cast<std::size_t>(r)];
          trips.emplace_back(r, j * n + r % n, -1.0);
        }
      }
    }
    SparseMatrix out(v.size(), v.size());
    out.setFromTriplets(trips.begin(), trips.end());
    return out;
  };
  return detail::newton_loop(initial, residual, slant, detail::no_floor, cfg, "solve_obstacle");
}

}  // namespace qvi
