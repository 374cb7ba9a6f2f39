#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "qvi/errors.hpp"
#include "qvi/monotone_system.hpp"
#include "qvi/newton.hpp"
#include "qvi/qvi_core.hpp"
#include "qvi/regime_field.hpp"
#include "qvi/switching_costs.hpp"

namespace qvi {

// ---------------------------------------------------------------------------
// Error-bound constants
// ---------------------------------------------------------------------------

/// sup_{||u|| <= R} ||F(u)||, estimated from the "sign corners" u = +-R sign(row r
/// of the slant at 0) for every row r, plus `samples` uniform draws from the
/// ball, times `safety`. For affine F the corner evaluation alone is exact.
inline double estimate_sup_on_ball(const MonotoneSystem& system, double radius, int samples = 1000,
                                   double safety = 1.1, std::uint64_t seed = 20190101) {
  const Index size = system.size();
  double best = system.norm_F0();
  const SparseMatrix j0 = system.slant_flat(Eigen::VectorXd::Zero(size));
  Eigen::VectorXd corner(size);
  for (Index r = 0; r < size; ++r) {
    corner.setZero();
    for (SparseMatrix::InnerIterator it(j0, r); it; ++it)
      corner[it.col()] = it.value() >= 0.0 ? radius : -radius;
    best = std::max(best, sup_norm(system.evaluate_flat(corner)));
    best = std::max(best, sup_norm(system.evaluate_flat(-corner)));
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-radius, radius);
  Eigen::VectorXd u(size);
  for (int s = 0; s < samples; ++s) {
    for (Index k = 0; k < size; ++k) u[k] = unif(rng);
    best = std::max(best, sup_norm(system.evaluate_flat(u)));
  }
  return safety * best;
}

/// Constants of the regularization error estimates for a margin kappa in (0, c).
struct ErrorConstants {
  enum class Mode { iterated_stopping, time_marching };

  double kappa = 0.0;
  double L_kappa = 0.0;  // (2 ||F(0)|| + kappa) / gamma
  double mu = 0.0;       // contraction factor
  double C = 0.0;        // sup of ||F|| over the a-priori ball
  double epsilon = 0.0;  // pseudo-time parameter (time-marching only)
  Mode mode = Mode::iterated_stopping;
  double cost = 0.0;     // smallest off-diagonal switching cost
  double norm_F0 = 0.0;
  double gamma = 0.0;

  /// mu = min(1, gamma kappa / (2 ||F(0)|| + kappa)).
  static ErrorConstants iterated_stopping(const MonotoneSystem& system, const SwitchingCosts& costs,
                                          std::optional<double> kappa = std::nullopt,
                                          std::optional<double> C = std::nullopt) {
    ErrorConstants k = common(system, costs, kappa, C);
    k.mode = Mode::iterated_stopping;
    k.mu = std::min(1.0, k.gamma * k.kappa / (2.0 * k.norm_F0 + k.kappa));
    return k;
  }

  /// mu = kappa / (kappa + eps L_kappa).
  static ErrorConstants time_marching(const MonotoneSystem& system, const SwitchingCosts& costs,
                                      double epsilon, std::optional<double> kappa = std::nullopt,
                                      std::optional<double> C = std::nullopt) {
    if (!(epsilon > 0.0)) throw InvalidInput("ErrorConstants: epsilon must be > 0");
    ErrorConstants k = common(system, costs, kappa, C);
    k.mode = Mode::time_marching;
    k.epsilon = epsilon;
    k.mu = k.kappa / (k.kappa + epsilon * k.L_kappa);
    return k;
  }

  /// L_kappa (1 - mu)^n / mu, with 0^0 = 1.
  double regularization_bound(int n) const {
    const double q = 1.0 - mu;
    const double p = (n == 0) ? 1.0 : std::pow(q, n);
    return L_kappa * p / mu;
  }

private:
  static ErrorConstants common(const MonotoneSystem& system, const SwitchingCosts& costs,
                               std::optional<double> kappa, std::optional<double> C) {
    if (costs.regimes() != system.regimes()) throw InvalidInput("ErrorConstants: dimension mismatch");
    ErrorConstants k;
    k.cost = costs.min_off_diagonal();
    if (!(k.cost > 0.0)) throw InvalidInput("ErrorConstants: switching costs must be > 0");
    k.kappa = kappa.value_or(0.5 * k.cost);  // midpoint of (0, c) by default
    if (!(k.kappa > 0.0 && k.kappa < k.cost)) throw InvalidInput("ErrorConstants: kappa must lie in (0, c)");
    k.norm_F0 = system.norm_F0();
    k.gamma = system.gamma();
    k.L_kappa = (2.0 * k.norm_F0 + k.kappa) / k.gamma;
    k.C = C.value_or(estimate_sup_on_ball(system, a_priori_bound(system)));
    if (!(k.C >= k.norm_F0) || !std::isfinite(k.C)) throw InvalidInput("ErrorConstants: need finite C >= ||F(0)||");
    return k;
  }
};

// ---------------------------------------------------------------------------
// phi(x) = nu a^x + b x over nonnegative integers
// ---------------------------------------------------------------------------

struct PhiMinimum {
  long n_star = 0;
  double minimum = 0.0;  // exact min over n in {0, 1, 2, ...}
  double bound = 0.0;    // closed-form upper bound on the minimum
};

/// Minimizes phi(n) = nu a^n + b n, 0 < a < 1, b, nu > 0. phi is convex, so the
/// integer minimizer is 0 or a neighbour of the continuous minimizer
/// x* = log_a(-b / (nu ln a)). The closed-form bound is nu when x* <= 0 and
/// -a b / ln a + b (x* + 1) otherwise.
inline PhiMinimum phi_minimize(double nu, double a, double b) {
  if (!(a > 0.0 && a < 1.0)) throw InvalidInput("phi_minimize: need 0 < a < 1");
  if (!(b > 0.0) || !std::isfinite(b)) throw InvalidInput("phi_minimize: need b > 0");
  if (!(nu > 0.0) || !std::isfinite(nu)) throw InvalidInput("phi_minimize: need nu > 0");

  const double ln_a = std::log(a);
  auto phi = [&](double n) { return nu * std::pow(a, n) + b * n; };
  const double ratio = -b / (nu * ln_a);

  PhiMinimum out;
  if (ratio >= 1.0) {
    out.n_star = 0;
    out.minimum = nu;
    out.bound = nu;
    return out;
  }
  const double x_star = std::log(ratio) / ln_a;
  out.bound = -a * b / ln_a + b * (x_star + 1.0);
  out.n_star = 0;
  out.minimum = phi(0.0);
  const double fl = std::floor(x_star);
  for (double n : {fl, fl + 1.0}) {
    if (n < 0.0) continue;
    const double v = phi(n);
    if (v < out.minimum) {
      out.minimum = v;
      out.n_star = static_cast<long>(n);
    }
  }
  return out;
}

/// Upper bound on ||u - u^rho|| from minimizing
///   L_kappa (1 - mu)^n / mu + (1/eps) (C / (tau rho))^sigma n
/// over n (the 1/eps factor only in time-marching mode). Zero when c > 2 ||F(0)|| / gamma,
/// where the penalized and exact solutions coincide.
inline double penalty_error_bound(const ErrorConstants& k, double rho, double sigma = 1.0, double tau = 1.0) {
  if (!(rho > 0.0)) throw InvalidInput("penalty_error_bound: rho must be > 0");
  if (k.cost > 2.0 * k.norm_F0 / k.gamma) return 0.0;
  double b = std::pow(k.C / (tau * rho), sigma);
  if (k.mode == ErrorConstants::Mode::time_marching) b /= k.epsilon;
  if (k.mu >= 1.0) return std::min(k.L_kappa, b);  // (1 - mu)^n vanishes for n >= 1
  return phi_minimize(k.L_kappa / k.mu, 1.0 - k.mu, b).minimum;
}

// ---------------------------------------------------------------------------
// Strict supersolution
// ---------------------------------------------------------------------------

/// Solution w of min(F_i(w) - kappa, w^i - max_{j != i}(w^j - (c^{i,j} - kappa))) = 0,
/// i.e. min(F_i(w), w^i - M_i w) = kappa, computed by a large-rho penalty solve
/// of the shifted problem.
inline RegimeField strict_supersolution(const SystemPtr& system, const SwitchingCosts& costs, double kappa,
                                        double rho = 1e6, const NewtonConfig& cfg = {}) {
  if (!(kappa > 0.0)) throw InvalidInput("strict_supersolution: kappa must be > 0");
  if (!(kappa < costs.min_off_diagonal()))
    throw InvalidInput("strict_supersolution: kappa must be smaller than every switching cost");
  auto shifted = std::make_shared<const ShiftedSystem>(system, kappa);
  PenalizedProblem prob(shifted, costs.shifted(kappa), rho);
  const RegimeField start = root_of(*shifted, cfg);
  return solve_penalized(prob, start, cfg).solution;
}

// ---------------------------------------------------------------------------
// Regularization operators
// ---------------------------------------------------------------------------

/// Iterated optimal stopping: Qu solves min(F_i(Qu), (Qu)^i - M_i u) = 0.
inline RegimeField apply_Q(const RegimeField& u, const SystemPtr& system, const SwitchingCosts& costs,
                           const NewtonConfig& cfg = {}) {
  system->check_shape(u);
  check_costs(u, costs);
  if (!costs.all_positive()) throw InvalidInput("apply_Q: switching costs must be > 0");
  return solve_obstacle(ObstacleProblem::fixed(system, obstacle_field(u, costs)), u, cfg).solution;
}

/// Time marching: Tu solves min(F_i(Tu), (Tu)^i - M_i(Tu) + eps ((Tu)^i - u^i)) = 0.
inline RegimeField apply_T(const RegimeField& u, const SystemPtr& system, const SwitchingCosts& costs,
                           double epsilon, const NewtonConfig& cfg = {}) {
  system->check_shape(u);
  check_costs(u, costs);
  if (!(epsilon > 0.0)) throw InvalidInput("apply_T: epsilon must be > 0");
  if (!costs.all_positive()) throw InvalidInput("apply_T: switching costs must be > 0");
  return solve_obstacle(ObstacleProblem::time_marching(system, costs, epsilon, u), u, cfg).solution;
}

/// Q^rho u solves F_i(v) - rho sum_{j != i} pi(u^j - c^{i,j} - v^i) = 0.
inline RegimeField apply_Q_rho(const RegimeField& u, const PenalizedProblem& prob, const NewtonConfig& cfg = {}) {
  detail::Coupling cp{detail::Coupling::Kind::frozen, &u, 0.0};
  return detail::solve_penalized_coupled(prob, cp, u, cfg, "apply_Q_rho").solution;
}

/// T^rho u solves F_i(v) - rho sum_{j != i} pi(v^j - c^{i,j} - v^i - eps (v^i - u^i)) = 0.
inline RegimeField apply_T_rho(const RegimeField& u, const PenalizedProblem& prob, double epsilon,
                               const NewtonConfig& cfg = {}) {
  if (!(epsilon >= 0.0)) throw InvalidInput("apply_T_rho: epsilon must be >= 0");
  detail::Coupling cp{detail::Coupling::Kind::march, &u, epsilon};
  return detail::solve_penalized_coupled(prob, cp, u, cfg, "apply_T_rho").solution;
}

struct FixedPointResult {
  RegimeField field;
  int sweeps = 0;
  std::vector<double> increments;  // ||u^n - u^{n-1}|| per sweep
  bool converged = false;
  /// Sweeps (1-based) where some component decreased by more than 1e-8.
  std::vector<int> non_monotone_sweeps;
  std::vector<RegimeField> history;  // u^0, u^1, ... when requested
};

/// Iterates u^n = map(u^{n-1}) until ||u^n - u^{n-1}|| < tol or max_sweeps.
/// Decreasing components are recorded as warnings, not errors.
template <class Map>
FixedPointResult iterate_to_fixed_point(Map&& map, const RegimeField& start, int max_sweeps, double tol,
                                        bool keep_history = false) {
  if (max_sweeps < 0) throw InvalidInput("iterate_to_fixed_point: max_sweeps must be >= 0");
  FixedPointResult out{start, 0, {}, false, {}, {}};
  if (keep_history) out.history.push_back(start);
  for (int n = 1; n <= max_sweeps; ++n) {
    RegimeField next = map(out.field);
    const Eigen::VectorXd diff = next.flat() - out.field.flat();
    const double inc = sup_norm(diff);
    if (diff.size() > 0 && diff.minCoeff() < -1e-8) out.non_monotone_sweeps.push_back(n);
    out.increments.push_back(inc);
    out.field = std::move(next);
    out.sweeps = n;
    if (keep_history) out.history.push_back(out.field);
    if (inc < tol) {
      out.converged = true;
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Zero switching cost
// ---------------------------------------------------------------------------

struct HjbLimitResult {
  Eigen::VectorXd collapsed;            // regime-wise maximum of the last solve
  std::vector<double> rhos;
  std::vector<RegimeField> solutions;   // one per rho
  std::vector<SolveReport> reports;
  std::vector<double> regime_gaps;      // max_{i,j} ||u^{rho,i} - u^{rho,j}||
  SolveReport report;                   // last solve
};

/// Penalized problem with c = 0 along an increasing rho schedule. Every solve
/// starts from the root of F. The limit min_i F_i(u, ..., u) = 0 is approached
/// from below, so the regime-wise maximum is returned as the estimate.
inline HjbLimitResult hjb_limit_solve(const SystemPtr& system, const std::vector<double>& rho_schedule,
                                      const NewtonConfig& cfg = {}) {
  if (rho_schedule.empty()) throw InvalidInput("hjb_limit_solve: empty rho schedule");
  for (std::size_t k = 1; k < rho_schedule.size(); ++k)
    if (!(rho_schedule[k] > rho_schedule[k - 1])) throw InvalidInput("hjb_limit_solve: rho schedule must increase");

  const RegimeField u0 = root_of(*system, cfg);
  const SwitchingCosts zero = SwitchingCosts::uniform(system->regimes(), 0.0);
  HjbLimitResult out;
  for (double rho : rho_schedule) {
    SolveResult s = solve_penalized(PenalizedProblem(system, zero, rho), u0, cfg);
    out.rhos.push_back(rho);
    out.regime_gaps.push_back(regime_gap(s.solution));
    out.reports.push_back(s.report);
    out.solutions.push_back(std::move(s.solution));
  }
  const RegimeField& last = out.solutions.back();
  out.collapsed = last.regime(0);
  for (Index i = 1; i < last.regimes(); ++i) out.collapsed = out.collapsed.cwiseMax(Eigen::VectorXd(last.regime(i)));
  out.report = out.reports.back();
  return out;
}

struct GapCheck {
  bool ok = true;
  double max_gap = 0.0;   // max of u^rho - u^{c,rho}
  double min_gap = 0.0;   // min of u^rho - u^{c,rho}
  double bound = 0.0;     // (d - 1) c rho / gamma
  std::optional<std::pair<Index, Index>> violation;  // (regime, node)
};

/// Checks 0 <= u^rho - u^{c,rho} <= (d - 1) c rho / gamma componentwise (pi(y) = y^+).
inline GapCheck zero_cost_gap_bound(const RegimeField& u_c_rho, const RegimeField& u_rho, double c, double rho,
                                    double gamma, double tol = 1e-8) {
  if (!u_c_rho.same_shape(u_rho)) throw InvalidInput("zero_cost_gap_bound: shape mismatch");
  GapCheck out;
  out.bound = static_cast<double>(u_rho.regimes() - 1) * c * rho / gamma;
  const RegimeField gap = u_rho - u_c_rho;
  out.max_gap = gap.flat().maxCoeff();
  out.min_gap = gap.flat().minCoeff();
  for (Index i = 0; i < gap.regimes() && out.ok; ++i) {
    for (Index l = 0; l < gap.nodes(); ++l) {
      if (gap(i, l) < -tol || gap(i, l) > out.bound + tol) {
        out.ok = false;
        out.violation = std::make_pair(i, l);
        break;
      }
    }
  }
  return out;
}

}  // namespace qvi
