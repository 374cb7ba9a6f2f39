#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Dense>

#include "qvi/errors.hpp"
#include "qvi/qvi_core.hpp"
#include "qvi/regime_field.hpp"

// Slow reference solvers. They share nothing with the Newton path beyond
// residual evaluation.
namespace qvi::oracle {

struct PseudoTimeOptions {
  double tol = 1e-10;            // residual sup-norm target
  long max_steps = 50'000'000;
  double initial_step = 0.0;     // 0: pick 0.9 / (max diagonal + rho (d-1) max pi')
  int max_halvings = 10;
  int divergence_window = 100;
};

struct PseudoTimeResult {
  RegimeField solution;
  long steps = 0;
  double step_size = 0.0;
  int halvings = 0;
  double final_residual = 0.0;
};

/// Explicit pseudo-time marching u <- u - delta G^rho(u). Works for every
/// penalty degree. When the residual grows for `divergence_window` steps in a
/// row, delta is halved and marching restarts from the best iterate seen.
inline PseudoTimeResult pseudo_time_solve(const PenalizedProblem& prob, const RegimeField& initial,
                                          const PseudoTimeOptions& opt = {}) {
  prob.system->check_shape(initial);
  const Index d = initial.regimes();

  double delta = opt.initial_step;
  if (delta <= 0.0) {
    // Largest diagonal of the slant of F along with the penalty's largest
    // derivative on the a-priori range.
    const SparseMatrix j = prob.system->slant_flat(initial.flat());
    double diag = 0.0;
    for (Index r = 0; r < j.rows(); ++r) diag = std::max(diag, std::abs(j.coeff(r, r)));
    double max_slope = 1.0;
    if (!prob.penalty.is_linear()) {
      const double range = 2.0 * a_priori_bound(*prob.system) + prob.costs.max_off_diagonal() + 1.0;
      max_slope = std::max(prob.penalty.subderivative(range), prob.penalty.subderivative(1e-3 * range));
    }
    delta = 0.9 / (diag + prob.rho * static_cast<double>(d - 1) * max_slope);
  }

  PseudoTimeResult out{initial, 0, delta, 0, 0.0};
  RegimeField u = initial;
  RegimeField best = initial;
  Eigen::VectorXd g = penalized_residual(u, prob).flat();
  double res = sup_norm(g);
  double best_res = res;
  int growth = 0;

  for (long step = 0; step < opt.max_steps; ++step) {
    if (res <= opt.tol) {
      out.solution = u;
      out.steps = step;
      out.step_size = delta;
      out.final_residual = res;
      return out;
    }
    u.flat() -= delta * g;
    if (!u.all_finite()) {
      growth = opt.divergence_window;
    } else {
      g = penalized_residual(u, prob).flat();
      const double next = sup_norm(g);
      growth = next > res ? growth + 1 : 0;
      res = next;
      if (res < best_res) {
        best_res = res;
        best = u;
      }
    }
    if (growth >= opt.divergence_window) {
      if (++out.halvings > opt.max_halvings) {
        throw DivergenceDetected("pseudo_time_solve: residual keeps growing after " +
                                     std::to_string(opt.max_halvings) + " step halvings",
                                 best_res, best.flat());
      }
      delta *= 0.5;
      u = best;
      g = penalized_residual(u, prob).flat();
      res = best_res;
      growth = 0;
    }
  }
  throw MaxStepsExceeded("pseudo_time_solve: no convergence in " + std::to_string(opt.max_steps) + " steps",
                         res, u.flat());
}

/// One (regime i, competitor j, node l) penalty slot.
struct PenaltySlot {
  Index i, j, l;
};

struct EnumerationResult {
  RegimeField solution;
  std::uint64_t pattern = 0;  // bit k set: slot k active
  std::vector<PenaltySlot> slots;
  int consistent_patterns = 0;
};

inline constexpr int kMaxEnumerationBits = 16;

/// Exact solver for affine F and pi(y) = y^+: tries every on/off pattern of
/// the (d-1) d N penalty terms, solves the resulting linear system and keeps
/// the pattern that agrees with its own signs. F is read off as A = slant(0),
/// b = -F(0).
inline EnumerationResult active_set_enumerate(const PenalizedProblem& prob) {
  const MonotoneSystem& sys = *prob.system;
  const Index d = sys.regimes(), n = sys.nodes(), size = d * n;
  if (!prob.penalty.is_linear()) throw UnsupportedPenaltyDegree("active_set_enumerate: needs sigma = 1");

  std::vector<PenaltySlot> slots;
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < d; ++j)
      if (j != i)
        for (Index l = 0; l < n; ++l) slots.push_back({i, j, l});
  if (static_cast<int>(slots.size()) > kMaxEnumerationBits) {
    throw InvalidInput("active_set_enumerate: " + std::to_string(slots.size()) +
                       " penalty slots exceed the enumeration cap of " + std::to_string(kMaxEnumerationBits));
  }

  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(size);
  const Eigen::MatrixXd a = Eigen::MatrixXd(sys.slant_flat(zero));
  const Eigen::VectorXd b = -sys.evaluate_flat(zero);

  const double scale = 1.0 + a_priori_bound(sys) + prob.costs.max_off_diagonal();
  const double sign_tol = 1e-11 * scale;

  std::vector<std::pair<std::uint64_t, Eigen::VectorXd>> accepted;
  const std::uint64_t count = std::uint64_t{1} << slots.size();
  for (std::uint64_t pattern = 0; pattern < count; ++pattern) {
    // Active slot (i,j,l): rows gain rho (u^i_l - u^j_l) and rhs gains -rho c^{i,j}.
    Eigen::MatrixXd m = a;
    Eigen::VectorXd rhs = b;
    for (std::size_t k = 0; k < slots.size(); ++k) {
      if (!(pattern >> k & 1U)) continue;
      const auto& s = slots[k];
      const Index row = s.i * n + s.l;
      m(row, row) += prob.rho;
      m(row, s.j * n + s.l) -= prob.rho;
      rhs[row] -= prob.rho * prob.costs(s.i, s.j);
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(m);
    if (!lu.isInvertible()) continue;
    const Eigen::VectorXd u = lu.solve(rhs);
    bool ok = true;
    for (std::size_t k = 0; k < slots.size() && ok; ++k) {
      const auto& s = slots[k];
      const double y = u[s.j * n + s.l] - prob.costs(s.i, s.j) - u[s.i * n + s.l];
      const bool active = pattern >> k & 1U;
      ok = active ? y >= -sign_tol : y <= sign_tol;
    }
    if (ok) accepted.emplace_back(pattern, u);
  }

  if (accepted.empty()) throw NoConsistentPattern("active_set_enumerate: no sign-consistent pattern");
  // Degenerate ties (y == 0 on some slot) admit several patterns; they must
  // all describe the same solution.
  for (std::size_t k = 1; k < accepted.size(); ++k) {
    if (sup_norm(accepted[k].second - accepted[0].second) > 1e-8 * scale) {
      std::string msg = "active_set_enumerate: patterns with different solutions:";
      for (const auto& [p, _] : accepted) msg += " " + std::to_string(p);
      throw MultiplePatterns(msg);
    }
  }
  return {RegimeField(d, n, accepted[0].second), accepted[0].first, std::move(slots),
          static_cast<int>(accepted.size())};
}

}  // namespace qvi::oracle
