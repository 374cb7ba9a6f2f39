#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "qvi/errors.hpp"
#include "qvi/monotone_system.hpp"
#include "qvi/penalty.hpp"
#include "qvi/regime_field.hpp"
#include "qvi/switching_costs.hpp"

namespace qvi {

/// The penalized equation
///   G^rho_i(u)_l = F_i(u)_l - rho * sum_{j != i} pi(u^j_l - c^{i,j} - u^i_l) = 0.
struct PenalizedProblem {
  SystemPtr system;
  SwitchingCosts costs;
  double rho = 0.0;
  PowerPenalty penalty{};

  PenalizedProblem(SystemPtr sys, SwitchingCosts c, double rho_, PowerPenalty pen = PowerPenalty{})
      : system(std::move(sys)), costs(std::move(c)), rho(rho_), penalty(pen) {
    if (!system) throw InvalidInput("PenalizedProblem: null system");
    if (!(rho >= 0.0) || !std::isfinite(rho)) throw InvalidInput("PenalizedProblem: rho must be >= 0");
    if (costs.regimes() != system->regimes())
      throw InvalidInput("PenalizedProblem: cost matrix and system disagree on regime count");
  }

  PenalizedProblem with_rho(double r) const { return {system, costs, r, penalty}; }
};

/// Obstacle M_i u = max_{j != i}(u^j - c^{i,j}) with the maximizing regime per node.
struct Intervention {
  Eigen::VectorXd values;
  std::vector<Index> argmax;
};

inline void check_costs(const RegimeField& u, const SwitchingCosts& costs) {
  if (u.regimes() != costs.regimes()) {
    throw InvalidInput("dimension mismatch: field has " + std::to_string(u.regimes()) +
                       " regimes, cost matrix has " + std::to_string(costs.regimes()));
  }
}

/// Ties go to the lowest regime index.
inline Intervention intervention(const RegimeField& u, const SwitchingCosts& costs, Index i) {
  check_costs(u, costs);
  if (i < 0 || i >= u.regimes()) throw InvalidInput("intervention: regime index out of range");
  const Index n = u.nodes();
  Intervention out{Eigen::VectorXd(n), std::vector<Index>(static_cast<std::size_t>(n), -1)};
  for (Index l = 0; l < n; ++l) {
    double best = -std::numeric_limits<double>::infinity();
    Index arg = -1;
    for (Index j = 0; j < u.regimes(); ++j) {
      if (j == i) continue;
      const double v = u(j, l) - costs(i, j);
      if (v > best) {
        best = v;
        arg = j;
      }
    }
    out.values[l] = best;
    out.argmax[static_cast<std::size_t>(l)] = arg;
  }
  return out;
}

/// All obstacles M_1 u, ..., M_d u stacked as a field.
inline RegimeField obstacle_field(const RegimeField& u, const SwitchingCosts& costs) {
  RegimeField out(u.regimes(), u.nodes());
  for (Index i = 0; i < u.regimes(); ++i) out.regime(i) = intervention(u, costs, i).values;
  return out;
}

/// G_i(u) = min(F_i(u), u^i - M_i u). Only meaningful for strictly positive costs.
inline RegimeField qvi_residual(const RegimeField& u, const MonotoneSystem& system,
                                const SwitchingCosts& costs) {
  system.check_shape(u);
  check_costs(u, costs);
  if (!costs.all_positive()) {
    throw InvalidInput("qvi_residual: switching costs must be > 0; use the zero-cost (HJB) path for c = 0");
  }
  RegimeField f = system.evaluate(u);
  RegimeField g = u - obstacle_field(u, costs);
  f.flat() = f.flat().cwiseMin(g.flat());
  return f;
}

namespace detail {

/// How the penalty argument y_{i,j,l} couples to the unknown v.
///   self:   y = v^j - c - v^i                          (the penalized equation)
///   frozen: y = w^j - c - v^i                          (auxiliary iteration Q^rho)
///   march:  y = v^j - c - v^i - eps (v^i - w^i)       (auxiliary iteration T^rho)
struct Coupling {
  enum class Kind { self, frozen, march };
  Kind kind = Kind::self;
  const RegimeField* anchor = nullptr;
  double epsilon = 0.0;
};

inline double penalty_argument(const RegimeField& v, const SwitchingCosts& costs,
                               const Coupling& cp, Index i, Index j, Index l) {
  switch (cp.kind) {
    case Coupling::Kind::self:
      return v(j, l) - costs(i, j) - v(i, l);
    case Coupling::Kind::frozen:
      return (*cp.anchor)(j, l) - costs(i, j) - v(i, l);
    case Coupling::Kind::march:
      return v(j, l) - costs(i, j) - v(i, l) - cp.epsilon * (v(i, l) - (*cp.anchor)(i, l));
  }
  return 0.0;
}

inline void check_coupling(const RegimeField& v, const Coupling& cp) {
  if (cp.kind == Coupling::Kind::self) return;
  if (cp.anchor == nullptr || !cp.anchor->same_shape(v))
    throw InvalidInput("penalized residual: anchor field missing or of wrong shape");
}

inline Eigen::VectorXd penalized_residual_flat(const RegimeField& v, const PenalizedProblem& prob,
                                               const Coupling& cp) {
  prob.system->check_shape(v);
  check_costs(v, prob.costs);
  check_coupling(v, cp);
  Eigen::VectorXd g = prob.system->evaluate_flat(v.flat());
  if (prob.rho == 0.0) return g;
  const Index d = v.regimes(), n = v.nodes();
  for (Index i = 0; i < d; ++i) {
    for (Index l = 0; l < n; ++l) {
      double s = 0.0;
      for (Index j = 0; j < d; ++j)
        if (j != i) s += prob.penalty(penalty_argument(v, prob.costs, cp, i, j, l));
      g[i * n + l] -= prob.rho * s;
    }
  }
  return g;
}

inline SparseMatrix penalized_slant_flat(const RegimeField& v, const PenalizedProblem& prob,
                                         const Coupling& cp) {
  prob.system->check_shape(v);
  check_costs(v, prob.costs);
  check_coupling(v, cp);
  if (!prob.penalty.is_linear()) {
    throw UnsupportedPenaltyDegree("penalized slant requires penalty degree sigma = 1, got " +
                                   std::to_string(prob.penalty.sigma()));
  }
  SparseMatrix base = prob.system->slant_flat(v.flat());
  if (prob.rho == 0.0) return base;

  const Index d = v.regimes(), n = v.nodes();
  std::vector<Triplet> trips;
  trips.reserve(static_cast<std::size_t>(base.nonZeros() + 2 * d * d * n));
  for (Index r = 0; r < base.outerSize(); ++r)
    for (SparseMatrix::InnerIterator it(base, r); it; ++it) trips.emplace_back(r, it.col(), it.value());

  const double diag_scale = cp.kind == Coupling::Kind::march ? 1.0 + cp.epsilon : 1.0;
  for (Index i = 0; i < d; ++i) {
    for (Index l = 0; l < n; ++l) {
      const Index row = i * n + l;
      for (Index j = 0; j < d; ++j) {
        if (j == i) continue;
        const double y = penalty_argument(v, prob.costs, cp, i, j, l);
        const double h = prob.penalty.subderivative(y);
        if (h == 0.0) continue;
        trips.emplace_back(row, row, prob.rho * h * diag_scale);
        if (cp.kind != Coupling::Kind::frozen) trips.emplace_back(row, j * n + l, -prob.rho * h);
      }
    }
  }
  SparseMatrix out(d * n, d * n);
  out.setFromTriplets(trips.begin(), trips.end());
  return out;
}

}  // namespace detail

/// G^rho(u). At rho = 0 this is F(u).
inline RegimeField penalized_residual(const RegimeField& u, const PenalizedProblem& prob) {
  return RegimeField(u.regimes(), u.nodes(), detail::penalized_residual_flat(u, prob, {}));
}

/// Generalized derivative of G^rho at u: slant of F plus, for every active
/// pair (u^j_l - c^{i,j} - u^i_l > 0), +rho on the (i,l) diagonal and -rho at
/// column (j,l). Requires sigma = 1.
inline SparseMatrix penalized_slant(const RegimeField& u, const PenalizedProblem& prob) {
  return detail::penalized_slant_flat(u, prob, {});
}

/// ||F(0)|| / gamma, the rho- and c-independent bound on every penalized solution.
inline double a_priori_bound(const MonotoneSystem& system) {
  return system.norm_F0() / system.gamma();
}

}  // namespace qvi
