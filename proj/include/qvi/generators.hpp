#pragma once

#include <algorithm>
#include <limits>
#include <memory>
#include <random>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "qvi/monotone_system.hpp"
#include "qvi/regime_field.hpp"

// Random instance generators and property probes shared by the test suites
// and the `verify` command.
namespace qvi::gen {

using Rng = std::mt19937_64;

inline RegimeField random_field(Index regimes, Index nodes, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> unif(lo, hi);
  Eigen::VectorXd v(regimes * nodes);
  for (Index k = 0; k < v.size(); ++k) v[k] = unif(rng);
  return RegimeField(regimes, nodes, std::move(v));
}

/// Random affine F(u) = A u - b that is monotone with constant `gamma`: A has
/// nonpositive off-diagonal entries (nearest neighbours within a regime and
/// the same node in other regimes) and every row sums to at least gamma.
inline std::shared_ptr<const AffineSystem> random_affine_system(Index regimes, Index nodes, double gamma,
                                                                Rng& rng, double rhs_scale = 1.0) {
  std::uniform_real_distribution<double> off(0.0, 1.0);
  std::uniform_real_distribution<double> extra(0.0, 0.5);
  std::uniform_real_distribution<double> rhs(-rhs_scale, rhs_scale);
  const Index n = regimes * nodes;
  std::vector<Triplet> trips;
  for (Index i = 0; i < regimes; ++i) {
    for (Index l = 0; l < nodes; ++l) {
      const Index row = i * nodes + l;
      double sum = 0.0;
      auto add = [&](Index col) {
        const double v = off(rng);
        trips.emplace_back(row, col, -v);
        sum += v;
      };
      if (l > 0) add(row - 1);
      if (l + 1 < nodes) add(row + 1);
      for (Index j = 0; j < regimes; ++j)
        if (j != i && off(rng) < 0.5) add(j * nodes + l);
      trips.emplace_back(row, row, sum + gamma + extra(rng));
    }
  }
  SparseMatrix a(n, n);
  a.setFromTriplets(trips.begin(), trips.end());
  Eigen::VectorXd b(n);
  for (Index k = 0; k < n; ++k) b[k] = rhs(rng);
  return std::make_shared<const AffineSystem>(regimes, nodes, std::move(a), std::move(b), gamma);
}

/// Concave min-of-two-policies system built from two random monotone affine maps.
inline std::shared_ptr<const PolicyMinSystem> random_policy_system(Index regimes, Index nodes, double gamma,
                                                                   Rng& rng) {
  auto p = random_affine_system(regimes, nodes, gamma, rng);
  auto q = random_affine_system(regimes, nodes, gamma, rng);
  return std::make_shared<const PolicyMinSystem>(regimes, nodes, std::vector<SparseMatrix>{p->matrix(), q->matrix()},
                                                 std::vector<Eigen::VectorXd>{p->rhs(), q->rhs()}, gamma);
}

/// Smallest margin F_i(u)_l - F_i(v)_l - gamma (u^i_l - v^i_l) at the maximizing
/// index of u - v, over `pairs` random pairs with entries in [-spread, spread].
/// Pairs are ordered so that max(u - v) >= 0. A negative return value is a
/// violation.
inline double monotonicity_margin(const MonotoneSystem& system, int pairs, double spread, Rng& rng) {
  double worst = std::numeric_limits<double>::infinity();
  for (int k = 0; k < pairs; ++k) {
    RegimeField u = random_field(system.regimes(), system.nodes(), -spread, spread, rng);
    RegimeField v = random_field(system.regimes(), system.nodes(), -spread, spread, rng);
    Eigen::Index arg = 0;
    if ((u.flat() - v.flat()).maxCoeff() < 0.0) std::swap(u, v);
    (u.flat() - v.flat()).maxCoeff(&arg);
    const double diff = u.flat()[arg] - v.flat()[arg];
    const double df = system.evaluate_flat(u.flat())[arg] - system.evaluate_flat(v.flat())[arg];
    worst = std::min(worst, df - system.gamma() * diff);
  }
  return worst;
}

/// Smallest value of F(u + L) - F(u) - gamma L over random u.
inline double translation_margin(const MonotoneSystem& system, double shift, int samples, double spread, Rng& rng) {
  double worst = std::numeric_limits<double>::infinity();
  for (int k = 0; k < samples; ++k) {
    const RegimeField u = random_field(system.regimes(), system.nodes(), -spread, spread, rng);
    const Eigen::VectorXd d =
        system.evaluate_flat(u.flat().array() + shift) - system.evaluate_flat(u.flat());
    worst = std::min(worst, (d.array() - system.gamma() * shift).minCoeff());
  }
  return worst;
}

}  // namespace qvi::gen
