#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "qvi/errors.hpp"
#include "qvi/monotone_system.hpp"

namespace qvi::pde {

/// One linear piece of a running reward: value offset + slope * x on (left, right].
struct RewardPiece {
  double left;
  double right;
  double offset;
  double slope;
};

/// Piecewise-linear running reward l(x). Intervals are left-open and
/// right-closed; the first piece containing x wins; zero elsewhere.
class RewardFunction {
public:
  enum class Kind { two_regime, three_regime, custom };

  RewardFunction() = default;
  RewardFunction(Kind kind, std::vector<RewardPiece> pieces) : kind_(kind), pieces_(std::move(pieces)) {
    for (const auto& p : pieces_)
      if (!(p.left < p.right)) throw InvalidInput("RewardFunction: piece needs left < right");
  }

  /// l(x) = 2 (1 - x) on (0.75, 1].
  static RewardFunction two_regime() { return {Kind::two_regime, {{0.75, 1.0, 2.0, -2.0}}}; }

  /// The five-piece reward with kinks at 0.5, 1 and 1.5, zero beyond 1.75.
  static RewardFunction three_regime() {
    return {Kind::three_regime,
            {{0.0, 0.5, 0.5, -1.0}, {0.5, 1.0, -0.5, 1.0}, {1.0, 1.5, 1.5, -1.0}, {1.5, 1.75, -1.5, 1.0}}};
  }

  static RewardFunction custom(std::vector<RewardPiece> pieces) { return {Kind::custom, std::move(pieces)}; }

  double operator()(double x) const {
    for (const auto& p : pieces_)
      if (x > p.left && x <= p.right) return p.offset + p.slope * x;
    return 0.0;
  }

  Kind kind() const noexcept { return kind_; }
  const std::vector<RewardPiece>& pieces() const noexcept { return pieces_; }

private:
  Kind kind_ = Kind::two_regime;
  std::vector<RewardPiece> pieces_;
};

/// Infinite-horizon switching problem for the controlled state
///   dX = (r + nu(i)(mu - r)) X dt + sigma nu(i) X dB,   nu(i) = i / (d - 1) (zero-based i),
/// localized to [0, domain_right) with u = 0 at the right end.
struct PdeParams {
  double sigma_vol = 0.2;
  double mu_drift = 0.06;
  double r = 0.02;
  Index regimes = 2;
  double domain_right = 2.0;
  Index nodes = 100;
  RewardFunction reward = RewardFunction::two_regime();

  double h() const { return domain_right / static_cast<double>(nodes); }
  double x(Index l) const { return static_cast<double>(l) * h(); }
  double nu(Index i) const { return static_cast<double>(i) / static_cast<double>(regimes - 1); }

  void validate() const {
    if (!(sigma_vol > 0.0)) throw InvalidInput("PdeParams: sigma must be > 0");
    if (!(r > 0.0)) throw InvalidInput("PdeParams: r must be > 0");
    if (regimes < 2) throw InvalidInput("PdeParams: need at least 2 regimes");
    if (nodes < 2) throw InvalidInput("PdeParams: need at least 2 nodes");
    if (!(domain_right > 0.0)) throw InvalidInput("PdeParams: domain must have positive length");
    // Forward differencing is upwind only for a nonnegative drift.
    for (Index i = 0; i < regimes; ++i)
      if (r + nu(i) * (mu_drift - r) < 0.0) throw InvalidInput("PdeParams: drift must be nonnegative");
  }

  static PdeParams two_regime() { return {}; }

  static PdeParams three_regime() {
    PdeParams p;
    p.regimes = 3;
    p.reward = RewardFunction::three_regime();
    return p;
  }
};

/// l(x_l) on the grid x_l = l h, l = 0..N-1.
inline Eigen::VectorXd reward_values(const PdeParams& params) {
  Eigen::VectorXd out(params.nodes);
  for (Index l = 0; l < params.nodes; ++l) out[l] = params.reward(params.x(l));
  return out;
}

/// Builds F_i(u)_l = -1/2 sigma^2 nu_i^2 x_l^2 D2 u^i_l - (r + nu_i (mu - r)) x_l D+ u^i_l + r u^i_l - l(x_l)
/// with central second differences, forward first differences and the ghost
/// value u_N = 0. The result is affine with gamma = r.
inline std::shared_ptr<const AffineSystem> assemble(const PdeParams& params) {
  params.validate();
  const Index d = params.regimes, n = params.nodes;
  const double h = params.h();
  std::vector<Triplet> trips;
  trips.reserve(static_cast<std::size_t>(3 * d * n));
  for (Index i = 0; i < d; ++i) {
    const double nu = params.nu(i);
    for (Index l = 0; l < n; ++l) {
      const double x = params.x(l);
      const double diff = 0.5 * params.sigma_vol * params.sigma_vol * nu * nu * x * x / (h * h);
      const double drift = (params.r + nu * (params.mu_drift - params.r)) * x / h;
      const Index row = i * n + l;
      trips.emplace_back(row, row, 2.0 * diff + drift + params.r);
      if (l > 0 && diff != 0.0) trips.emplace_back(row, row - 1, -diff);
      if (l + 1 < n && diff + drift != 0.0) trips.emplace_back(row, row + 1, -(diff + drift));
    }
  }
  SparseMatrix a(d * n, d * n);
  a.setFromTriplets(trips.begin(), trips.end());
  Eigen::VectorXd b(d * n);
  const Eigen::VectorXd ell = reward_values(params);
  for (Index i = 0; i < d; ++i) b.segment(i * n, n) = ell;
  return std::make_shared<const AffineSystem>(d, n, std::move(a), std::move(b), params.r);
}

}  // namespace qvi::pde
