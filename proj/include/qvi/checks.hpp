#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "qvi/generators.hpp"
#include "qvi/newton.hpp"
#include "qvi/oracle.hpp"
#include "qvi/regularize.hpp"
#include "qvi/switching_pde.hpp"

// Property suites shared by the `verify` command and the acceptance binary.
// Every check returns data; nothing here throws on a failed property.
namespace qvi::checks {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

namespace detail {

inline std::string fmt(const char* f, double a) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

inline std::string fmt2(const char* f, double a, double b) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

/// Runs `body`, turning solver exceptions into a failed check.
template <class Body>
CheckResult guarded(const std::string& name, Body&& body) {
  try {
    CheckResult r = body();
    r.name = name;
    return r;
  } catch (const std::exception& e) {
    return {name, false, std::string("exception: ") + e.what()};
  }
}

inline const std::vector<double>& two_regime_rhos() {
  static const std::vector<double> rhos{1e3, 2e3, 4e3, 8e3, 16e3, 32e3};
  return rhos;
}

}  // namespace detail

/// Monotonicity condition on the assembled systems and on random affine and
/// min-of-affine systems, 100 pairs each.
inline CheckResult monotonicity_probes(std::uint64_t seed = 101) {
  return detail::guarded("monotonicity", [&] {
    gen::Rng rng(seed);
    double worst = std::numeric_limits<double>::infinity();
    for (const auto& p : {pde::PdeParams::two_regime(), pde::PdeParams::three_regime()})
      worst = std::min(worst, gen::monotonicity_margin(*pde::assemble(p), 100, 10.0, rng));
    for (int k = 0; k < 10; ++k) {
      const Index d = 2 + k % 2, n = 1 + k % 5;
      worst = std::min(worst, gen::monotonicity_margin(*gen::random_affine_system(d, n, 0.5, rng), 100, 5.0, rng));
      worst = std::min(worst, gen::monotonicity_margin(*gen::random_policy_system(d, n, 0.5, rng), 100, 5.0, rng));
    }
    return CheckResult{"", worst >= -1e-10, detail::fmt("smallest margin %.3g", worst)};
  });
}

/// ||u^rho|| <= ||F(0)|| / gamma on the switching problems.
inline CheckResult a_priori_bound_check() {
  return detail::guarded("a_priori_bound", [&] {
    double worst = -std::numeric_limits<double>::infinity();
    struct Case {
      pde::PdeParams p;
      double c;
      double rho;
    };
    const std::vector<Case> cases{{pde::PdeParams::two_regime(), 0.5, 1e3},
                                  {pde::PdeParams::two_regime(), 1.0 / 128, 32e3},
                                  {pde::PdeParams::two_regime(), 0.0, 32e3},
                                  {pde::PdeParams::three_regime(), 0.25, 4e3},
                                  {pde::PdeParams::three_regime(), 0.0, 128e3}};
    for (const auto& c : cases) {
      auto sys = pde::assemble(c.p);
      const RegimeField u =
          solve_penalized(PenalizedProblem(sys, SwitchingCosts::uniform(c.p.regimes, c.c), c.rho), root_of(*sys))
              .solution;
      worst = std::max(worst, sup_norm(u) - a_priori_bound(*sys));
    }
    return CheckResult{"", worst <= 1e-6, detail::fmt("max ||u|| - bound = %.4g", worst)};
  });
}

/// ||Q^rho u - Q^rho v|| <= ||u - v|| on 100 random pairs.
inline CheckResult q_rho_lipschitz(std::uint64_t seed = 102) {
  return detail::guarded("q_rho_lipschitz", [&] {
    gen::Rng rng(seed);
    double worst = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < 100; ++k) {
      const Index d = 2 + k % 2, n = 1 + k % 4;
      auto sys = gen::random_affine_system(d, n, 0.5, rng);
      const PenalizedProblem prob(sys, SwitchingCosts::uniform(d, 0.1), k % 3 == 0 ? 1.0 : 100.0);
      const RegimeField u = gen::random_field(d, n, -2, 2, rng);
      const RegimeField v = gen::random_field(d, n, -2, 2, rng);
      worst = std::max(worst, sup_norm(apply_Q_rho(u, prob) - apply_Q_rho(v, prob)) - sup_norm(u - v));
    }
    return CheckResult{"", worst <= 1e-8, detail::fmt("max excess over ||u - v||: %.3g", worst)};
  });
}

/// Q is monotone (u >= v => Qu >= Qv), its iterates from u0 increase and
/// stay inside the a-priori ball.
inline CheckResult q_monotone_sweeps(std::uint64_t seed = 103) {
  return detail::guarded("q_monotone_sweeps", [&] {
    gen::Rng rng(seed);
    std::uniform_real_distribution<double> lift(0.0, 1.0);
    double worst = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 30; ++k) {
      const Index d = 2 + k % 2, n = 1 + k % 4;
      auto sys = gen::random_affine_system(d, n, 0.5, rng);
      const SwitchingCosts costs = SwitchingCosts::uniform(d, 0.2);
      const RegimeField v = gen::random_field(d, n, -2, 2, rng);
      const RegimeField u = v + gen::random_field(d, n, 0, 1, rng);
      worst = std::min(worst, (apply_Q(u, sys, costs).flat() - apply_Q(v, sys, costs).flat()).minCoeff());
    }
    auto sys = pde::assemble(pde::PdeParams::two_regime());
    const SwitchingCosts costs = SwitchingCosts::uniform(2, 0.5);
    const auto it = iterate_to_fixed_point([&](const RegimeField& w) { return apply_Q(w, sys, costs); },
                                           root_of(*sys), 10, 0.0, true);
    double bound_excess = -std::numeric_limits<double>::infinity();
    for (const auto& h : it.history) bound_excess = std::max(bound_excess, sup_norm(h) - a_priori_bound(*sys));
    const bool ok = worst >= -1e-8 && it.non_monotone_sweeps.empty() && bound_excess <= 1e-8;
    return CheckResult{"", ok,
                       detail::fmt2("min(Qu - Qv) = %.3g; sweeps outside ball by %.3g", worst, bound_excess) +
                           "; decreasing sweeps: " + std::to_string(it.non_monotone_sweeps.size())};
  });
}

/// Reference for the QVI solution of a switching problem: a rho = 1e6
/// penalty solve plus the one-sided margin 2 ||u^{2e6} - u^{1e6}||.
struct QviReference {
  RegimeField lower;
  double margin = 0.0;
};

inline QviReference qvi_reference(const SystemPtr& sys, const SwitchingCosts& costs) {
  const RegimeField u0 = root_of(*sys);
  RegimeField a = solve_penalized(PenalizedProblem(sys, costs, 1e6), u0).solution;
  const RegimeField b = solve_penalized(PenalizedProblem(sys, costs, 2e6), u0).solution;
  const double margin = 2.0 * sup_norm(b - a);
  return {std::move(a), margin};
}

/// 0 <= u - u^n <= L_kappa (1 - mu)^n / mu for the Q-iterates on the two-regime problem, n = 0..30.
inline CheckResult theorem_q_bound() {
  return detail::guarded("q_iteration_bound", [&] {
    auto sys = pde::assemble(pde::PdeParams::two_regime());
    const SwitchingCosts costs = SwitchingCosts::uniform(2, 0.5);
    const ErrorConstants k = ErrorConstants::iterated_stopping(*sys, costs);
    const QviReference ref = qvi_reference(sys, costs);
    const auto it = iterate_to_fixed_point([&](const RegimeField& w) { return apply_Q(w, sys, costs); },
                                           root_of(*sys), 30, 0.0, true);
    double worst_upper = -std::numeric_limits<double>::infinity();
    double worst_lower = std::numeric_limits<double>::infinity();
    for (std::size_t n = 0; n < it.history.size(); ++n) {
      const Eigen::VectorXd gap = ref.lower.flat() - it.history[n].flat();
      worst_upper = std::max(worst_upper, gap.maxCoeff() + ref.margin - k.regularization_bound(static_cast<int>(n)));
      worst_lower = std::min(worst_lower, gap.minCoeff() + ref.margin);
    }
    const bool ok = worst_upper <= 1e-6 && worst_lower >= -1e-6 && it.history.size() == 31;
    return CheckResult{"", ok,
                       detail::fmt2("max(u - u^n - bound) = %.3g, min(u - u^n) = %.3g", worst_upper, worst_lower) +
                           detail::fmt("; mu = %.4g", k.mu)};
  });
}

/// min(F_i(w), w^i - M_i w) = kappa within 1e-3 kappa, and ||w|| <= (||F(0)|| + kappa) / gamma.
inline CheckResult strict_supersolution_check() {
  return detail::guarded("strict_supersolution", [&] {
    double worst_res = 0.0, worst_norm = -std::numeric_limits<double>::infinity();
    bool ok = true;
    // Hand case: F(u) = gamma u, c = 1, kappa = 1/2 gives w = kappa / gamma.
    {
      SparseMatrix a(4, 4);
      a.setIdentity();
      const double gamma = 0.5;
      auto sys = std::make_shared<const AffineSystem>(2, 2, a * gamma, Eigen::VectorXd::Zero(4), gamma);
      const RegimeField w = strict_supersolution(sys, SwitchingCosts::uniform(2, 1.0), 0.5);
      ok = ok && sup_norm(w - RegimeField(2, 2, 0.5 / gamma)) <= 1e-8;
    }
    for (double c : {0.5, 0.125}) {
      auto sys = pde::assemble(pde::PdeParams::two_regime());
      const SwitchingCosts costs = SwitchingCosts::uniform(2, c);
      const double kappa = c / 2;
      const RegimeField w = strict_supersolution(sys, costs, kappa);
      const double res = sup_norm(qvi_residual(w, *sys, costs) - RegimeField(2, w.nodes(), kappa));
      worst_res = std::max(worst_res, res / kappa);
      worst_norm = std::max(worst_norm, sup_norm(w) - (sys->norm_F0() + kappa) / sys->gamma());
      ok = ok && res <= 10.0 * kappa * 1e-3 && sup_norm(w) <= (sys->norm_F0() + kappa) / sys->gamma() + 1e-8;
    }
    return CheckResult{"", ok, detail::fmt2("max residual / kappa = %.3g; max norm excess %.3g", worst_res, worst_norm)};
  });
}

/// phi_minimize against brute-force scans, and the closed-form bound.
inline CheckResult phi_scan_vs_bound(std::uint64_t seed = 104) {
  return detail::guarded("phi_scan_vs_bound", [&] {
    gen::Rng rng(seed);
    std::uniform_real_distribution<double> lnu(std::log(0.1), std::log(100.0));
    std::uniform_real_distribution<double> ua(0.5, 0.999);
    std::uniform_real_distribution<double> lb(std::log(1e-3), std::log(1.0));
    struct Triple {
      double nu, a, b;
    };
    std::vector<Triple> triples{{1.0, 0.5, 10.0}, {100.0, 0.9, 1e-3}};
    for (int k = 0; k < 60; ++k) triples.push_back({std::exp(lnu(rng)), ua(rng), std::exp(lb(rng))});
    double worst_gap = 0.0, worst_bound = -std::numeric_limits<double>::infinity();
    for (const auto& t : triples) {
      const PhiMinimum m = phi_minimize(t.nu, t.a, t.b);
      double scan = std::numeric_limits<double>::infinity();
      const long top = static_cast<long>(t.nu / t.b) + 2;
      for (long n = 0; n <= top; ++n) scan = std::min(scan, t.nu * std::pow(t.a, n) + t.b * n);
      worst_gap = std::max(worst_gap, std::abs(scan - m.minimum) / (1.0 + scan));
      worst_bound = std::max(worst_bound, (m.minimum - m.bound) / (1.0 + m.bound));
    }
    const bool ok = worst_gap <= 1e-12 && worst_bound <= 1e-12;
    return CheckResult{"", ok, detail::fmt2("scan mismatch %.3g, bound excess %.3g", worst_gap, worst_bound)};
  });
}

/// The penalty-error bound dominates the observed error 2 ||u^{2rho} - u^rho||
/// on the two-regime problem and decreases along rho = 1e3 * 2^k.
inline CheckResult penalty_bound_dominates() {
  return detail::guarded("penalty_error_bound", [&] {
    auto sys = pde::assemble(pde::PdeParams::two_regime());
    const SwitchingCosts costs = SwitchingCosts::uniform(2, 0.5);
    const ErrorConstants k = ErrorConstants::iterated_stopping(*sys, costs);
    const RegimeField u0 = root_of(*sys);
    bool ok = true;
    double worst_ratio = std::numeric_limits<double>::infinity();
    double prev_bound = std::numeric_limits<double>::infinity();
    for (double rho : detail::two_regime_rhos()) {
      const RegimeField a = solve_penalized(PenalizedProblem(sys, costs, rho), u0).solution;
      const RegimeField b = solve_penalized(PenalizedProblem(sys, costs, 2 * rho), u0).solution;
      const double observed = 2.0 * sup_norm(b - a);
      const double bound = penalty_error_bound(k, rho);
      worst_ratio = std::min(worst_ratio, bound / observed);
      ok = ok && bound >= observed && bound <= prev_bound;
      prev_bound = bound;
    }
    return CheckResult{"", ok, detail::fmt("smallest bound / observed = %.3g", worst_ratio)};
  });
}

/// 0 <= u^rho - u^{c,rho} <= (d - 1) c rho / gamma for the smallest nonzero costs of the two-regime table.
inline CheckResult zero_cost_gap_check() {
  return detail::guarded("zero_cost_gap_bound", [&] {
    auto sys = pde::assemble(pde::PdeParams::two_regime());
    const RegimeField u0 = root_of(*sys);
    bool ok = true;
    double largest = 0.0;
    for (double rho : detail::two_regime_rhos()) {
      const RegimeField z = solve_penalized(PenalizedProblem(sys, SwitchingCosts::uniform(2, 0.0), rho), u0).solution;
      for (double c : {1.0 / 512, 1.0 / 2048}) {
        const RegimeField u = solve_penalized(PenalizedProblem(sys, SwitchingCosts::uniform(2, c), rho), u0).solution;
        const GapCheck g = zero_cost_gap_bound(u, z, c, rho, sys->gamma());
        ok = ok && g.ok;
        largest = std::max(largest, g.max_gap / g.bound);
      }
    }
    return CheckResult{"", ok, detail::fmt("largest gap / bound = %.3g", largest)};
  });
}

/// With c = 0 the regime gap halves (within 20%) per doubling of rho.
inline CheckResult zero_cost_gap_halving(const pde::PdeParams& params = pde::PdeParams::two_regime(),
                                         const std::vector<double>& rhos = detail::two_regime_rhos()) {
  return detail::guarded("zero_cost_gap_halving", [&] {
    const HjbLimitResult r = hjb_limit_solve(pde::assemble(params), rhos);
    bool ok = true;
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (std::size_t k = 1; k < r.regime_gaps.size(); ++k) {
      const double ratio = r.regime_gaps[k - 1] / r.regime_gaps[k];
      lo = std::min(lo, ratio);
      hi = std::max(hi, ratio);
      ok = ok && ratio >= 1.6 && ratio <= 2.4;
    }
    return CheckResult{"", ok, detail::fmt2("gap ratios in [%.4f, %.4f]", lo, hi)};
  });
}

/// u^{c,2rho} >= u^{c,rho} - 1e-8 on the two-regime table grid.
inline CheckResult monotone_in_rho(const std::vector<double>& costs = {0.5, 0.125, 1.0 / 32, 1.0 / 128, 1.0 / 512,
                                                                        1.0 / 2048, 0.0}) {
  return detail::guarded("monotone_in_rho", [&] {
    auto sys = pde::assemble(pde::PdeParams::two_regime());
    const RegimeField u0 = root_of(*sys);
    double worst = std::numeric_limits<double>::infinity();
    for (double c : costs) {
      std::optional<RegimeField> prev;
      for (double rho : detail::two_regime_rhos()) {
        RegimeField u = solve_penalized(PenalizedProblem(sys, SwitchingCosts::uniform(2, c), rho), u0).solution;
        if (prev) worst = std::min(worst, (u.flat() - prev->flat()).minCoeff());
        prev = std::move(u);
      }
    }
    return CheckResult{"", worst >= -1e-8, detail::fmt("min(u^{2rho} - u^rho) = %.3g", worst)};
  });
}

/// Iterating Q^rho from u0 stays below the penalized solution and converges to it.
inline CheckResult q_rho_fixed_point(std::uint64_t seed = 105) {
  return detail::guarded("q_rho_fixed_point", [&] {
    gen::Rng rng(seed);
    bool ok = true;
    double worst = 0.0;
    for (int k = 0; k < 10; ++k) {
      const Index d = 2 + k % 2, n = 1 + k % 4;
      auto sys = gen::random_affine_system(d, n, 0.5, rng);
      const PenalizedProblem prob(sys, SwitchingCosts::uniform(d, 0.1), 10.0);
      const RegimeField target = solve_penalized(prob, root_of(*sys)).solution;
      const auto it = iterate_to_fixed_point([&](const RegimeField& w) { return apply_Q_rho(w, prob); },
                                             root_of(*sys), 2000, 1e-12, true);
      for (const auto& h : it.history) ok = ok && leq(h, target, 1e-8);
      worst = std::max(worst, sup_norm(it.field - target));
      ok = ok && it.non_monotone_sweeps.empty();
    }
    ok = ok && worst <= 1e-6;
    return CheckResult{"", ok, detail::fmt("max distance to penalized solution %.3g", worst)};
  });
}

struct OracleAgreement {
  CheckResult result;
  int instances = 0;
  int enumerated = 0;
  double max_discrepancy = 0.0;
  double seconds = 0.0;
};

/// Newton, pseudo-time and (where feasible) active-set enumeration on random
/// affine instances with d in {2,3}, N in {1,2,4}, rho in {0,1,1e3}, c in {0,0.1,1}.
inline OracleAgreement oracle_agreement(int instances = 50, std::uint64_t seed = 106) {
  OracleAgreement out;
  const auto start = std::chrono::steady_clock::now();
  out.result = detail::guarded("oracle_agreement", [&] {
    gen::Rng rng(seed);
    const Index ds[] = {2, 3};
    const Index ns[] = {1, 2, 4};
    const double rhos[] = {0.0, 1.0, 1e3};
    const double cs[] = {0.0, 0.1, 1.0};
    for (int k = 0; k < instances; ++k) {
      const Index d = ds[k % 2], n = ns[(k / 2) % 3];
      const double rho = rhos[(k / 6) % 3], c = cs[(k / 18 + k) % 3];
      auto sys = gen::random_affine_system(d, n, 1.0, rng);
      const PenalizedProblem prob(sys, SwitchingCosts::uniform(d, c), rho);
      const RegimeField u0 = root_of(*sys);
      const RegimeField newton = solve_penalized(prob, u0).solution;
      const RegimeField pseudo = oracle::pseudo_time_solve(prob, u0).solution;
      double disc = sup_norm(newton - pseudo);
      if ((d - 1) * d * n <= oracle::kMaxEnumerationBits) {
        const RegimeField exact = oracle::active_set_enumerate(prob).solution;
        disc = std::max({disc, sup_norm(newton - exact), sup_norm(pseudo - exact)});
        ++out.enumerated;
      }
      out.max_discrepancy = std::max(out.max_discrepancy, disc);
      ++out.instances;
    }
    return CheckResult{"", out.max_discrepancy <= 1e-6,
                       detail::fmt("max pairwise discrepancy %.3g", out.max_discrepancy) + " over " +
                           std::to_string(out.instances) + " instances (" + std::to_string(out.enumerated) +
                           " enumerated)"};
  });
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

/// The invariant suites, in a fixed order.
inline std::vector<CheckResult> invariant_suite() {
  return {monotonicity_probes(),      a_priori_bound_check(),   q_rho_lipschitz(),
          q_monotone_sweeps(),        theorem_q_bound(),        strict_supersolution_check(),
          phi_scan_vs_bound(),        penalty_bound_dominates(), zero_cost_gap_check()};
}

}  // namespace qvi::checks
