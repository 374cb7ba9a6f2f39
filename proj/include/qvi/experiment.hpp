#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "qvi/checks.hpp"
#include "qvi/newton.hpp"
#include "qvi/regularize.hpp"
#include "qvi/switching_pde.hpp"

namespace qvi::experiment {

using json = nlohmann::json;

enum class Format { csv, json };

struct ExperimentConfig {
  std::string case_name = "two-regime";
  std::vector<double> rho_list;
  std::vector<double> cost_list;
  std::optional<double> probe_point;
  NewtonConfig newton;
  std::string output_path;  // empty: stdout
  Format format = Format::csv;
  pde::PdeParams pde = pde::PdeParams::two_regime();
  int threads = 0;  // 0: one per cost row, capped by the hardware
  double region_tol = 1e-6;
  std::optional<double> rho_ref;
  std::optional<double> C0;

  /// Fills grid and probe defaults for the named cases and validates everything.
  void finalize();

  double probe() const { return *probe_point; }
  Index probe_index() const { return static_cast<Index>(std::llround(*probe_point / pde.h())); }
};

namespace detail {

inline std::vector<double> doubling(double first, int count) {
  std::vector<double> out;
  for (int k = 0; k < count; ++k) out.push_back(first * std::pow(2.0, k));
  return out;
}

inline std::vector<double> powers_of_quarter(double first, int count) {
  std::vector<double> out;
  for (int k = 0; k < count; ++k) out.push_back(first * std::pow(0.25, k));
  out.push_back(0.0);
  return out;
}

inline Format parse_format(const std::string& s) {
  if (s == "csv") return Format::csv;
  if (s == "json") return Format::json;
  throw InvalidInput("unknown format '" + s + "' (expected csv or json)");
}

inline std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

template <class T>
T field(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("config key '") + key + "': " + e.what());
  }
}

inline void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw InvalidInput(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; });
    if (!known) throw InvalidInput(where + ": unknown key '" + key + "'");
  }
}

}  // namespace detail

inline void ExperimentConfig::finalize() {
  if (case_name == "two-regime") {
    if (rho_list.empty()) rho_list = detail::doubling(1e3, 6);
    if (cost_list.empty()) cost_list = detail::powers_of_quarter(0.5, 6);
    if (!probe_point) probe_point = 0.5;
  } else if (case_name == "three-regime") {
    if (rho_list.empty()) rho_list = detail::doubling(4e3, 6);
    if (cost_list.empty()) cost_list = detail::powers_of_quarter(0.25, 7);
    if (!probe_point) probe_point = 1.0;
  } else if (case_name == "custom") {
    if (rho_list.empty() || cost_list.empty() || !probe_point)
      throw InvalidInput("custom case needs rho_list, cost_list and probe_point");
  } else {
    throw InvalidInput("unknown case '" + case_name + "'");
  }
  pde.validate();
  newton.validate();
  for (double c : cost_list)
    if (!(c >= 0.0) || !std::isfinite(c)) throw InvalidInput("switching cost must be >= 0, got " + detail::fmt_g(c));
  for (double rho : rho_list)
    if (!(rho > 0.0) || !std::isfinite(rho)) throw InvalidInput("rho must be > 0, got " + detail::fmt_g(rho));
  const double grid_x = static_cast<double>(probe_index()) * pde.h();
  if (probe_index() < 0 || probe_index() >= pde.nodes || std::abs(grid_x - *probe_point) > 1e-9 * pde.domain_right)
    throw InvalidInput("probe_point " + detail::fmt_g(*probe_point) + " is not a grid node");
  if (threads < 0) throw InvalidInput("threads must be >= 0");
  if (!(region_tol > 0.0)) throw InvalidInput("region_tol must be > 0");
  if (C0 && !(*C0 >= 0.0)) throw InvalidInput("C0 must be >= 0");
}

/// Parses a JSON config. Unknown keys anywhere are rejected.
inline ExperimentConfig parse_config(const json& j) {
  detail::reject_unknown(j,
                         {"case", "rho_list", "cost_list", "probe_point", "newton", "output_path", "format", "pde",
                          "threads", "region_tol", "rho_ref", "C0"},
                         "config");
  ExperimentConfig cfg;
  if (j.contains("case")) cfg.case_name = detail::field<std::string>(j, "case");
  if (cfg.case_name == "three-regime") cfg.pde = pde::PdeParams::three_regime();
  if (j.contains("rho_list")) cfg.rho_list = detail::field<std::vector<double>>(j, "rho_list");
  if (j.contains("cost_list")) cfg.cost_list = detail::field<std::vector<double>>(j, "cost_list");
  if (j.contains("probe_point")) cfg.probe_point = detail::field<double>(j, "probe_point");
  if (j.contains("output_path")) cfg.output_path = detail::field<std::string>(j, "output_path");
  if (j.contains("format")) cfg.format = detail::parse_format(detail::field<std::string>(j, "format"));
  if (j.contains("threads")) cfg.threads = detail::field<int>(j, "threads");
  if (j.contains("region_tol")) cfg.region_tol = detail::field<double>(j, "region_tol");
  if (j.contains("rho_ref")) cfg.rho_ref = detail::field<double>(j, "rho_ref");
  if (j.contains("C0")) cfg.C0 = detail::field<double>(j, "C0");
  if (j.contains("newton")) {
    const json& n = j.at("newton");
    detail::reject_unknown(n, {"tol", "residual_tol", "max_iter", "scale"}, "newton");
    if (n.contains("tol")) cfg.newton.tol = detail::field<double>(n, "tol");
    if (n.contains("residual_tol")) cfg.newton.residual_tol = detail::field<double>(n, "residual_tol");
    if (n.contains("max_iter")) cfg.newton.max_iter = detail::field<int>(n, "max_iter");
    if (n.contains("scale")) cfg.newton.scale = detail::field<double>(n, "scale");
  }
  if (j.contains("pde")) {
    const json& p = j.at("pde");
    detail::reject_unknown(p, {"sigma", "mu", "r", "regimes", "domain_right", "nodes", "reward"}, "pde");
    if (p.contains("sigma")) cfg.pde.sigma_vol = detail::field<double>(p, "sigma");
    if (p.contains("mu")) cfg.pde.mu_drift = detail::field<double>(p, "mu");
    if (p.contains("r")) cfg.pde.r = detail::field<double>(p, "r");
    if (p.contains("regimes")) cfg.pde.regimes = detail::field<Index>(p, "regimes");
    if (p.contains("domain_right")) cfg.pde.domain_right = detail::field<double>(p, "domain_right");
    if (p.contains("nodes")) cfg.pde.nodes = detail::field<Index>(p, "nodes");
    if (p.contains("reward")) {
      std::vector<pde::RewardPiece> pieces;
      for (const auto& piece : p.at("reward")) {
        detail::reject_unknown(piece, {"left", "right", "offset", "slope"}, "reward piece");
        pieces.push_back({detail::field<double>(piece, "left"), detail::field<double>(piece, "right"),
                          detail::field<double>(piece, "offset"), detail::field<double>(piece, "slope")});
      }
      cfg.pde.reward = pde::RewardFunction::custom(std::move(pieces));
    }
  }
  cfg.finalize();
  return cfg;
}

inline json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open config '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw InvalidInput("config '" + path + "' is not valid JSON: " + e.what());
  }
}

inline ExperimentConfig load_config(const std::string& path) { return parse_config(read_json(path)); }

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

struct TableCell {
  double c = 0.0;
  double rho = 0.0;
  double probe_x = 0.0;
  double value = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> increment;  // against rho / 2 when it is on the grid
  int iterations = 0;
  double runtime_s = 0.0;
  bool converged = false;
  std::string error;
  std::optional<RegimeField> solution;  // kept on request
};

struct TableResult {
  std::string case_name;
  std::vector<TableCell> cells;  // (c, rho) in config order

  bool all_converged() const {
    return std::all_of(cells.begin(), cells.end(), [](const TableCell& c) { return c.converged; });
  }
  const TableCell& at(double c, double rho) const {
    for (const auto& cell : cells)
      if (cell.c == c && cell.rho == rho) return cell;
    throw InvalidInput("no table cell for c = " + detail::fmt_g(c) + ", rho = " + detail::fmt_g(rho));
  }
};

namespace detail {

inline std::optional<std::size_t> half_index(const std::vector<double>& rhos, std::size_t k) {
  for (std::size_t m = 0; m < rhos.size(); ++m)
    if (std::abs(2.0 * rhos[m] - rhos[k]) <= 1e-12 * rhos[k]) return m;
  return std::nullopt;
}

/// One c-row. Every solve starts from the root of F; c = 0 goes through the HJB path.
inline std::vector<TableCell> run_row(const SystemPtr& sys, const RegimeField& u0, const ExperimentConfig& cfg,
                                      double c, bool keep) {
  const Index d = sys->regimes();
  std::vector<TableCell> row;
  std::vector<std::optional<RegimeField>> sols;
  for (double rho : cfg.rho_list) {
    TableCell cell;
    cell.c = c;
    cell.rho = rho;
    cell.probe_x = cfg.probe();
    std::optional<RegimeField> u;
    try {
      if (c == 0.0) {
        HjbLimitResult h = hjb_limit_solve(sys, {rho}, cfg.newton);
        cell.iterations = h.report.iterations;
        cell.runtime_s = h.report.elapsed_seconds;
        cell.converged = h.report.converged;
        u = std::move(h.solutions.back());
      } else {
        SolveResult s = solve_penalized(PenalizedProblem(sys, SwitchingCosts::uniform(d, c), rho), u0, cfg.newton);
        cell.iterations = s.report.iterations;
        cell.runtime_s = s.report.elapsed_seconds;
        cell.converged = s.report.converged;
        u = std::move(s.solution);
      }
      cell.value = (*u)(0, cfg.probe_index());
    } catch (const std::exception& e) {
      cell.error = e.what();
      cell.converged = false;
    }
    sols.push_back(u);
    row.push_back(std::move(cell));
  }
  for (std::size_t k = 0; k < row.size(); ++k) {
    const auto m = half_index(cfg.rho_list, k);
    if (m && sols[k] && sols[*m]) row[k].increment = sup_norm(*sols[k] - *sols[*m]);
  }
  if (keep)
    for (std::size_t k = 0; k < row.size(); ++k) row[k].solution = std::move(sols[k]);
  return row;
}

}  // namespace detail

/// Solves every (c, rho) cell. Rows run concurrently; output order follows the config.
inline TableResult run_table(const ExperimentConfig& cfg, bool keep_solutions = false) {
  auto sys = pde::assemble(cfg.pde);
  const RegimeField u0 = root_of(*sys, cfg.newton);
  const std::size_t rows = cfg.cost_list.size();
  std::vector<std::vector<TableCell>> out(rows);

  std::size_t workers = cfg.threads > 0 ? static_cast<std::size_t>(cfg.threads)
                                        : std::max(1u, std::thread::hardware_concurrency());
  workers = std::max<std::size_t>(1, std::min(workers, rows));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t r = next++; r < rows; r = next++)
      out[r] = detail::run_row(sys, u0, cfg, cfg.cost_list[r], keep_solutions);
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  TableResult result{cfg.case_name, {}};
  for (auto& row : out)
    for (auto& cell : row) result.cells.push_back(std::move(cell));
  return result;
}

inline std::string table_csv(const TableResult& t) {
  std::ostringstream os;
  os << "case,c,rho,probe_x,value,increment,iterations,runtime_s,converged\n";
  for (const auto& c : t.cells) {
    char rt[32];
    std::snprintf(rt, sizeof rt, "%.4f", c.runtime_s);
    os << t.case_name << ',' << detail::fmt_g(c.c) << ',' << detail::fmt_g(c.rho) << ',' << detail::fmt_g(c.probe_x)
       << ',' << (c.error.empty() ? detail::fmt_g(c.value) : "") << ','
       << (c.increment ? detail::fmt_g(*c.increment) : "") << ',' << c.iterations << ',' << rt << ','
       << (c.converged ? "true" : "false") << '\n';
  }
  return os.str();
}

inline json table_json(const TableResult& t) {
  json cells = json::array();
  for (const auto& c : t.cells) {
    json j{{"c", c.c},           {"rho", c.rho},         {"probe_x", c.probe_x},
           {"iterations", c.iterations}, {"runtime_s", c.runtime_s}, {"converged", c.converged}};
    j["value"] = c.error.empty() ? json(c.value) : json(nullptr);
    j["increment"] = c.increment ? json(*c.increment) : json(nullptr);
    if (!c.error.empty()) j["error"] = c.error;
    cells.push_back(std::move(j));
  }
  return {{"case", t.case_name}, {"cells", std::move(cells)}};
}

// ---------------------------------------------------------------------------
// Switching regions
// ---------------------------------------------------------------------------

struct RegimeRegion {
  std::vector<Index> exact;      // obstacle binds at the reference solve
  std::vector<Index> estimated;  // u^i - M_i u within the C0 ln(rho) / rho threshold
  std::vector<Index> missing;    // exact but not estimated
  std::vector<Index> extra;      // estimated but not exact
  bool inclusion = true;
  bool match = true;
};

struct RegionReport {
  double c = 0.0;
  double rho_used = 0.0;
  double rho_ref = 0.0;
  double C0_estimate = 0.0;
  bool C0_given = false;
  double threshold = 0.0;
  double region_tol = 0.0;
  std::vector<RegimeRegion> regimes;
  bool match = true;
  bool inclusion = true;
};

/// Obstacle gap u^i - M_i u for every regime.
inline RegimeField obstacle_gap(const RegimeField& u, const SwitchingCosts& costs) {
  return u - obstacle_field(u, costs);
}

/// Compares the estimated regions at rho with the exact regions of a rho_ref solve.
/// Both sets use the one-sided test gap <= threshold, since a penalized solution
/// may sit slightly below its obstacle.
inline RegionReport extract_regions(const SystemPtr& sys, const SwitchingCosts& costs, double rho,
                                    std::optional<double> C0 = std::nullopt,
                                    std::optional<double> rho_ref = std::nullopt, double region_tol = 1e-6,
                                    const NewtonConfig& cfg = {}) {
  if (!costs.all_positive()) throw InvalidInput("extract_regions: switching costs must be > 0");
  if (!(rho > 1.0)) throw InvalidInput("extract_regions: need rho > 1");
  RegionReport rep;
  rep.c = costs.min_off_diagonal();
  rep.rho_used = rho;
  rep.rho_ref = rho_ref.value_or(100.0 * rho);
  rep.region_tol = region_tol;
  const RegimeField u0 = root_of(*sys, cfg);
  auto solve = [&](double r) { return solve_penalized(PenalizedProblem(sys, costs, r), u0, cfg).solution; };
  const RegimeField u = solve(rho);
  if (C0) {
    rep.C0_estimate = *C0;
    rep.C0_given = true;
  } else {
    rep.C0_estimate = 4.0 * rho * sup_norm(solve(2.0 * rho) - u) / std::log(rho);
  }
  rep.threshold = rep.C0_estimate * std::log(rho) / rho;
  const RegimeField g = obstacle_gap(u, costs);
  const RegimeField g_ref = obstacle_gap(solve(rep.rho_ref), costs);
  for (Index i = 0; i < u.regimes(); ++i) {
    RegimeRegion reg;
    for (Index l = 0; l < u.nodes(); ++l) {
      const bool ex = g_ref(i, l) <= region_tol;
      const bool es = g(i, l) <= rep.threshold;
      if (ex) reg.exact.push_back(l);
      if (es) reg.estimated.push_back(l);
      if (ex && !es) reg.missing.push_back(l);
      if (es && !ex) reg.extra.push_back(l);
    }
    reg.inclusion = reg.missing.empty();
    reg.match = reg.inclusion && reg.extra.empty();
    rep.match = rep.match && reg.match;
    rep.inclusion = rep.inclusion && reg.inclusion;
    rep.regimes.push_back(std::move(reg));
  }
  return rep;
}

inline json region_json(const RegionReport& r) {
  json regimes = json::array();
  for (const auto& g : r.regimes)
    regimes.push_back({{"exact", g.exact},
                       {"estimated", g.estimated},
                       {"missing", g.missing},
                       {"extra", g.extra},
                       {"inclusion", g.inclusion},
                       {"match", g.match}});
  return {{"c", r.c},
          {"rho_used", r.rho_used},
          {"rho_ref", r.rho_ref},
          {"C0_estimate", r.C0_estimate},
          {"C0_given", r.C0_given},
          {"threshold", r.threshold},
          {"region_tol", r.region_tol},
          {"match", r.match},
          {"inclusion", r.inclusion},
          {"regimes", std::move(regimes)}};
}

// ---------------------------------------------------------------------------
// Verification
// ---------------------------------------------------------------------------

struct VerifySummary {
  std::vector<checks::CheckResult> checks;
  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const checks::CheckResult& c) { return c.passed; });
  }
};

/// Invariant suites, oracle agreement and the c = 0 regime-gap halving on the config's problem.
inline VerifySummary verify(const ExperimentConfig& cfg) {
  VerifySummary s;
  s.checks = checks::invariant_suite();
  s.checks.push_back(checks::q_rho_fixed_point());
  s.checks.push_back(checks::oracle_agreement().result);
  s.checks.push_back(checks::zero_cost_gap_halving(cfg.pde, cfg.rho_list));
  return s;
}

inline json verify_json(const VerifySummary& s) {
  json arr = json::array();
  for (const auto& c : s.checks) arr.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  return {{"passed", s.passed()}, {"checks", std::move(arr)}};
}

// ---------------------------------------------------------------------------
// Single solves
// ---------------------------------------------------------------------------

inline json field_json(const RegimeField& u, const pde::PdeParams& p) {
  json x = json::array(), regimes = json::array();
  for (Index l = 0; l < u.nodes(); ++l) x.push_back(p.x(l));
  for (Index i = 0; i < u.regimes(); ++i) {
    json v = json::array();
    for (Index l = 0; l < u.nodes(); ++l) v.push_back(u(i, l));
    regimes.push_back(std::move(v));
  }
  return {{"x", std::move(x)}, {"u", std::move(regimes)}};
}

inline std::string field_csv(const RegimeField& u, const pde::PdeParams& p) {
  std::ostringstream os;
  os << 'x';
  for (Index i = 0; i < u.regimes(); ++i) os << ",u" << i + 1;
  os << '\n';
  for (Index l = 0; l < u.nodes(); ++l) {
    os << detail::fmt_g(p.x(l));
    for (Index i = 0; i < u.regimes(); ++i) os << ',' << detail::fmt_g(u(i, l));
    os << '\n';
  }
  return os.str();
}

}  // namespace qvi::experiment
