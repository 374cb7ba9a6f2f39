#include <algorithm>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qvi/experiment.hpp"

using namespace qvi;
using namespace qvi::experiment;

namespace {

struct Overrides {
  std::string config;
  std::string case_name;
  std::string out;
  std::string format;
  std::vector<double> rho;
  std::vector<double> cost;
  double tol = 0.0;
  int threads = -1;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "JSON experiment config")->check(CLI::ExistingFile);
  cmd->add_option("--case", o.case_name, "two-regime | three-regime | custom");
  cmd->add_option("--out", o.out, "output file (default stdout)");
  cmd->add_option("--format", o.format, "csv | json");
  cmd->add_option("--rho", o.rho, "comma-separated penalty parameters")->delimiter(',');
  cmd->add_option("--cost", o.cost, "comma-separated switching costs")->delimiter(',');
  cmd->add_option("--tol", o.tol, "Newton increment tolerance");
  cmd->add_option("--threads", o.threads, "worker threads (0 = auto)");
}

ExperimentConfig build_config(const Overrides& o) {
  json j = o.config.empty() ? json::object() : read_json(o.config);
  if (!o.case_name.empty()) j["case"] = o.case_name;
  if (!o.out.empty()) j["output_path"] = o.out;
  if (!o.format.empty()) j["format"] = o.format;
  if (!o.rho.empty()) j["rho_list"] = o.rho;
  if (!o.cost.empty()) j["cost_list"] = o.cost;
  if (o.tol != 0.0) j["newton"]["tol"] = o.tol;
  if (o.threads >= 0) j["threads"] = o.threads;
  return parse_config(j);
}

void emit(const ExperimentConfig& cfg, const std::string& text) {
  if (cfg.output_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(cfg.output_path);
  if (!out) throw InvalidInput("cannot write '" + cfg.output_path + "'");
  out << text;
}

int cmd_solve(const ExperimentConfig& cfg) {
  auto sys = pde::assemble(cfg.pde);
  const double c = cfg.cost_list.front(), rho = cfg.rho_list.front();
  SolveResult s;
  if (c == 0.0) {
    HjbLimitResult h = hjb_limit_solve(sys, {rho}, cfg.newton);
    s = {h.solutions.back(), h.report};
  } else {
    s = solve_penalized(PenalizedProblem(sys, SwitchingCosts::uniform(cfg.pde.regimes, c), rho), root_of(*sys),
                        cfg.newton);
  }
  if (cfg.format == Format::csv) {
    emit(cfg, field_csv(s.solution, cfg.pde));
  } else {
    json j{{"case", cfg.case_name},
           {"c", c},
           {"rho", rho},
           {"probe_x", cfg.probe()},
           {"value", s.solution(0, cfg.probe_index())},
           {"iterations", s.report.iterations},
           {"final_residual", s.report.final_residual},
           {"runtime_s", s.report.elapsed_seconds},
           {"converged", s.report.converged},
           {"solution", field_json(s.solution, cfg.pde)}};
    emit(cfg, j.dump(2) + "\n");
  }
  return s.report.converged ? 0 : 1;
}

int cmd_table(const ExperimentConfig& cfg) {
  const TableResult t = run_table(cfg);
  emit(cfg, cfg.format == Format::csv ? table_csv(t) : table_json(t).dump(2) + "\n");
  for (const auto& c : t.cells)
    if (!c.error.empty()) std::cerr << "c=" << c.c << " rho=" << c.rho << ": " << c.error << "\n";
  return t.all_converged() ? 0 : 1;
}

int cmd_regions(const ExperimentConfig& cfg) {
  auto sys = pde::assemble(cfg.pde);
  const double rho = *std::max_element(cfg.rho_list.begin(), cfg.rho_list.end());
  json reports = json::array();
  bool ok = true;
  for (double c : cfg.cost_list) {
    if (c == 0.0) continue;  // no regions without a switching cost
    const RegionReport r = extract_regions(sys, SwitchingCosts::uniform(cfg.pde.regimes, c), rho, cfg.C0,
                                           cfg.rho_ref, cfg.region_tol, cfg.newton);
    ok = ok && r.inclusion;
    reports.push_back(region_json(r));
  }
  emit(cfg, reports.dump(2) + "\n");
  return ok ? 0 : 1;
}

int cmd_verify(const ExperimentConfig& cfg) {
  const VerifySummary s = verify(cfg);
  if (cfg.format == Format::json) {
    emit(cfg, verify_json(s).dump(2) + "\n");
  } else {
    std::string text;
    for (const auto& c : s.checks) text += (c.passed ? "PASS " : "FAIL ") + c.name + ": " + c.detail + "\n";
    emit(cfg, text);
  }
  return s.passed() ? 0 : 1;
}

int cmd_hjb(const ExperimentConfig& cfg) {
  std::vector<double> rhos = cfg.rho_list;
  std::sort(rhos.begin(), rhos.end());
  const HjbLimitResult h = hjb_limit_solve(pde::assemble(cfg.pde), rhos, cfg.newton);
  bool ok = true;
  for (const auto& r : h.reports) ok = ok && r.converged;
  if (cfg.format == Format::csv) {
    using experiment::detail::fmt_g;
    std::string text = "rho,regime_gap,value,iterations,converged\n";
    for (std::size_t k = 0; k < rhos.size(); ++k)
      text += fmt_g(rhos[k]) + "," + fmt_g(h.regime_gaps[k]) + "," + fmt_g(h.solutions[k](0, cfg.probe_index())) +
              "," + std::to_string(h.reports[k].iterations) + "," + (h.reports[k].converged ? "true" : "false") +
              "\n";
    emit(cfg, text);
  } else {
    json rows = json::array();
    for (std::size_t k = 0; k < rhos.size(); ++k)
      rows.push_back({{"rho", rhos[k]},
                      {"regime_gap", h.regime_gaps[k]},
                      {"value", h.solutions[k](0, cfg.probe_index())},
                      {"iterations", h.reports[k].iterations},
                      {"converged", h.reports[k].converged}});
    std::vector<double> collapsed(h.collapsed.data(), h.collapsed.data() + h.collapsed.size());
    emit(cfg, json{{"case", cfg.case_name}, {"rows", rows}, {"collapsed", collapsed}}.dump(2) + "\n");
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Penalty solver for switching-system QVIs"};
  app.require_subcommand(1);
  Overrides o;
  struct Command {
    const char* name;
    const char* help;
    int (*run)(const ExperimentConfig&);
  };
  const Command commands[] = {
      {"solve", "solve one (c, rho) problem", cmd_solve},
      {"table", "sweep the (c, rho) grid", cmd_table},
      {"regions", "switching regions as JSON", cmd_regions},
      {"verify", "run the property suites", cmd_verify},
      {"hjb", "zero switching cost along the rho list", cmd_hjb},
  };
  for (const auto& c : commands) add_common(app.add_subcommand(c.name, c.help), o);

  CLI11_PARSE(app, argc, argv);
  try {
    const ExperimentConfig cfg = build_config(o);
    for (const auto& c : commands)
      if (app.got_subcommand(c.name)) return c.run(cfg);
  } catch (const InvalidInput& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
