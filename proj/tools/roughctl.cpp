// roughctl: scenario runner for pathwise relaxed control of rough differential equations.
//
// Exit codes: 0 ok, 1 validation (bad config, CFL refusal), 2 numerical failure or unmet expectations.

#include "roughctl/scenario.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace roughctl;

namespace {

struct Overrides {
  std::vector<std::string> sets, generic;

  std::vector<std::string> all() const {
    auto v = sets;
    v.insert(v.end(), generic.begin(), generic.end());
    return v;
  }

  // One-off flags mirror scenario fields; each becomes a dotted-path override.
  void attach(CLI::App* app) {
    static const std::vector<std::pair<std::string, std::string>> flags{
        {"--seed", "driver.seed"},          {"--hurst", "driver.hurst"},
        {"--steps", "driver.steps"},        {"--oversample", "driver.oversample"},
        {"--horizon", "horizon"},           {"--y0", "solve.y0"},
        {"--control", "solve.control"},     {"--dp-steps", "grids.dp_steps"},
        {"--nodes", "grids.space.nodes"},   {"--space-lo", "grids.space.lo"},
        {"--space-hi", "grids.space.hi"},   {"--flow-nodes", "grids.flow_space.nodes"},
        {"--slices", "grids.slices"},       {"--kappa", "scheme.kappa"},
        {"--theta", "scheme.theta"},        {"--theta-factor", "scheme.theta_factor"},
        {"--cfl", "scheme.cfl"},            {"--hjb-substeps", "scheme.hjb_substeps"},
        {"--samples", "study.samples"},
    };
    for (const auto& [flag, path] : flags)
      app->add_option_function<std::string>(flag, [this, p = path](const std::string& v) { sets.push_back(p + "=" + v); },
                                            "override " + path);
    app->add_option("--set", generic, "override any field, e.g. --set reward.lambda=0.1")->take_all();
  }
};

void print_result(const RunResult& r) {
  for (const auto& st : r.stages)
    std::cout << "stage " << st.name << ": " << st.status << (st.detail.empty() ? "" : " (" + st.detail + ")") << "\n";
  for (const auto& [k, v] : r.metrics) std::cout << "  " << k << " = " << csv::format_double(v) << "\n";
  for (const auto& e : r.expectations) {
    std::string status = e.status;
    for (auto& c : status) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    std::cout << status << " " << e.spec.metric << " = " << (e.value ? csv::format_double(*e.value) : "n/a") << " (" << e.spec.bound()
              << ")\n";
  }
  std::cout << "run directory: " << r.dir << "\nmanifest sha256: " << r.manifest_sha256 << "\n";
}

int run_config(const std::string& config, const Overrides& ov, const std::optional<std::string>& stage, const std::string& out,
               bool timings) {
  auto sets = ov.all();
  if (stage) sets.push_back("stages=[\"" + *stage + "\"]");
  const Scenario s = load_scenario(config, sets);
  RunOptions o;
  if (!out.empty()) o.out_dir = out;
  o.timings = timings;
  o.require_all = !stage.has_value();
  const RunResult r = run_scenario(s, o);
  print_result(r);
  if (r.refused()) {
    std::cerr << "error: a stage was refused; see the manifest\n";
    return 1;
  }
  if (!r.expectations_met()) {
    std::cerr << "error: expectations not met\n";
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pathwise relaxed optimal control of rough differential equations"};
  app.require_subcommand(1);
  app.fallthrough();
  std::size_t workers = 1;
  bool timings = false;
  app.add_option("--workers", workers, "worker threads for per-node loops (outputs do not depend on it)")
      ->check(CLI::Range(std::size_t{1}, std::size_t{1024}));
  app.add_flag("--timings", timings, "record wall-clock runtimes in study tables");

  std::string config, out, report_dir, report_out;
  Overrides ov;
  std::optional<std::string> stage;
  std::function<int()> action;

  auto* run = app.add_subcommand("run", "run every stage listed in a scenario config");
  run->add_option("config", config, "scenario JSON")->required();
  run->add_option("-o,--out", out, "run directory (default: the config's output field)");
  ov.attach(run);
  run->callback([&] { action = [&] { return run_config(config, ov, std::nullopt, out, timings); }; });

  for (const auto& [name, help] : std::vector<std::pair<std::string, std::string>>{
           {"lift", "sample and lift the driver"},
           {"solve", "solve the RDE from solve.y0"},
           {"flow", "compute the stochastic characteristic flow and its inverse"},
           {"value", "dynamic-programming value function"},
           {"hjb", "flow-transformed HJB solve, back-mapped"},
           {"study", "smooth-approximation convergence study"}}) {
    auto* sub = app.add_subcommand(name, help + " (prerequisite stages run too)");
    sub->add_option("config", config, "scenario JSON")->required();
    sub->add_option("-o,--out", out, "run directory (default: the config's output field)");
    ov.attach(sub);
    sub->callback([&, n = name] {
      stage = n;
      action = [&] { return run_config(config, ov, stage, out, timings); };
    });
  }

  auto* report = app.add_subcommand("report", "summarize a run directory into report.md");
  report->add_option("run_dir", report_dir, "run directory")->required();
  report->add_option("-o,--out", report_out, "report file (default: <run_dir>/report.md)");
  report->callback([&] {
    action = [&] {
      std::cout << export_report(report_dir, report_out.empty() ? std::nullopt : std::optional<std::string>(report_out)) << "\n";
      return 0;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  default_workers() = workers;
  try {
    return action();
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return 2;
  }
}
