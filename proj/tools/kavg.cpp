// kavg command-line front end.
#include <CLI11.hpp>

#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include "kavg/acceptance.hpp"

namespace {

using namespace kavg;
using namespace kavg::experiments;

void print_result(const ExperimentResult& r) {
  std::cout << "[" << r.section << "] " << (r.passed() ? "passed" : "FAILED") << "\n";
  for (const auto& c : r.checks) {
    const char* tag = c.criterion.empty() ? "info" : (c.passed ? "pass" : "FAIL");
    std::cout << "  " << tag << "  " << c.name << ": " << std::setprecision(6) << c.value;
    if (!c.detail.empty()) std::cout << " (" << c.detail << ")";
    std::cout << "\n";
  }
}

int run_experiment(Experiment which, const std::string& config, const std::string& out, const std::string& seeds) {
  const auto all = load_config_file(config);
  std::vector<ExperimentConfig> chosen;
  for (const auto& c : all)
    if (c.experiment == which) chosen.push_back(c);
  if (chosen.empty()) throw ConfigError(config + ": no [" + to_string(which) + "] section");
  bool ok = true;
  for (auto& c : chosen) {
    if (!out.empty()) c.output_dir = out;
    if (!seeds.empty()) c.seeds = parse_seed_list(seeds);
    const auto r = run(c);
    print_result(r);
    ok = ok && r.passed();
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"K-averaging particle systems: simulation, mean-field densities and checks"};
  app.set_version_flag("--version", std::string(KAVG_VERSION));
  app.require_subcommand(1);

  std::string config, out, seeds;
  for (const auto& [name, exp] : experiment_names()) {
    auto* sub = app.add_subcommand(name, "run the " + name + " experiment");
    sub->add_option("--config", config, "INI file with a [" + name + "] section")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "output directory (overrides output_dir)");
    sub->add_option("--seeds", seeds, "seed list, e.g. 1,2,3 or 1..20");
    sub->callback([&, exp = exp] { std::exit(run_experiment(exp, config, out, seeds)); });
  }

  std::string suite = "configs";
  auto* verify_cmd = app.add_subcommand("verify", "run the acceptance suite");
  verify_cmd->add_option("--suite", suite, "directory of *.ini configs")->check(CLI::ExistingDirectory);
  verify_cmd->add_option("--out", out, "output directory (overrides output_dir)");
  verify_cmd->callback([&] {
    auto report = verify(load_suite(suite), out, &std::cerr);
    for (const auto& r : report.runs) print_result(r);
    std::cout << "\n";
    print_criteria(std::cout, report.criteria);
    int failed = 0;
    for (const auto& c : report.criteria) failed += c.passed ? 0 : 1;
    std::cout << (failed ? std::to_string(failed) + " criteria failed" : std::string("all criteria passed")) << "\n";
    std::exit(failed ? 1 : 0);
  });

  auto* dens = app.add_subcommand("density", "apply the mean-field operator to a density CSV");
  dens->require_subcommand(1);
  std::string in_csv, out_csv;
  int K = 5, steps = 1;
  double sigma = 0.1;
  auto add_common = [&](CLI::App* s) {
    s->add_option("--in", in_csv, "input density CSV (x,value)")->required()->check(CLI::ExistingFile);
    s->add_option("--out", out_csv, "output density CSV")->required();
    s->add_option("--K", K, "sample size K")->check(CLI::Range(2, 1 << 20));
    s->add_option("--sigma", sigma, "noise standard deviation")->check(CLI::PositiveNumber);
  };
  auto* evolve_cmd = dens->add_subcommand("evolve", "iterate T for --steps steps");
  add_common(evolve_cmd);
  evolve_cmd->add_option("--steps", steps, "number of steps")->check(CLI::NonNegativeNumber);
  auto* apply_cmd = dens->add_subcommand("apply-t", "apply T once");
  add_common(apply_cmd);
  auto density_run = [&](int n) {
    const auto rho = read_density_csv(in_csv);
    const auto it = density::iterate(rho, K, sigma, n);
    write_density_csv(out_csv, it.back(),
                      {{"K", std::to_string(K)}, {"sigma", fmt(sigma)}, {"steps", std::to_string(n)}});
  };
  evolve_cmd->callback([&] { density_run(steps); });
  apply_cmd->callback([&] { density_run(1); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "kavg: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
