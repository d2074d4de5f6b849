#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "kavg/acceptance.hpp"

using namespace kavg;
using namespace kavg::experiments;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("kavg_test_" + std::to_string(std::rand()) + "_" +
                                        std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

ExperimentConfig from_ini(const std::string& text, const fs::path& dir) {
  const auto file = dir / "cfg.ini";
  std::ofstream(file) << text;
  auto all = load_config_file(file);
  EXPECT_EQ(all.size(), 1u);
  all.front().output_dir = (dir / "out").string();
  return all.front();
}

struct Cli {
  int code;
  std::string output;
};

Cli run_cli(const std::string& args) {
  const std::string cmd = std::string(KAVG_CLI) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  std::string out;
  char buf[4096];
  while (pipe && fgets(buf, sizeof buf, pipe)) out += buf;
  const int status = pipe ? pclose(pipe) : -1;
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

}  // namespace

TEST(Config, InitParsing) {
  EXPECT_EQ(parse_init("uniform(2)").param, 2.0);
  EXPECT_EQ(parse_init("uniform").param, 1.0);
  EXPECT_EQ(parse_init("laplace").kind, InitSpec::Kind::laplace);
  EXPECT_EQ(parse_init("gaussian(0.25)").param, 0.25);
  EXPECT_EQ(parse_init("point(0.5)").kind, InitSpec::Kind::point);
  EXPECT_EQ(parse_init("file(/tmp/x.csv)").path, "/tmp/x.csv");
  EXPECT_EQ(parse_init("gaussian(0.25)").describe(), "gaussian(0.25)");
  EXPECT_THROW(parse_init("cauchy"), ConfigError);
  EXPECT_THROW(parse_init("uniform(x)"), ConfigError);
  EXPECT_THROW(parse_init("file()"), ConfigError);
  EXPECT_THROW(parse_init("uniform(1"), ConfigError);
}

TEST(Config, SeedLists) {
  EXPECT_EQ(parse_seed_list("1..3,7"), (std::vector<std::uint64_t>{1, 2, 3, 7}));
  EXPECT_EQ(parse_seed_list(" 5 , 6 "), (std::vector<std::uint64_t>{5, 6}));
  EXPECT_EQ(parse_seed_list("18446744073709551615").front(), 18446744073709551615ULL);
  EXPECT_THROW(parse_seed_list("a"), ConfigError);
  EXPECT_THROW(parse_seed_list("5..2"), ConfigError);
}

TEST(Config, ExperimentNames) {
  EXPECT_EQ(experiment_names().size(), 7u);
  for (const auto& [name, e] : experiment_names()) EXPECT_EQ(to_string(e), name);
  EXPECT_FALSE(parse_experiment("fig3").has_value());
}

TEST(Config, SectionParsingAndDefaults) {
  TempDir t;
  const auto c = from_ini("[w2-contraction.k2]\nK = 2\nsigma = 0.2\ninit = laplace\nseeds = 3,4\n", t.path);
  EXPECT_EQ(c.experiment, Experiment::w2_contraction);
  EXPECT_EQ(c.section, "w2-contraction.k2");
  EXPECT_EQ(c.params.K, 2);
  EXPECT_DOUBLE_EQ(c.params.sigma, 0.2);
  EXPECT_DOUBLE_EQ(c.gamma(), 0.5);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{3, 4}));
  EXPECT_EQ(c.grid, GridSpec::default_grid());
  EXPECT_EQ(c.rate_mode, continuous::RateMode::per_particle);
  EXPECT_FALSE(c.exclude_self);
}

TEST(Config, RejectsUnknownKeysSectionsAndStrayKeys) {
  TempDir t;
  const auto file = t.path / "bad.ini";
  std::ofstream(file) << "[fig4-density]\nKK = 3\n";
  EXPECT_THROW(load_config_file(file), ConfigError);
  std::ofstream(file) << "[fig9]\nK = 3\n";
  EXPECT_THROW(load_config_file(file), ConfigError);
  std::ofstream(file) << "K = 3\n[fig4-density]\nK = 3\n";
  EXPECT_THROW(load_config_file(file), ConfigError);
  std::ofstream(file) << "[continuous-decay]\ntotal_rate_mode = sometimes\n";
  EXPECT_THROW(load_config_file(file), ConfigError);
  std::ofstream(file) << "[fig4-density]\nK = three\n";
  EXPECT_THROW(load_config_file(file), ConfigError);
}

TEST(Config, ValidationNamesPreconditions) {
  TempDir t;
  auto c = from_ini("[fig4-density]\npoints = 256\nhalf_width = 8\n", t.path);
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("grid resolves sigma"), std::string::npos);
  }
  auto p = from_ini("[poc-rate]\nn_values = 100,200\n", t.path);
  EXPECT_THROW(p.validate(), ConfigError);
  auto d = from_ini("[continuous-decay]\ndt = 0.1\n", t.path);
  EXPECT_THROW(d.validate(), ConfigError);
  auto k = from_ini("[fig5-entropy]\nK = 1\n", t.path);
  EXPECT_THROW(k.validate(), ConfigError);
  auto s = from_ini("[com-diffusion]\nseeds = ,\n", t.path);
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Config, ShippedSuiteLoadsAndValidates) {
  const auto suite = load_suite(KAVG_CONFIG_DIR);
  EXPECT_GE(suite.size(), 7u);
  std::set<Experiment> seen;
  for (const auto& c : suite) {
    EXPECT_NO_THROW(c.validate()) << c.section;
    seen.insert(c.experiment);
  }
  EXPECT_EQ(seen.size(), 7u);
}

TEST(Runs, Fig4OutputsAndSchema) {
  TempDir t;
  const auto c = from_ini("[fig4-density]\nK = 5\nsigma = 0.1\ninit = uniform(1)\nsteps = 12\n", t.path);
  const auto r = run(c);
  EXPECT_TRUE(r.passed());
  const auto dir = t.path / "out" / "fig4-density";
  std::istringstream series(slurp(dir / "series.csv"));
  std::string l1, l2;
  std::getline(series, l1);
  std::getline(series, l2);
  EXPECT_EQ(l1.rfind("# kavg-series v1 experiment=fig4-density section=fig4-density config_hash=", 0), 0u);
  EXPECT_EQ(l2, "step,metric,value,seed,replica");
  for (const char* f : {"rho_0.csv", "rho_3.csv", "rho_5.csv", "rho_inf.csv", "manifest.json", "summary.json"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  const auto inf = read_density_csv((dir / "rho_inf.csv").string());
  const auto ref = equilibrium_density(c.grid, 5, 0.1);
  for (std::size_t j = 0; j < ref.size(); ++j) ASSERT_NEAR(inf[j], ref[j], 1e-9);
  const auto summary = nlohmann::json::parse(slurp(dir / "summary.json"));
  EXPECT_TRUE(summary["passed"].get<bool>());
  EXPECT_GE(summary["criteria"].size(), 5u);
  const auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(manifest["config_hash"], hex(fnv1a(c.canonical())));
  EXPECT_EQ(manifest["code_version"], KAVG_VERSION);
}

TEST(Runs, RerunIsByteIdenticalAndWorkerIndependent) {
  TempDir t;
  auto c = from_ini("[com-diffusion]\nN = 50\nK = 2\nsteps = 10\nreplicas = 16\nseeds = 1,2\n", t.path);
  c.output_dir = (t.path / "a").string();
  setenv("KAVG_THREADS", "1", 1);
  run(c);
  c.output_dir = (t.path / "b").string();
  setenv("KAVG_THREADS", "4", 1);
  run(c);
  unsetenv("KAVG_THREADS");
  for (const char* f : {"series.csv", "manifest.json", "summary.json"})
    EXPECT_EQ(slurp(t.path / "a" / "com-diffusion" / f), slurp(t.path / "b" / "com-diffusion" / f)) << f;
}

TEST(Runs, Fig2SmallConfigWritesOverlayInputs) {
  TempDir t;
  const auto c = from_ini("[fig2-histogram]\nN = 400\nsteps = 40\nseeds = 1,2\nhistogram_bins = 20\n", t.path);
  const auto r = run(c);
  const auto dir = t.path / "out" / "fig2-histogram";
  for (const char* f : {"final_seed1.csv", "final_seed2.csv", "histogram.csv", "equilibrium.csv"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  EXPECT_EQ(init::from_csv((dir / "final_seed1.csv").string()).size(), 400);
  std::ifstream h(dir / "histogram.csv");
  std::string line;
  std::getline(h, line);
  std::getline(h, line);
  EXPECT_EQ(line, "bin_left,bin_right,density");
  double mass = 0.0;
  while (std::getline(h, line)) {
    double lo, hi, d;
    char comma;
    std::istringstream(line) >> lo >> comma >> hi >> comma >> d;
    mass += (hi - lo) * d;
  }
  EXPECT_NEAR(mass, 1.0, 1e-9);
  // one variance and one literal W2 check per seed, plus the runtime check
  int counted = 0;
  for (const auto& ch : r.checks) counted += ch.criterion == criterion::gaussian_limit;
  EXPECT_EQ(counted, 5);
}

TEST(Runs, W2GaussianStartMatchesClosedForm) {
  TempDir t;
  const auto c = from_ini("[w2-contraction]\nK = 3\ninit = gaussian(0.3)\nsteps = 8\n", t.path);
  const auto r = run(c);
  EXPECT_TRUE(r.passed());
  EXPECT_EQ(r.checks.size(), 2u);
}

TEST(Runs, ContinuousZeroRateIsConstant) {
  TempDir t;
  const auto c = from_ini("[continuous-decay]\nlambda = 0\ninit = uniform(1)\nt_end = 1\ndt = 0.1\n", t.path);
  const auto r = run(c);
  ASSERT_EQ(r.checks.size(), 2u);
  EXPECT_TRUE(r.checks[1].passed) << r.checks[1].name;
  EXPECT_LE(r.checks[1].value, 1e-10);
}

TEST(Runs, OutcomesStableAcrossSeeds) {
  TempDir t;
  for (const char* seeds : {"2", "3"}) {
    auto c = from_ini(std::string("[com-diffusion]\nN = 100\nK = 2\nsteps = 50\nreplicas = 200\nseeds = ") + seeds, t.path);
    EXPECT_TRUE(run(c).passed()) << seeds;
  }
  auto p = from_ini("[poc-rate]\nK = 2\nsteps = 5\nseeds = 21..40\n", t.path);
  const auto r = run(p);
  EXPECT_TRUE(r.checks.front().passed) << r.checks.front().value;
}

TEST(Runs, PocNeedsTwentySeeds) {
  TempDir t;
  EXPECT_THROW(run(from_ini("[poc-rate]\nseeds = 1..5\n", t.path)), ConfigError);
}

TEST(Verify, JudgeFoldsChecksPerCriterion) {
  ExperimentResult a("x", "x");
  a.checks.push_back({"c1", true, 0, 0, "", criterion::fixed_point});
  a.checks.push_back({"c2", false, 2, 1, "", criterion::fixed_point});
  a.checks.push_back({"info", false, 0, 0, "", ""});
  const auto out = judge({a});
  ASSERT_EQ(out.size(), acceptance_criteria().size());
  EXPECT_FALSE(out[0].passed);
  EXPECT_NE(out[0].detail.find("c2"), std::string::npos);
  EXPECT_FALSE(out[1].passed);  // nothing covers it
  EXPECT_EQ(out[1].detail, "no run in the suite covers this criterion");
  EXPECT_TRUE(a.passed() == false);
}

TEST(Cli, RunsOneExperiment) {
  TempDir t;
  const auto r = run_cli("fig4-density --config " + std::string(KAVG_CONFIG_DIR) + "/fig4.ini --out " + t.path.string());
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(t.path / "fig4-density" / "series.csv"));
}

TEST(Cli, SeedOverrideReachesManifest) {
  TempDir t;
  const auto r = run_cli("com-diffusion --config " + std::string(KAVG_CONFIG_DIR) + "/com.ini --seeds 7,8 --out " +
                         t.path.string());
  EXPECT_EQ(r.code, 0) << r.output;
  const auto m = nlohmann::json::parse(slurp(t.path / "com-diffusion" / "manifest.json"));
  EXPECT_EQ(m["seeds"], nlohmann::json::array({7, 8}));
}

TEST(Cli, CorruptedGridIsANamedPreconditionFailure) {
  TempDir t;
  const auto suite = t.path / "suite";
  fs::create_directories(suite);
  std::ofstream(suite / "bad.ini") << "[fig4-density]\nK = 5\nsigma = 0.1\nhalf_width = 8\npoints = 256\n";
  const auto r = run_cli("verify --suite " + suite.string() + " --out " + (t.path / "out").string());
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("grid resolves sigma"), std::string::npos) << r.output;
}

TEST(Cli, MissingSectionAndBadArguments) {
  TempDir t;
  EXPECT_NE(run_cli("fig5-entropy --config " + std::string(KAVG_CONFIG_DIR) + "/fig4.ini --out " + t.path.string()).code, 0);
  EXPECT_NE(run_cli("fig4-density --config /no/such/file.ini").code, 0);
  EXPECT_NE(run_cli("").code, 0);
  EXPECT_EQ(run_cli("--version").output, std::string(KAVG_VERSION) + "\n");
}

TEST(Cli, DensityApplyAndEvolve) {
  TempDir t;
  const auto in = t.path / "u.csv";
  write_density_csv(in.string(), densities::uniform(GridSpec::default_grid()));
  auto r = run_cli("density apply-t --in " + in.string() + " --out " + (t.path / "t1.csv").string() + " --K 5 --sigma 0.1");
  ASSERT_EQ(r.code, 0) << r.output;
  const auto t1 = read_density_csv((t.path / "t1.csv").string());
  EXPECT_NEAR(t1.variance(), (1.0 / 3.0) / 5.0 + 0.01, 1e-6);
  r = run_cli("density evolve --in " + in.string() + " --out " + (t.path / "t5.csv").string() + " --K 5 --steps 5");
  ASSERT_EQ(r.code, 0) << r.output;
  const auto t5 = read_density_csv((t.path / "t5.csv").string());
  EXPECT_LT(metrics::tv_distance(t5, equilibrium_density(t5.grid(), 5, 0.1)), 5e-3);
}
