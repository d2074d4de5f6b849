#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "kavg/experiments.hpp"

namespace kavg::experiments {

struct CriterionResult {
  std::string id;
  std::string title;
  bool passed = false;
  std::string detail;
};

/// Acceptance criteria in report order.
inline const std::vector<std::pair<std::string, std::string>>& acceptance_criteria() {
  static const std::vector<std::pair<std::string, std::string>> list{
      {criterion::fixed_point, "fixed point of T on the default grid"},
      {criterion::variance_recursion, "variance recursion and its limit"},
      {criterion::kl_contraction, "KL contraction from a Laplace start"},
      {criterion::w2_contraction, "W2^2 contraction, Laplace and uniform starts, K in {2,5}"},
      {criterion::gaussian_limit, "Gaussian limit of the particle system"},
      {criterion::density_relaxation, "density relaxation from a uniform start"},
      {criterion::poc_rate, "propagation-of-chaos rate"},
      {criterion::com_diffusion, "centre-of-mass diffusion"},
      {criterion::continuous_decay, "continuous-time decay"},
      {criterion::info_lemmas, "information-theory lemma suite"},
  };
  return list;
}

namespace detail {

/// Mixture of 1 to 3 Gaussians with means in [-0.5, 0.5] and variances in [0.02, 0.2].
inline GridDensity random_mixture(const GridSpec& grid, RandomSource& rng) {
  const int parts = 1 + static_cast<int>(rng.index(3));
  std::vector<double> v(static_cast<std::size_t>(grid.points), 0.0);
  for (int c = 0; c < parts; ++c) {
    const double w = rng.uniform(0.2, 1.0);
    const double mu = rng.uniform(-0.5, 0.5);
    const double var = rng.uniform(0.02, 0.2);
    for (std::int64_t j = 0; j < grid.points; ++j) v[static_cast<std::size_t>(j)] += w * gaussian_pdf(grid.x(j) - mu, var);
  }
  return GridDensity::normalized(grid, std::move(v));
}

}  // namespace detail

/// Numerical checks of the entropy inequalities and of the Lipschitz bound of T.
/// Writes `<out_dir>/info-lemmas/{series.csv,summary.json}`.
inline ExperimentResult run_information_lemmas(const std::string& out_dir, std::uint64_t seed = 1) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path dir = fs::path(out_dir) / "info-lemmas";
  fs::create_directories(dir);
  ExperimentResult result{"info-lemmas", "info-lemmas"};
  std::ofstream series(dir / "series.csv");
  series << "# kavg-series v" << kCsvSchemaVersion << " experiment=info-lemmas\n"
         << "lemma,case,lhs,rhs\n"
         << std::setprecision(17);

  // Shannon-Stam, in the convention H = int g ln g:
  // H(sqrt(l) X + sqrt(1-l) Y) <= l H(g) + (1-l) H(h).
  {
    const auto wide = GridSpec::make(32.0, 1 << 16);
    const std::vector<std::pair<std::string, std::pair<GridDensity, GridDensity>>> pairs{
        {"laplace/gaussian(1)", {densities::laplace(wide), densities::gaussian(wide, 1.0)}},
        {"uniform(1)/laplace", {densities::uniform(wide, 1.0), densities::laplace(wide)}},
        {"gaussian(0.5)/gaussian(2)", {densities::gaussian(wide, 0.5), densities::gaussian(wide, 2.0)}},
    };
    double worst = -1e300;
    for (const auto& [name, gh] : pairs) {
      const auto& [g, h] = gh;
      const double hg = metrics::entropy_paper(g);
      const double hh = metrics::entropy_paper(h);
      for (double l : {0.25, 0.5, 0.75}) {
        const auto mix = density::convolve(density::scale(g, 1.0 / std::sqrt(l)), density::scale(h, 1.0 / std::sqrt(1.0 - l)));
        const double lhs = metrics::entropy_paper(mix);
        const double rhs = l * hg + (1.0 - l) * hh;
        series << "shannon-stam," << name << " lambda=" << l << ',' << lhs << ',' << rhs << '\n';
        worst = std::max(worst, lhs - rhs);
      }
    }
    result.checks.push_back(detail::check("Shannon-Stam on 3 pairs x 3 lambdas (slack 1e-6)", worst <= 1e-6, worst, 1e-6,
                                  "max lhs - rhs", criterion::info_lemmas));
  }

  // Entropy of normalized sums of Laplace variables is nonincreasing in this sign convention.
  {
    const auto wide = GridSpec::make(32.0, 1 << 16);
    const auto rho = densities::laplace(wide);
    double prev = 0.0, worst = -1e300;
    for (int n = 1; n <= 6; ++n) {
      const double h = metrics::entropy_paper(density::scale(density::self_convolve(rho, n), std::sqrt(n)));
      series << "entropy-monotonicity,n=" << n << ',' << h << ',' << (n > 1 ? prev : h) << '\n';
      if (n > 1) worst = std::max(worst, h - prev);
      prev = h;
    }
    result.checks.push_back(detail::check("entropy of normalized Laplace sums nonincreasing for n = 1..6 (1e-6)",
                                  worst <= 1e-6, worst, 1e-6, "max H(n) - H(n-1)", criterion::info_lemmas));
  }

  RandomSource rng(seed, 0x1E3);
  {
    const auto grid = GridSpec::default_grid();
    double smallest = 1e300;
    for (int k = 0; k < 100; ++k) {
      const auto a = detail::random_mixture(grid, rng);
      const auto b = detail::random_mixture(grid, rng);
      const double kl = metrics::kl_divergence(a, b);
      series << "kl-nonnegative,pair " << k << ',' << kl << ",0\n";
      smallest = std::min(smallest, kl);
    }
    result.checks.push_back(detail::check("KL >= 0 on 100 random pairs", smallest >= 0.0, smallest, 0.0, "min KL",
                                  criterion::info_lemmas));
  }
  {
    const auto grid = GridSpec::make(4.0, 1 << 12);
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
      const int K = k % 2 == 0 ? 2 : 5;
      const auto a = detail::random_mixture(grid, rng);
      const auto b = detail::random_mixture(grid, rng);
      const double lhs = metrics::tv_distance(density::apply_T(a, K, 0.1), density::apply_T(b, K, 0.1));
      const double rhs = K * metrics::tv_distance(a, b);
      series << "tv-lipschitz,pair " << k << " K=" << K << ',' << lhs << ',' << rhs << '\n';
      worst = std::max(worst, lhs / rhs);
    }
    result.checks.push_back(detail::check("TV(T mu, T nu) <= K TV(mu, nu) on 100 random pairs", worst <= 1.0, worst, 1.0,
                                  "max lhs / rhs", criterion::info_lemmas));
  }
  result.files.push_back("series.csv");
  result.seconds = detail::seconds_since(t0);
  nlohmann::json summary;
  summary["schema"] = "kavg-summary v1";
  summary["experiment"] = "info-lemmas";
  summary["passed"] = result.passed();
  summary["criteria"] = nlohmann::json::array();
  for (const auto& c : result.checks)
    summary["criteria"].push_back({{"name", c.name}, {"passed", c.passed}, {"value", c.value}, {"threshold", c.threshold}, {"detail", c.detail}, {"acceptance", c.criterion}});
  std::ofstream(dir / "summary.json") << summary.dump(2) << '\n';
  return result;
}

struct VerifyReport {
  std::vector<ExperimentResult> runs;
  std::vector<CriterionResult> criteria;
  bool passed() const {
    return std::all_of(criteria.begin(), criteria.end(), [](const CriterionResult& c) { return c.passed; });
  }
};

/// Folds the checks of all runs into one verdict per acceptance criterion.
/// A criterion with no checks in any run fails.
inline std::vector<CriterionResult> judge(const std::vector<ExperimentResult>& runs) {
  std::vector<CriterionResult> out;
  for (const auto& [id, title] : acceptance_criteria()) {
    CriterionResult r{id, title, true, ""};
    int n = 0;
    for (const auto& run : runs)
      for (const auto& c : run.checks) {
        if (c.criterion != id) continue;
        ++n;
        if (!c.passed && r.passed) {
          r.passed = false;
          r.detail = "[" + run.section + "] " + c.name + ": value " + fmt(c.value) + ", threshold " + fmt(c.threshold);
          if (!c.detail.empty()) r.detail += " (" + c.detail + ")";
        }
      }
    if (n == 0) {
      r.passed = false;
      r.detail = "no run in the suite covers this criterion";
    } else if (r.passed) {
      r.detail = std::to_string(n) + " checks passed";
    }
    out.push_back(std::move(r));
  }
  return out;
}

/// Runs every config of the suite plus the lemma suite. A non-empty `out_dir`
/// overrides the configured output directories. A summary is written to
/// `<out_dir>/verify.json`.
inline VerifyReport verify(std::vector<ExperimentConfig> suite, const std::string& out_dir,
                           std::ostream* progress = nullptr) {
  VerifyReport report;
  std::string root = out_dir;
  for (auto& cfg : suite) {
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    if (root.empty()) root = cfg.output_dir;
    if (progress) *progress << "running [" << cfg.section << "]" << std::endl;
    report.runs.push_back(run(cfg));
  }
  if (root.empty()) root = ExperimentConfig{}.output_dir;
  if (progress) *progress << "running [info-lemmas]" << std::endl;
  report.runs.push_back(run_information_lemmas(root));
  report.criteria = judge(report.runs);

  nlohmann::json j;
  j["schema"] = "kavg-verify v1";
  j["passed"] = report.passed();
  j["sections"] = nlohmann::json::array();
  for (const auto& r : report.runs) j["sections"].push_back({{"section", r.section}, {"experiment", r.experiment}, {"passed", r.passed()}});
  j["criteria"] = nlohmann::json::array();
  for (const auto& c : report.criteria) j["criteria"].push_back({{"id", c.id}, {"title", c.title}, {"passed", c.passed}, {"detail", c.detail}});
  std::ofstream(fs::path(root) / "verify.json") << j.dump(2) << '\n';
  return report;
}

/// One `PASS|FAIL  id  title  detail` line per criterion.
inline void print_criteria(std::ostream& out, const std::vector<CriterionResult>& criteria) {
  for (const auto& c : criteria)
    out << (c.passed ? "PASS" : "FAIL") << "  " << std::left << std::setw(20) << c.id << ' ' << c.title << "  : "
        << c.detail << '\n';
}

}  // namespace kavg::experiments
