#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "kavg/grid.hpp"
#include "kavg/model.hpp"

namespace kavg::metrics {

/// Distances and information functionals between two distributions.
struct MetricReport {
  double w2 = 0.0;
  double kl = 0.0;
  double tv = 0.0;
  double entropy_paper_sign = 0.0;
  double mean = 0.0;
  double variance = 0.0;
};

namespace detail {

inline void require_same_grid(const GridDensity& a, const GridDensity& b, const char* op) {
  if (!(a.grid() == b.grid())) throw PreconditionError(std::string(op) + ": densities live on different grids");
}

/// Piecewise-linear CDF through the cumulative trapezoid values at the nodes,
/// scaled so the last node carries mass exactly 1.
inline std::vector<double> cdf(const GridDensity& rho) {
  const auto& v = rho.values();
  std::vector<double> F(v.size());
  F[0] = 0.0;
  for (std::size_t j = 1; j < v.size(); ++j) {
    if (v[j] < 0.0 || v[j - 1] < 0.0) throw PreconditionError("w2: non-monotone CDF (negative density)");
    F[j] = F[j - 1] + 0.5 * rho.dx() * (v[j - 1] + v[j]);
  }
  const double total = F.back();
  for (auto& f : F) f /= total;
  return F;
}

/// Inverse of the piecewise-linear CDF at increasing levels `u`.
inline std::vector<double> quantiles(const GridDensity& rho, std::span<const double> u) {
  const auto F = cdf(rho);
  const auto& grid = rho.grid();
  std::vector<double> q(u.size());
  std::size_t j = 1;
  for (std::size_t i = 0; i < u.size(); ++i) {
    while (j + 1 < F.size() && F[j] < u[i]) ++j;
    const double lo = F[j - 1], hi = F[j];
    const double w = hi > lo ? std::clamp((u[i] - lo) / (hi - lo), 0.0, 1.0) : 0.0;
    q[i] = grid.x(static_cast<std::int64_t>(j - 1)) + w * rho.dx();
  }
  return q;
}

inline std::vector<double> midpoint_levels(std::size_t n) {
  std::vector<double> u(n);
  for (std::size_t i = 0; i < n; ++i) u[i] = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
  return u;
}

inline std::vector<double> sorted_copy(std::span<const double> s) {
  std::vector<double> v(s.begin(), s.end());
  if (!std::is_sorted(v.begin(), v.end())) std::sort(v.begin(), v.end());
  return v;
}

}  // namespace detail

/// Quantile function of rho at levels u (increasing).
inline std::vector<double> quantile_function(const GridDensity& rho, std::span<const double> u) {
  return detail::quantiles(rho, u);
}

/// Total variation in the strong-norm convention: dx * sum |mu - nu|, in [0, 2].
inline double tv_distance(const GridDensity& mu, const GridDensity& nu) {
  detail::require_same_grid(mu, nu, "tv_distance");
  double s = 0.0;
  for (std::size_t j = 0; j < mu.size(); ++j) s += std::abs(mu[j] - nu[j]);
  return s * mu.dx();
}

/// Wasserstein-2 between two grid densities: L2 distance of the quantile
/// functions on a midpoint mesh of `mesh_factor * M` levels.
inline double w2_grid(const GridDensity& rho, const GridDensity& nu, int mesh_factor = 4) {
  detail::require_same_grid(rho, nu, "w2_grid");
  const auto u = detail::midpoint_levels(static_cast<std::size_t>(mesh_factor) * rho.size());
  const auto qa = detail::quantiles(rho, u);
  const auto qb = detail::quantiles(nu, u);
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += (qa[i] - qb[i]) * (qa[i] - qb[i]);
  return std::sqrt(s / static_cast<double>(u.size()));
}

/// Wasserstein-2 between two equal-size samples (sorted pairing).
inline double w2_empirical(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw PreconditionError("w2_empirical: sample counts differ");
  if (a.empty()) return 0.0;
  const auto sa = detail::sorted_copy(a);
  const auto sb = detail::sorted_copy(b);
  double s = 0.0;
  for (std::size_t i = 0; i < sa.size(); ++i) s += (sa[i] - sb[i]) * (sa[i] - sb[i]);
  return std::sqrt(s / static_cast<double>(sa.size()));
}

/// Wasserstein-2 between an empirical measure and a grid density, matching the
/// i-th order statistic with the grid quantile at (i - 1/2)/N.
inline double w2_empirical_vs_grid(std::span<const double> samples, const GridDensity& rho) {
  if (samples.empty()) throw PreconditionError("w2_empirical_vs_grid: no samples");
  const auto s = detail::sorted_copy(samples);
  const auto q = detail::quantiles(rho, detail::midpoint_levels(s.size()));
  double acc = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) acc += (s[i] - q[i]) * (s[i] - q[i]);
  return std::sqrt(acc / static_cast<double>(s.size()));
}

/// H(g) = integral of g ln g (natural log; the negative of differential entropy).
inline double entropy_paper(const GridDensity& rho) {
  double s = 0.0;
  for (double v : rho.values())
    if (v > 1e-300) s += v * std::log(v);
  return s * rho.dx();
}

/// Cross entropy H(g, h) = integral of g ln h.
inline double cross_entropy(const GridDensity& g, const GridDensity& h) {
  detail::require_same_grid(g, h, "cross_entropy");
  double s = 0.0;
  for (std::size_t j = 0; j < g.size(); ++j) {
    if (g[j] <= 1e-300) continue;
    if (h[j] <= 0.0) throw PreconditionError("absolute continuity violated");
    s += g[j] * std::log(h[j]);
  }
  return s * g.dx();
}

namespace detail {
inline double clamp_kl(double kl) { return (kl < 0.0 && kl > -1e-12) ? 0.0 : kl; }
}  // namespace detail

/// D_KL(g || h) = dx * sum g ln(g/h) over nodes where g > 0.
inline double kl_divergence(const GridDensity& g, const GridDensity& h) {
  detail::require_same_grid(g, h, "kl_divergence");
  double s = 0.0;
  for (std::size_t j = 0; j < g.size(); ++j) {
    if (g[j] <= 1e-300) continue;
    if (h[j] <= 0.0) throw PreconditionError("absolute continuity violated");
    s += g[j] * std::log(g[j] / h[j]);
  }
  return detail::clamp_kl(s * g.dx());
}

/// D_KL(g || N(mean, variance) sampled on g's grid and normalized there).
///
/// Uses the analytic log of the reference, so nodes where the Gaussian
/// underflows still contribute their g ln(g/h) term.
inline double kl_to_gaussian(const GridDensity& g, double variance, double mean = 0.0) {
  const auto& grid = g.grid();
  const double dx = g.dx();
  // log of the discrete normalizer dx * sum phi(x_j), with phi computed relative to its peak
  double z = 0.0;
  for (std::int64_t j = 0; j < grid.points; ++j) {
    const double y = grid.x(j) - mean;
    z += std::exp(-0.5 * y * y / variance);
  }
  const double log_norm = std::log(z * dx);
  double s = 0.0;
  for (std::int64_t j = 0; j < grid.points; ++j) {
    const double v = g[static_cast<std::size_t>(j)];
    if (v <= 1e-300) continue;
    const double y = grid.x(j) - mean;
    const double log_h = -0.5 * y * y / variance - log_norm;
    s += v * (std::log(v) - log_h);
  }
  return detail::clamp_kl(s * dx);
}

/// D_KL(g || rho_inf) for the equilibrium of the K-averaging dynamics.
inline double kl_to_equilibrium(const GridDensity& g, int K, double sigma) {
  return kl_to_gaussian(g, equilibrium_variance(K, sigma));
}

/// Test functions used to measure weak convergence of empirical measures.
struct TestFunction {
  std::string name;
  std::function<double(double)> f;
};

inline const std::array<TestFunction, 3>& test_function_battery() {
  static const std::array<TestFunction, 3> battery{{
      {"tanh", [](double x) { return std::tanh(x); }},
      {"cos", [](double x) { return std::cos(x); }},
      {"gauss", [](double x) { return std::exp(-x * x); }},
  }};
  return battery;
}

/// |<emp - rho, f>| for each battery function.
inline std::array<double, 3> test_function_errors(std::span<const double> samples, const GridDensity& rho) {
  std::array<double, 3> out{};
  const auto& battery = test_function_battery();
  for (std::size_t k = 0; k < battery.size(); ++k) {
    double e = 0.0;
    for (double x : samples) e += battery[k].f(x);
    e /= static_cast<double>(samples.size());
    out[k] = std::abs(e - rho.integrate(battery[k].f));
  }
  return out;
}

/// Full report of rho against a reference density on the same grid.
inline MetricReport compare(const GridDensity& rho, const GridDensity& reference) {
  MetricReport r;
  r.w2 = w2_grid(rho, reference);
  r.kl = kl_divergence(rho, reference);
  r.tv = tv_distance(rho, reference);
  r.entropy_paper_sign = entropy_paper(rho);
  r.mean = rho.mean();
  r.variance = rho.variance();
  return r;
}

}  // namespace kavg::metrics
