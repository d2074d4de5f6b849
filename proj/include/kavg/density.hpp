#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <sstream>
#include <utility>
#include <vector>

#include "kavg/fft.hpp"
#include "kavg/grid.hpp"
#include "kavg/model.hpp"

namespace kavg::density {

struct EngineOptions {
  /// Largest mass that may be removed by clipping negative spectral output.
  double clip_budget = 1e-9;
  /// Largest mass tolerated at |x| > 0.9 L on inputs to apply_T and the evolutions.
  double tail_threshold = 1e-8;
  /// Spectral output below this fraction of the peak value is FFT roundoff and is set to zero.
  double roundoff_floor = 1e-14;
};

namespace detail {

// Zeroes negative entries, checks the removed mass against the budget and
// renormalizes to unit mass.
inline GridDensity clip_and_normalize(GridSpec grid, std::vector<double> v, const EngineOptions& opts) {
  double clipped = 0.0;
  double peak = 0.0;
  for (auto& x : v) {
    if (x < 0.0) {
      clipped -= x;
      x = 0.0;
    }
    peak = std::max(peak, x);
  }
  const double floor = opts.roundoff_floor * peak;
  for (auto& x : v)
    if (x < floor) x = 0.0;
  clipped *= grid.spacing();
  if (clipped > opts.clip_budget) {
    std::ostringstream msg;
    msg << "convolution accuracy failure: refine grid (clipped mass " << clipped << ")";
    throw AccuracyError(msg.str());
  }
  return GridDensity::normalized(grid, std::move(v));
}

inline std::complex<double> ipow(std::complex<double> z, int k) {
  std::complex<double> r{1.0, 0.0};
  while (k > 0) {
    if (k & 1) r *= z;
    z *= z;
    k >>= 1;
  }
  return r;
}

}  // namespace detail

/// K-fold self-convolution rho * ... * rho on the K-times wider grid with the same spacing.
inline GridDensity self_convolve(const GridDensity& rho, int K, const EngineOptions& opts = {}) {
  if (K < 1) throw PreconditionError("self_convolve: K must be >= 1");
  if (K == 1) return rho;
  const GridSpec out_grid = rho.grid().extended(K);
  const auto out_n = static_cast<std::size_t>(out_grid.points);
  // Linear convolution support is K(M-1)+1 <= K*M nodes, so K*M padding avoids wraparound.
  fft::RealTransform tr(fft::good_size(out_n));
  auto buf = tr.real();
  std::fill(buf.begin(), buf.end(), 0.0);
  std::copy(rho.values().begin(), rho.values().end(), buf.begin());
  tr.forward();
  const double scale = std::pow(rho.dx(), K - 1) / static_cast<double>(tr.size());
  for (auto& z : tr.spectrum()) z = detail::ipow(z, K) * scale;
  tr.backward();
  std::vector<double> out(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(out_n));
  return detail::clip_and_normalize(out_grid, std::move(out), opts);
}

/// rho * nu for two densities on the same grid; result lives on the 2x wider grid.
inline GridDensity convolve(const GridDensity& rho, const GridDensity& nu, const EngineOptions& opts = {}) {
  if (!(rho.grid() == nu.grid())) throw PreconditionError("convolve: grids differ");
  const GridSpec out_grid = rho.grid().extended(2);
  const auto out_n = static_cast<std::size_t>(out_grid.points);
  fft::RealTransform a(fft::good_size(out_n));
  fft::RealTransform b(a.size());
  std::fill(a.real().begin(), a.real().end(), 0.0);
  std::fill(b.real().begin(), b.real().end(), 0.0);
  std::copy(rho.values().begin(), rho.values().end(), a.real().begin());
  std::copy(nu.values().begin(), nu.values().end(), b.real().begin());
  a.forward();
  b.forward();
  const double scale = rho.dx() / static_cast<double>(a.size());
  auto sa = a.spectrum();
  auto sb = b.spectrum();
  for (std::size_t k = 0; k < sa.size(); ++k) sa[k] *= sb[k] * scale;
  a.backward();
  std::vector<double> out(a.real().begin(), a.real().begin() + static_cast<std::ptrdiff_t>(out_n));
  return detail::clip_and_normalize(out_grid, std::move(out), opts);
}

/// x -> a * rho(a x), sampled on the base grid of rho and renormalized.
///
/// When rho lives on a factor-K extended grid and a == K, node K x_j of the
/// extended grid is exactly node x_j scaled, so this is a stride-K restriction.
/// Otherwise the value is linearly interpolated.
inline GridDensity scale(const GridDensity& rho, double a) {
  if (!(a > 0.0) || !std::isfinite(a)) throw PreconditionError("scale: a must be > 0");
  const GridSpec out_grid = rho.grid().base();
  const auto m = static_cast<std::size_t>(out_grid.points);
  std::vector<double> out(m);
  const auto f = rho.grid().factor;
  if (a == static_cast<double>(f)) {
    for (std::size_t j = 0; j < m; ++j) out[j] = a * rho[j * static_cast<std::size_t>(f)];
  } else {
    for (std::size_t j = 0; j < m; ++j) out[j] = a * rho.at(a * out_grid.x(static_cast<std::int64_t>(j)));
  }
  return GridDensity::normalized(out_grid, std::move(out));
}

/// phi_sigma * rho by multiplying the spectrum with exp(-sigma^2 xi^2 / 2).
/// The input is zero padded so the periodic convolution does not wrap.
inline GridDensity gaussian_smooth(const GridDensity& rho, double sigma, const EngineOptions& opts = {}) {
  if (!(sigma > 0.0)) throw PreconditionError("gaussian_smooth: sigma must be > 0");
  const double dx = rho.dx();
  if (dx > sigma / 5.0) {
    std::ostringstream msg;
    msg << "gaussian_smooth: grid does not resolve sigma (dx " << dx << " > sigma/5 = " << sigma / 5.0 << ")";
    throw PreconditionError(msg.str());
  }
  const auto m = rho.size();
  const auto pad = static_cast<std::size_t>(std::ceil(12.0 * sigma / dx));
  fft::RealTransform tr(fft::good_size(m + 2 * pad));
  auto buf = tr.real();
  std::fill(buf.begin(), buf.end(), 0.0);
  std::copy(rho.values().begin(), rho.values().end(), buf.begin() + static_cast<std::ptrdiff_t>(pad));
  tr.forward();
  const auto n = static_cast<double>(tr.size());
  const double dxi = 2.0 * std::numbers::pi / (n * dx);
  auto spec = tr.spectrum();
  for (std::size_t k = 0; k < spec.size(); ++k) {
    const double xi = dxi * static_cast<double>(k);
    spec[k] *= std::exp(-0.5 * sigma * sigma * xi * xi) / n;
  }
  tr.backward();
  std::vector<double> out(buf.begin() + static_cast<std::ptrdiff_t>(pad),
                          buf.begin() + static_cast<std::ptrdiff_t>(pad + m));
  return detail::clip_and_normalize(rho.grid(), std::move(out), opts);
}

/// T[rho] = phi_sigma * S_K[C_K[rho]]: the one-step mean-field map.
inline GridDensity apply_T(const GridDensity& rho, int K, double sigma, const EngineOptions& opts = {}) {
  if (K < 2) throw PreconditionError("apply_T: K must be >= 2");
  if (rho.grid().factor != 1) throw PreconditionError("apply_T: input must live on a base grid");
  rho.check_tail(opts.tail_threshold);
  return gaussian_smooth(scale(self_convolve(rho, K, opts), K), sigma, opts);
}

/// [rho^0, T rho^0, ..., T^n rho^0].
inline std::vector<GridDensity> iterate(const GridDensity& rho0, int K, double sigma, int n_steps,
                                        const EngineOptions& opts = {}) {
  if (n_steps < 0) throw PreconditionError("iterate: n_steps must be >= 0");
  std::vector<GridDensity> out;
  out.reserve(static_cast<std::size_t>(n_steps) + 1);
  out.push_back(rho0);
  for (int n = 0; n < n_steps; ++n) out.push_back(apply_T(out.back(), K, sigma, opts));
  return out;
}

struct TimedDensity {
  double time;
  GridDensity rho;
};

/// Forward Euler for d/dt rho = lambda (T[rho] - rho), written as the convex
/// mixture (1 - lambda dt) rho + lambda dt T[rho]. One snapshot per step.
inline std::vector<TimedDensity> evolve_continuous(const GridDensity& rho0, int K, double sigma, double lambda,
                                                   double t_end, double dt, const EngineOptions& opts = {}) {
  if (!(dt > 0.0)) throw PreconditionError("evolve_continuous: dt must be > 0");
  if (!(lambda >= 0.0)) throw PreconditionError("evolve_continuous: lambda must be >= 0");
  if (!(t_end >= 0.0)) throw PreconditionError("evolve_continuous: t_end must be >= 0");
  if (lambda * dt > 0.1) throw PreconditionError("time step too large");
  const auto steps = static_cast<std::int64_t>(std::llround(t_end / dt));
  std::vector<TimedDensity> out;
  out.reserve(static_cast<std::size_t>(steps) + 1);
  out.push_back({0.0, rho0});
  const double w = lambda * dt;
  for (std::int64_t s = 1; s <= steps; ++s) {
    const GridDensity& cur = out.back().rho;
    if (w == 0.0) {
      out.push_back({static_cast<double>(s) * dt, cur});
      continue;
    }
    const GridDensity t_rho = apply_T(cur, K, sigma, opts);
    std::vector<double> next(cur.size());
    for (std::size_t j = 0; j < next.size(); ++j) next[j] = (1.0 - w) * cur[j] + w * t_rho[j];
    out.push_back({static_cast<double>(s) * dt, GridDensity::normalized(cur.grid(), std::move(next))});
  }
  return out;
}

}  // namespace kavg::density
