#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "kavg/ensemble.hpp"
#include "kavg/model.hpp"
#include "kavg/parallel.hpp"
#include "kavg/random.hpp"

namespace kavg::discrete {

struct StepOptions {
  /// Draw neighbours from the other N-1 particles only. Off by default: the
  /// model draws neighbour indices uniformly from all N particles.
  bool exclude_self = false;
  unsigned workers = 1;
};

namespace detail {

/// New position of particle `i`, read from the step-n snapshot only.
/// `relabel` maps a drawn index to the label it refers to in `snapshot`.
template <class Relabel>
void update_particle(const Ensemble& snapshot, std::int64_t i, const ModelParams& params, RandomSource rng,
                     const StepOptions& opts, Relabel&& relabel, std::span<double> out) {
  const std::int64_t n = snapshot.size();
  const int d = snapshot.dim();
  std::fill(out.begin(), out.end(), 0.0);
  for (int j = 0; j < params.K; ++j) {
    std::int64_t pick;
    if (opts.exclude_self) {
      pick = static_cast<std::int64_t>(rng.index(static_cast<std::uint64_t>(n - 1)));
      if (pick >= i) ++pick;
    } else {
      pick = static_cast<std::int64_t>(rng.index(static_cast<std::uint64_t>(n)));
    }
    const auto x = snapshot.particle(relabel(pick));
    for (int k = 0; k < d; ++k) out[k] += x[k];
  }
  const double inv_k = 1.0 / params.K;
  for (int k = 0; k < d; ++k) out[k] = out[k] * inv_k + params.sigma * rng.normal();
}

}  // namespace detail

/// Randomness for particle i at step n: an independent substream of the replica source.
inline RandomSource particle_stream(const RandomSource& replica, std::int64_t step, std::int64_t particle) {
  return replica.derive(static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(particle));
}

inline void check_consistent(const Ensemble& ens, const ModelParams& params, const StepOptions& opts) {
  params.validate();
  if (ens.size() != params.N) throw PreconditionError("ensemble size does not match N");
  if (ens.dim() != params.d) throw PreconditionError("ensemble dimension does not match d");
  if (opts.exclude_self && params.N < 2) throw PreconditionError("exclude_self needs N >= 2");
}

/// One synchronous update of every particle. The input is not modified.
inline Ensemble step(const Ensemble& ens, const ModelParams& params, const RandomSource& rng,
                     const StepOptions& opts = {}) {
  check_consistent(ens, params, opts);
  const std::int64_t n = ens.size();
  std::vector<double> next(static_cast<std::size_t>(n) * ens.dim());
  auto identity = [](std::int64_t j) { return j; };
  parallel_for(
      static_cast<std::size_t>(n),
      [&](std::size_t i) {
        const auto ii = static_cast<std::int64_t>(i);
        std::span<double> out(next.data() + i * ens.dim(), static_cast<std::size_t>(ens.dim()));
        detail::update_particle(ens, ii, params, particle_stream(rng, ens.step(), ii), opts, identity, out);
      },
      opts.workers);
  return Ensemble(n, ens.dim(), std::move(next), ens.step() + 1);
}

/// Iterates `step` n_steps times, keeping the snapshots at multiples of
/// record_every plus the final one.
inline std::vector<Ensemble> run(const Ensemble& ens0, const ModelParams& params, std::int64_t n_steps,
                                 const RandomSource& rng, std::int64_t record_every, const StepOptions& opts = {}) {
  if (n_steps < 0) throw PreconditionError("run: n_steps must be >= 0");
  if (record_every < 1) throw PreconditionError("run: record_every must be >= 1");
  check_consistent(ens0, params, opts);
  std::vector<Ensemble> out{ens0};
  Ensemble cur = ens0;
  for (std::int64_t s = 1; s <= n_steps; ++s) {
    cur = step(cur, params, rng, opts);
    if (s % record_every == 0 || s == n_steps) out.push_back(cur);
  }
  return out;
}

/// C_{n+1} - C_n along a trajectory recorded at every step.
inline std::vector<std::vector<double>> center_of_mass_increments(std::span<const Ensemble> trajectory) {
  if (trajectory.size() < 2) throw PreconditionError("center_of_mass_increments: need at least 2 snapshots");
  std::vector<std::vector<double>> out;
  out.reserve(trajectory.size() - 1);
  auto prev = trajectory[0].center_of_mass();
  for (std::size_t s = 1; s < trajectory.size(); ++s) {
    if (trajectory[s].step() != trajectory[s - 1].step() + 1)
      throw PreconditionError("center_of_mass_increments: trajectory must be recorded every step");
    auto cur = trajectory[s].center_of_mass();
    std::vector<double> inc(cur.size());
    for (std::size_t k = 0; k < cur.size(); ++k) inc[k] = cur[k] - prev[k];
    out.push_back(std::move(inc));
    prev = std::move(cur);
  }
  return out;
}

}  // namespace kavg::discrete
