#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <vector>

#include "kavg/ensemble.hpp"
#include "kavg/model.hpp"
#include "kavg/random.hpp"

namespace kavg::continuous {

/// How the clock rate lambda is read.
enum class RateMode {
  per_particle,  ///< every particle carries its own rate-lambda clock; total rate N*lambda
  global,        ///< one rate-lambda clock for the whole system
};

struct EventLog {
  std::vector<double> times;
  std::vector<std::int64_t> particle_ids;

  std::size_t size() const { return times.size(); }
};

struct Trajectory {
  std::vector<Ensemble> snapshots;
  std::vector<double> snapshot_times;
  EventLog events;
};

inline double total_rate(const ModelParams& params, RateMode mode) {
  return mode == RateMode::per_particle ? params.lambda * static_cast<double>(params.N) : params.lambda;
}

/// Exact event-driven simulation on [0, t_end].
///
/// Snapshot at time t holds the state after every event with event time <= t.
inline Trajectory simulate(const Ensemble& ens0, const ModelParams& params, double t_end, RandomSource rng,
                           std::span<const double> snapshot_times, RateMode mode = RateMode::per_particle) {
  params.validate();
  if (ens0.size() != params.N || ens0.dim() != params.d)
    throw PreconditionError("simulate: ensemble does not match params");
  if (!(t_end >= 0.0)) throw PreconditionError("simulate: t_end must be >= 0");
  if (!std::is_sorted(snapshot_times.begin(), snapshot_times.end()))
    throw PreconditionError("simulate: snapshot_times must be sorted");
  if (!snapshot_times.empty() && (snapshot_times.front() < 0.0 || snapshot_times.back() > t_end))
    throw PreconditionError("simulate: snapshot_times must lie in [0, t_end]");

  Trajectory out;
  Ensemble state = ens0;
  const double rate = total_rate(params, mode);
  const std::int64_t n = params.N;
  const int d = params.d;
  std::size_t next_snap = 0;
  std::vector<double> z(static_cast<std::size_t>(d));

  auto record_until = [&](double t_limit, bool inclusive) {
    while (next_snap < snapshot_times.size() &&
           (inclusive ? snapshot_times[next_snap] <= t_limit : snapshot_times[next_snap] < t_limit)) {
      out.snapshots.push_back(state);
      out.snapshot_times.push_back(snapshot_times[next_snap]);
      ++next_snap;
    }
  };

  double t = 0.0;
  if (rate > 0.0) {
    while (true) {
      const double t_next = t + rng.exponential(rate);
      if (t_next > t_end) break;
      // Snapshots strictly before the event see the pre-event state.
      record_until(t_next, false);
      t = t_next;
      const auto i = static_cast<std::int64_t>(rng.index(static_cast<std::uint64_t>(n)));
      std::fill(z.begin(), z.end(), 0.0);
      for (int j = 0; j < params.K; ++j) {
        const auto x = state.particle(static_cast<std::int64_t>(rng.index(static_cast<std::uint64_t>(n))));
        for (int k = 0; k < d; ++k) z[k] += x[k];
      }
      auto target = state.particle(i);
      for (int k = 0; k < d; ++k) target[k] = z[k] / params.K + params.sigma * rng.normal();
      out.events.times.push_back(t);
      out.events.particle_ids.push_back(i);
    }
  }
  record_until(std::numeric_limits<double>::infinity(), true);
  return out;
}

}  // namespace kavg::continuous
