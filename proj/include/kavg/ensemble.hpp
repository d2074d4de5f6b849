#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "kavg/model.hpp"
#include "kavg/random.hpp"

namespace kavg {

/// Positions of N particles in d dimensions at one time index, row-major.
class Ensemble {
 public:
  Ensemble() = default;

  Ensemble(std::int64_t n, int d, std::vector<double> positions, std::int64_t step = 0)
      : n_(n), d_(d), step_(step), positions_(std::move(positions)) {
    if (n < 1 || d < 1) throw PreconditionError("Ensemble: need N >= 1 and d >= 1");
    if (positions_.size() != static_cast<std::size_t>(n) * static_cast<std::size_t>(d))
      throw PreconditionError("Ensemble: position count does not match N*d");
    for (double x : positions_)
      if (!std::isfinite(x)) throw PreconditionError("Ensemble: non-finite coordinate");
  }

  std::int64_t size() const { return n_; }
  int dim() const { return d_; }
  std::int64_t step() const { return step_; }
  void set_step(std::int64_t s) { step_ = s; }

  std::span<const double> particle(std::int64_t i) const {
    return {positions_.data() + static_cast<std::size_t>(i) * d_, static_cast<std::size_t>(d_)};
  }
  std::span<double> particle(std::int64_t i) {
    return {positions_.data() + static_cast<std::size_t>(i) * d_, static_cast<std::size_t>(d_)};
  }
  std::span<const double> positions() const { return positions_; }

  /// Coordinate `c` of every particle.
  std::vector<double> coordinate(int c) const {
    std::vector<double> out(static_cast<std::size_t>(n_));
    for (std::int64_t i = 0; i < n_; ++i) out[static_cast<std::size_t>(i)] = positions_[static_cast<std::size_t>(i) * d_ + c];
    return out;
  }

  /// Center of mass (1/N) sum_i X_i.
  std::vector<double> center_of_mass() const {
    std::vector<double> c(static_cast<std::size_t>(d_), 0.0);
    for (std::int64_t i = 0; i < n_; ++i)
      for (int k = 0; k < d_; ++k) c[k] += positions_[static_cast<std::size_t>(i) * d_ + k];
    for (auto& v : c) v /= static_cast<double>(n_);
    return c;
  }

  /// Per-coordinate sample variance with divisor N.
  std::vector<double> variance() const {
    const auto c = center_of_mass();
    std::vector<double> v(static_cast<std::size_t>(d_), 0.0);
    for (std::int64_t i = 0; i < n_; ++i)
      for (int k = 0; k < d_; ++k) {
        const double dx = positions_[static_cast<std::size_t>(i) * d_ + k] - c[k];
        v[k] += dx * dx;
      }
    for (auto& x : v) x /= static_cast<double>(n_);
    return v;
  }

  bool operator==(const Ensemble&) const = default;

 private:
  std::int64_t n_ = 0;
  int d_ = 0;
  std::int64_t step_ = 0;
  std::vector<double> positions_;
};

/// The empirical measure (1/N) sum_i delta_{X_i}. A view; the ensemble must outlive it.
class EmpiricalMeasure {
 public:
  explicit EmpiricalMeasure(const Ensemble& ens) : ens_(&ens) {}

  std::int64_t size() const { return ens_->size(); }
  double weight() const { return 1.0 / static_cast<double>(ens_->size()); }
  double total_mass() const { return weight() * static_cast<double>(ens_->size()); }
  std::vector<double> mean() const { return ens_->center_of_mass(); }

  /// <mu, f> for a scalar test function of one coordinate.
  template <class F>
  double integrate(F&& f, int coord = 0) const {
    double s = 0.0;
    for (std::int64_t i = 0; i < ens_->size(); ++i) s += f(ens_->particle(i)[coord]);
    return s * weight();
  }

  /// Sorted samples of one coordinate.
  std::vector<double> sorted(int coord = 0) const {
    auto v = ens_->coordinate(coord);
    std::sort(v.begin(), v.end());
    return v;
  }

  /// Histogram of one coordinate on [lo, hi) with `bins` bins; returns bin masses.
  /// Samples outside the range fall into the end bins so the masses sum to 1.
  std::vector<double> histogram(double lo, double hi, int bins, int coord = 0) const {
    std::vector<double> h(static_cast<std::size_t>(bins), 0.0);
    const double width = (hi - lo) / bins;
    for (std::int64_t i = 0; i < ens_->size(); ++i) {
      const double x = ens_->particle(i)[coord];
      auto b = static_cast<long>(std::floor((x - lo) / width));
      b = std::clamp<long>(b, 0, bins - 1);
      h[static_cast<std::size_t>(b)] += weight();
    }
    return h;
  }

 private:
  const Ensemble* ens_;
};

inline EmpiricalMeasure empirical_measure(const Ensemble& ens) { return EmpiricalMeasure(ens); }

/// Initial conditions for particle ensembles.
namespace init {

inline Ensemble uniform(std::int64_t n, int d, double a, RandomSource& rng) {
  if (!(a > 0)) throw PreconditionError("uniform init: half-width must be > 0");
  std::vector<double> x(static_cast<std::size_t>(n) * d);
  for (auto& v : x) v = rng.uniform(-a, a);
  return Ensemble(n, d, std::move(x));
}

inline Ensemble gaussian(std::int64_t n, int d, double variance, RandomSource& rng) {
  if (!(variance > 0)) throw PreconditionError("gaussian init: variance must be > 0");
  const double s = std::sqrt(variance);
  std::vector<double> x(static_cast<std::size_t>(n) * d);
  for (auto& v : x) v = s * rng.normal();
  return Ensemble(n, d, std::move(x));
}

/// Laplace density (1/2) e^{-|x|} per coordinate.
inline Ensemble laplace(std::int64_t n, int d, RandomSource& rng) {
  std::vector<double> x(static_cast<std::size_t>(n) * d);
  for (auto& v : x) {
    const double e = rng.exponential(1.0);
    v = rng.uniform() < 0.5 ? -e : e;
  }
  return Ensemble(n, d, std::move(x));
}

inline Ensemble point(std::int64_t n, std::span<const double> x0) {
  std::vector<double> x;
  x.reserve(static_cast<std::size_t>(n) * x0.size());
  for (std::int64_t i = 0; i < n; ++i) x.insert(x.end(), x0.begin(), x0.end());
  return Ensemble(n, static_cast<int>(x0.size()), std::move(x));
}

/// Loads positions from a snapshot CSV (`step|time,particle,coord0,...`), taking the
/// rows of the first recorded step. A headerless file of bare coordinates is also accepted.
inline Ensemble from_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw PreconditionError("cannot open positions file: " + path);
  std::string line;
  std::vector<double> x;
  int d = -1;
  bool snapshot_schema = false;
  std::string first_step;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (line.rfind("step,", 0) == 0 || line.rfind("time,", 0) == 0) {
      snapshot_schema = true;
      continue;
    }
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
    std::size_t offset = 0;
    if (snapshot_schema) {
      if (first_step.empty()) first_step = fields.at(0);
      if (fields.at(0) != first_step) break;
      offset = 2;
    }
    const int row_d = static_cast<int>(fields.size() - offset);
    if (row_d < 1) throw PreconditionError("positions file: row without coordinates");
    if (d < 0) d = row_d;
    if (row_d != d) throw PreconditionError("positions file: inconsistent dimension");
    for (std::size_t k = offset; k < fields.size(); ++k) x.push_back(std::stod(fields[k]));
  }
  if (d < 0) throw PreconditionError("positions file has no rows: " + path);
  const auto n = static_cast<std::int64_t>(x.size() / static_cast<std::size_t>(d));
  return Ensemble(n, d, std::move(x));
}

}  // namespace init

/// Writes snapshots in the `<label>,particle,coord0[,coord1,...]` schema.
/// `label` is "step" for discrete runs and "time" for continuous runs; `stamps`
/// supplies the per-snapshot value of that column.
inline void write_snapshots_csv(std::ostream& out, std::span<const Ensemble> snapshots, const std::string& label,
                                std::span<const double> stamps = {}) {
  if (snapshots.empty()) return;
  out << "# kavg-snapshots v1\n" << label << ",particle";
  for (int k = 0; k < snapshots.front().dim(); ++k) out << ",coord" << k;
  out << '\n';
  out << std::setprecision(17);
  for (std::size_t s = 0; s < snapshots.size(); ++s) {
    const auto& ens = snapshots[s];
    for (std::int64_t i = 0; i < ens.size(); ++i) {
      if (stamps.empty())
        out << ens.step();
      else
        out << stamps[s];
      out << ',' << i;
      for (double v : ens.particle(i)) out << ',' << v;
      out << '\n';
    }
  }
}

}  // namespace kavg
