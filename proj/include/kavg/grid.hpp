#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "kavg/model.hpp"

namespace kavg {

/// Uniform 1-D grid x_j = -L + j*dx, j = 0..M-1, dx = 2L/M.
///
/// `factor` > 1 marks the extended grid produced by a factor-fold convolution
/// on a base grid (L/factor, M/factor): same spacing, factor times wider.
struct GridSpec {
  double half_width = 4.0;
  std::int64_t points = 1 << 14;
  std::int64_t factor = 1;

  /// A validated base grid: M a power of two, M >= 256, L > 0.
  static GridSpec make(double half_width, std::int64_t points) {
    if (!(half_width > 0.0) || !std::isfinite(half_width)) throw PreconditionError("GridSpec: half-width must be > 0");
    if (points < 256 || (points & (points - 1)) != 0)
      throw PreconditionError("GridSpec: point count must be a power of two >= 256");
    return GridSpec{half_width, points, 1};
  }

  static GridSpec default_grid() { return make(4.0, std::int64_t{1} << 14); }

  double spacing() const { return 2.0 * half_width / static_cast<double>(points); }
  double x(std::int64_t j) const { return -half_width + static_cast<double>(j) * spacing(); }

  GridSpec extended(std::int64_t k) const {
    return GridSpec{half_width * static_cast<double>(k), points * k, factor * k};
  }
  GridSpec base() const {
    return GridSpec{half_width / static_cast<double>(factor), points / factor, 1};
  }

  bool operator==(const GridSpec& o) const {
    return points == o.points && factor == o.factor && half_width == o.half_width;
  }
};

/// Nonnegative unit-mass density sampled at the nodes of a GridSpec.
class GridDensity {
 public:
  static constexpr double kMassTolerance = 1e-10;

  GridDensity() = default;

  /// Takes the values as-is; they must already be nonnegative with unit mass.
  GridDensity(GridSpec grid, std::vector<double> values) : grid_(grid), values_(std::move(values)) {
    if (static_cast<std::int64_t>(values_.size()) != grid_.points)
      throw PreconditionError("GridDensity: value count does not match grid");
    for (double v : values_)
      if (!(v >= 0.0) || !std::isfinite(v)) throw PreconditionError("GridDensity: values must be finite and >= 0");
    if (std::abs(mass() - 1.0) > kMassTolerance) throw PreconditionError("GridDensity: mass is not 1");
  }

  /// Nonnegative values of any positive mass, divided through by that mass.
  static GridDensity normalized(GridSpec grid, std::vector<double> values) {
    double s = 0.0;
    for (double v : values) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw PreconditionError("GridDensity: values must be finite and >= 0");
      s += v;
    }
    s *= grid.spacing();
    if (!(s > 0.0)) throw PreconditionError("GridDensity: zero mass");
    for (auto& v : values) v /= s;
    return GridDensity(grid, std::move(values));
  }

  const GridSpec& grid() const { return grid_; }
  const std::vector<double>& values() const { return values_; }
  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t j) const { return values_[j]; }
  double dx() const { return grid_.spacing(); }

  double mass() const {
    double s = 0.0;
    for (double v : values_) s += v;
    return s * dx();
  }

  double mean() const {
    double s = 0.0;
    for (std::size_t j = 0; j < values_.size(); ++j) s += grid_.x(static_cast<std::int64_t>(j)) * values_[j];
    return s * dx();
  }

  double variance() const {
    const double m = mean();
    double s = 0.0;
    for (std::size_t j = 0; j < values_.size(); ++j) {
      const double y = grid_.x(static_cast<std::int64_t>(j)) - m;
      s += y * y * values_[j];
    }
    return s * dx();
  }

  /// Second moment about a point.
  double second_moment(double about = 0.0) const {
    double s = 0.0;
    for (std::size_t j = 0; j < values_.size(); ++j) {
      const double y = grid_.x(static_cast<std::int64_t>(j)) - about;
      s += y * y * values_[j];
    }
    return s * dx();
  }

  /// Mass at nodes with |x| > 0.9 L.
  double tail_mass() const {
    const double edge = 0.9 * grid_.half_width;
    double s = 0.0;
    for (std::size_t j = 0; j < values_.size(); ++j)
      if (std::abs(grid_.x(static_cast<std::int64_t>(j))) > edge) s += values_[j];
    return s * dx();
  }

  void check_tail(double threshold) const {
    const double t = tail_mass();
    if (t > threshold) {
      std::ostringstream msg;
      msg << "density tail truncated: mass " << t << " outside 0.9*L exceeds " << threshold;
      throw AccuracyError(msg.str());
    }
  }

  /// Linear interpolation of the node values; zero outside the grid.
  double at(double x) const {
    const double u = (x - grid_.x(0)) / dx();
    if (u < 0.0 || u > static_cast<double>(values_.size() - 1)) return 0.0;
    const auto j = static_cast<std::size_t>(std::floor(u));
    if (j + 1 >= values_.size()) return values_.back();
    const double w = u - static_cast<double>(j);
    return (1.0 - w) * values_[j] + w * values_[j + 1];
  }

  template <class F>
  double integrate(F&& f) const {
    double s = 0.0;
    for (std::size_t j = 0; j < values_.size(); ++j) s += f(grid_.x(static_cast<std::int64_t>(j))) * values_[j];
    return s * dx();
  }

 private:
  GridSpec grid_;
  std::vector<double> values_;
};

/// Densities used as initial data and references.
namespace densities {

/// (1/2a) on [-a, a]; nodes landing exactly on +-a get half weight.
inline GridDensity uniform(const GridSpec& grid, double a = 1.0) {
  if (!(a > 0.0)) throw PreconditionError("uniform density: a must be > 0");
  std::vector<double> v(static_cast<std::size_t>(grid.points));
  const double tol = 1e-9 * grid.spacing();
  for (std::int64_t j = 0; j < grid.points; ++j) {
    const double ax = std::abs(grid.x(j));
    v[static_cast<std::size_t>(j)] = ax < a - tol ? 1.0 : (ax <= a + tol ? 0.5 : 0.0);
  }
  return GridDensity::normalized(grid, std::move(v));
}

/// (1/2) e^{-|x|}.
inline GridDensity laplace(const GridSpec& grid) {
  std::vector<double> v(static_cast<std::size_t>(grid.points));
  for (std::int64_t j = 0; j < grid.points; ++j) v[static_cast<std::size_t>(j)] = 0.5 * std::exp(-std::abs(grid.x(j)));
  return GridDensity::normalized(grid, std::move(v));
}

inline GridDensity gaussian(const GridSpec& grid, double variance, double mean = 0.0) {
  if (!(variance > 0.0)) throw PreconditionError("gaussian density: variance must be > 0");
  std::vector<double> v(static_cast<std::size_t>(grid.points));
  for (std::int64_t j = 0; j < grid.points; ++j)
    v[static_cast<std::size_t>(j)] = gaussian_pdf(grid.x(j) - mean, variance);
  return GridDensity::normalized(grid, std::move(v));
}

/// Translates a density so its mean is zero (linear interpolation of the shift).
inline GridDensity recentered(const GridDensity& rho) {
  const double m = rho.mean();
  if (std::abs(m) < 1e-14) return rho;
  std::vector<double> v(rho.size());
  for (std::size_t j = 0; j < v.size(); ++j) v[j] = rho.at(rho.grid().x(static_cast<std::int64_t>(j)) + m);
  return GridDensity::normalized(rho.grid(), std::move(v));
}

}  // namespace densities

/// N(0, K sigma^2/(K-1)) on the grid, renormalized to unit discrete mass.
inline GridDensity equilibrium_density(const GridSpec& grid, int K, double sigma) {
  const double var = equilibrium_variance(K, sigma);
  if (grid.half_width < 8.0 * std::sqrt(var)) throw AccuracyError("equilibrium tail truncated");
  return densities::gaussian(grid, var);
}

/// Writes `x,value` rows under a versioned comment header. `meta` entries are
/// recorded in the header as key=value pairs.
inline void write_density_csv(std::ostream& out, const GridDensity& rho,
                              const std::map<std::string, std::string>& meta = {}) {
  out << std::setprecision(17);
  out << "# kavg-density v1 half_width=" << rho.grid().half_width << " points=" << rho.grid().points
      << " factor=" << rho.grid().factor;
  for (const auto& [k, v] : meta) out << ' ' << k << '=' << v;
  out << "\nx,value\n";
  for (std::size_t j = 0; j < rho.size(); ++j) out << rho.grid().x(static_cast<std::int64_t>(j)) << ',' << rho[j] << '\n';
}

inline void write_density_csv(const std::string& path, const GridDensity& rho,
                              const std::map<std::string, std::string>& meta = {}) {
  std::ofstream out(path);
  if (!out) throw PreconditionError("cannot write density file: " + path);
  write_density_csv(out, rho, meta);
}

/// Reads the `x,value` format, reconstructing the grid from the header (or from
/// the x column when the header is absent) and re-validating the invariants.
inline GridDensity read_density_csv(std::istream& in) {
  std::string line;
  std::vector<double> xs, vals;
  double half_width = -1.0;
  std::int64_t points = -1, factor = 1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::stringstream ss(line.substr(1));
      for (std::string tok; ss >> tok;) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) continue;
        const auto key = tok.substr(0, eq);
        const auto val = tok.substr(eq + 1);
        if (key == "half_width") half_width = std::stod(val);
        if (key == "points") points = std::stoll(val);
        if (key == "factor") factor = std::stoll(val);
      }
      continue;
    }
    if (line.rfind("x,", 0) == 0) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw PreconditionError("density file: malformed row '" + line + "'");
    xs.push_back(std::stod(line.substr(0, comma)));
    vals.push_back(std::stod(line.substr(comma + 1)));
  }
  if (vals.size() < 2) throw PreconditionError("density file: too few rows");
  if (half_width < 0) half_width = -xs.front();
  if (points < 0) points = static_cast<std::int64_t>(vals.size());
  if (static_cast<std::int64_t>(vals.size()) != points) throw PreconditionError("density file: row count does not match header");
  GridSpec grid = factor == 1 ? GridSpec::make(half_width, points) : GridSpec{half_width, points, factor};
  const double dx = grid.spacing();
  for (std::size_t j = 0; j < xs.size(); ++j)
    if (std::abs(xs[j] - grid.x(static_cast<std::int64_t>(j))) > 1e-9 * std::max(1.0, half_width) + 1e-6 * dx)
      throw PreconditionError("density file: x column is not the declared uniform grid");
  return GridDensity(grid, std::move(vals));
}

inline GridDensity read_density_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw PreconditionError("cannot open density file: " + path);
  return read_density_csv(in);
}

}  // namespace kavg
