#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>

namespace kavg {

/// Raised when a formula is evaluated outside the parameter range where it is defined.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Raised when an operation's input violates a documented precondition.
class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a numerical step cannot meet its accuracy budget on the given grid.
class AccuracyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parameters of the K-averaging particle model.
///
/// `lambda` only matters for the continuous-time model.
struct ModelParams {
  int d = 1;
  int K = 2;
  double sigma = 0.1;
  double lambda = 1.0;
  std::int64_t N = 1;

  void validate() const {
    if (d < 1) throw PreconditionError("ModelParams: d must be >= 1");
    if (K < 1) throw PreconditionError("ModelParams: K must be >= 1");
    if (N < 1) throw PreconditionError("ModelParams: N must be >= 1");
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw PreconditionError("ModelParams: sigma must be > 0");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw PreconditionError("ModelParams: lambda must be >= 0");
  }
};

/// Stationary variance K sigma^2 / (K - 1) of the mean-field dynamics.
inline double equilibrium_variance(int K, double sigma) {
  if (K < 2) throw DomainError("equilibrium undefined for K < 2");
  if (!(sigma > 0.0)) throw PreconditionError("equilibrium_variance: sigma must be > 0");
  return static_cast<double>(K) * sigma * sigma / static_cast<double>(K - 1);
}

inline double gaussian_pdf(double x, double variance) {
  return std::exp(-0.5 * x * x / variance) / std::sqrt(2.0 * std::numbers::pi * variance);
}

}  // namespace kavg
