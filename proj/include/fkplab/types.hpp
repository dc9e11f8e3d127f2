#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace fkplab {

/// A point of R^n, n in {1, 2}. For n = 1 only the first coordinate is used.
using Point = std::array<double, 2>;

inline double distance(const Point& a, const Point& b, int n) {
  const double dx = a[0] - b[0];
  if (n == 1) return std::abs(dx);
  return std::hypot(dx, a[1] - b[1]);
}

/// Lebesgue volume of the unit ball of R^n, so that |Delta(x,r)| = gamma_n r^n.
constexpr double unit_ball_volume(int n) { return n == 1 ? 2.0 : std::numbers::pi; }

/// The ball Delta(x, r).
struct BallQuery {
  Point center{0.0, 0.0};
  double radius = 1.0;

  void validate() const {
    if (!(radius > 0.0) || !std::isfinite(radius))
      throw std::invalid_argument("BallQuery: radius must be positive and finite");
  }

  double volume(int n) const { return unit_ball_volume(n) * std::pow(radius, n); }
};

/// The Carleson box T_Delta = Delta x (0, r(Delta)).
struct CarlesonBox {
  BallQuery base;
};

// Error types. Results that are merely suspicious carry flags instead.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class OutOfDomain : public Error {
 public:
  using Error::Error;
};

class PositivityViolation : public Error {
 public:
  using Error::Error;
};

/// Quadrature could not reach the requested tolerance. Carries the best estimate.
class ToleranceNotMet : public Error {
 public:
  ToleranceNotMet(const std::string& what, double best_estimate, double error_bound)
      : Error(what), best_estimate_(best_estimate), error_bound_(error_bound) {}
  double best_estimate() const noexcept { return best_estimate_; }
  double error_bound() const noexcept { return error_bound_; }

 private:
  double best_estimate_;
  double error_bound_;
};

class SolverError : public Error {
 public:
  SolverError(const std::string& what, double residual) : Error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

class ConfigError : public Error {
 public:
  ConfigError(const std::string& field, const std::string& message)
      : Error("config field '" + field + "': " + message), field_(field) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace fkplab
