#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "phenocate/survdata.hpp"

namespace phenocate {

// Royston-Parmar natural cubic spline basis on the log-time axis:
// (1, x, v_1(x), ..., v_m(x)) with
//   v_j(x) = (x - k_j)^3_+ - l_j (x - k_min)^3_+ - (1 - l_j)(x - k_max)^3_+,
//   l_j = (k_max - k_j) / (k_max - k_min).
class SplineBasis {
 public:
  SplineBasis() = default;
  SplineBasis(double k_min, double k_max, std::vector<double> interior = {});

  // Boundary knots at the extreme log event times, interior knots at
  // equally spaced quantiles of the log event times.
  static SplineBasis from_log_times(std::span<const double> log_times, std::size_t interior_count);

  double k_min() const { return k_min_; }
  double k_max() const { return k_max_; }
  const std::vector<double>& interior() const { return interior_; }
  std::size_t interior_count() const { return interior_.size(); }
  std::size_t dimension() const { return interior_.size() + 2; }

  // Writes dimension() values into `out`.
  void evaluate(double x, std::span<double> out) const;
  void derivative(double x, std::span<double> out) const;

 private:
  double k_min_ = 0.0;
  double k_max_ = 1.0;
  std::vector<double> interior_;
};

std::vector<double> rp_basis(double x, const SplineBasis& basis);
std::vector<double> rp_basis_deriv(double x, const SplineBasis& basis);

// C2 natural cubic interpolant; linear extrapolation with the end slopes.
class Interpolant {
 public:
  Interpolant(std::vector<double> nodes, std::vector<double> values);

  double operator()(double t) const;
  double derivative(double t) const;
  double second_derivative(double t) const;

  const std::vector<double>& nodes() const { return nodes_; }
  const std::vector<double>& values() const { return values_; }

 private:
  std::size_t segment(double t) const;

  std::vector<double> nodes_;
  std::vector<double> values_;
  std::vector<double> m_;  // second derivatives at nodes
};

Interpolant natural_interpolate(std::vector<double> nodes, std::vector<double> values);

// Composite trapezoid rule over the grid.
double integrate_grid(std::span<const double> values, const TimeGrid& grid);

}  // namespace phenocate
