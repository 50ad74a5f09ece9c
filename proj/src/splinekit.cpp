#include "phenocate/splinekit.hpp"

#include <algorithm>
#include <cmath>

#include "phenocate/error.hpp"

namespace phenocate {

namespace {

double cube_plus(double u) { return u > 0.0 ? u * u * u : 0.0; }
double square_plus(double u) { return u > 0.0 ? u * u : 0.0; }

}  // namespace

SplineBasis::SplineBasis(double k_min, double k_max, std::vector<double> interior)
    : k_min_(k_min), k_max_(k_max), interior_(std::move(interior)) {
  if (!(k_min_ < k_max_) || !std::isfinite(k_min_) || !std::isfinite(k_max_)) {
    throw DataError("spline basis: boundary knots must be finite with k_min < k_max");
  }
  for (std::size_t j = 0; j < interior_.size(); ++j) {
    if (!(interior_[j] > k_min_ && interior_[j] < k_max_)) {
      throw DataError("spline basis: interior knots must lie strictly inside the boundaries");
    }
    if (j > 0 && !(interior_[j] > interior_[j - 1])) {
      throw DataError("spline basis: interior knots must be strictly increasing");
    }
  }
}

SplineBasis SplineBasis::from_log_times(std::span<const double> log_times, std::size_t interior_count) {
  if (log_times.size() < 2) throw DataError("spline basis: need at least two event times");
  std::vector<double> x(log_times.begin(), log_times.end());
  std::sort(x.begin(), x.end());
  std::vector<double> interior;
  for (std::size_t j = 1; j <= interior_count; ++j) {
    const double p = static_cast<double>(j) / static_cast<double>(interior_count + 1);
    const double pos = p * static_cast<double>(x.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, x.size() - 1);
    interior.push_back(x[lo] + (pos - static_cast<double>(lo)) * (x[hi] - x[lo]));
  }
  return SplineBasis(x.front(), x.back(), std::move(interior));
}

void SplineBasis::evaluate(double x, std::span<double> out) const {
  out[0] = 1.0;
  out[1] = x;
  const double span = k_max_ - k_min_;
  const double lo = cube_plus(x - k_min_);
  const double hi = cube_plus(x - k_max_);
  for (std::size_t j = 0; j < interior_.size(); ++j) {
    const double lambda = (k_max_ - interior_[j]) / span;
    out[j + 2] = cube_plus(x - interior_[j]) - lambda * lo - (1.0 - lambda) * hi;
  }
}

void SplineBasis::derivative(double x, std::span<double> out) const {
  out[0] = 0.0;
  out[1] = 1.0;
  const double span = k_max_ - k_min_;
  const double lo = 3.0 * square_plus(x - k_min_);
  const double hi = 3.0 * square_plus(x - k_max_);
  for (std::size_t j = 0; j < interior_.size(); ++j) {
    const double lambda = (k_max_ - interior_[j]) / span;
    out[j + 2] = 3.0 * square_plus(x - interior_[j]) - lambda * lo - (1.0 - lambda) * hi;
  }
}

std::vector<double> rp_basis(double x, const SplineBasis& basis) {
  std::vector<double> out(basis.dimension());
  basis.evaluate(x, out);
  return out;
}

std::vector<double> rp_basis_deriv(double x, const SplineBasis& basis) {
  std::vector<double> out(basis.dimension());
  basis.derivative(x, out);
  return out;
}

Interpolant::Interpolant(std::vector<double> nodes, std::vector<double> values)
    : nodes_(std::move(nodes)), values_(std::move(values)) {
  const std::size_t n = nodes_.size();
  if (n < 2) throw DataError("natural_interpolate: need at least 2 nodes");
  if (values_.size() != n) throw DataError("natural_interpolate: node/value count mismatch");
  for (std::size_t i = 1; i < n; ++i) {
    if (!(nodes_[i] > nodes_[i - 1])) {
      throw DataError("natural_interpolate: nodes must be strictly increasing (duplicate node?)");
    }
  }
  m_.assign(n, 0.0);
  if (n == 2) return;

  // Tridiagonal system for interior second derivatives (Thomas algorithm).
  const std::size_t k = n - 2;
  std::vector<double> diag(k), upper(k), rhs(k);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double h0 = nodes_[i] - nodes_[i - 1];
    const double h1 = nodes_[i + 1] - nodes_[i];
    diag[i - 1] = 2.0 * (h0 + h1);
    upper[i - 1] = h1;
    rhs[i - 1] = 6.0 * ((values_[i + 1] - values_[i]) / h1 - (values_[i] - values_[i - 1]) / h0);
  }
  for (std::size_t i = 1; i < k; ++i) {
    const double lower = nodes_[i + 1] - nodes_[i];
    const double w = lower / diag[i - 1];
    diag[i] -= w * upper[i - 1];
    rhs[i] -= w * rhs[i - 1];
  }
  m_[k] = rhs[k - 1] / diag[k - 1];
  for (std::size_t i = k - 1; i >= 1; --i) {
    m_[i] = (rhs[i - 1] - upper[i - 1] * m_[i + 1]) / diag[i - 1];
  }
}

std::size_t Interpolant::segment(double t) const {
  auto it = std::upper_bound(nodes_.begin(), nodes_.end(), t);
  auto i = static_cast<std::size_t>(it - nodes_.begin());
  if (i == 0) return 0;
  return std::min(i - 1, nodes_.size() - 2);
}

double Interpolant::operator()(double t) const {
  if (t <= nodes_.front()) return values_.front() + derivative(nodes_.front()) * (t - nodes_.front());
  if (t >= nodes_.back()) return values_.back() + derivative(nodes_.back()) * (t - nodes_.back());
  const std::size_t i = segment(t);
  const double h = nodes_[i + 1] - nodes_[i];
  const double a = (nodes_[i + 1] - t) / h;
  const double b = (t - nodes_[i]) / h;
  return a * values_[i] + b * values_[i + 1] +
         ((a * a * a - a) * m_[i] + (b * b * b - b) * m_[i + 1]) * h * h / 6.0;
}

double Interpolant::derivative(double t) const {
  std::size_t i;
  double tt = t;
  if (t <= nodes_.front()) {
    i = 0;
    tt = nodes_.front();
  } else if (t >= nodes_.back()) {
    i = nodes_.size() - 2;
    tt = nodes_.back();
  } else {
    i = segment(t);
  }
  const double h = nodes_[i + 1] - nodes_[i];
  const double a = (nodes_[i + 1] - tt) / h;
  const double b = (tt - nodes_[i]) / h;
  return (values_[i + 1] - values_[i]) / h +
         (-(3.0 * a * a - 1.0) * m_[i] + (3.0 * b * b - 1.0) * m_[i + 1]) * h / 6.0;
}

double Interpolant::second_derivative(double t) const {
  if (t <= nodes_.front() || t >= nodes_.back()) return 0.0;
  const std::size_t i = segment(t);
  const double h = nodes_[i + 1] - nodes_[i];
  const double a = (nodes_[i + 1] - t) / h;
  const double b = (t - nodes_[i]) / h;
  return a * m_[i] + b * m_[i + 1];
}

Interpolant natural_interpolate(std::vector<double> nodes, std::vector<double> values) {
  return Interpolant(std::move(nodes), std::move(values));
}

double integrate_grid(std::span<const double> values, const TimeGrid& grid) {
  if (values.size() != grid.size()) throw DataError("integrate_grid: value count != grid size");
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    total += 0.5 * (values[i] + values[i + 1]) * (grid[i + 1] - grid[i]);
  }
  return total;
}

}  // namespace phenocate
