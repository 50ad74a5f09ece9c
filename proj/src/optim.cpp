#include "phenocate/optim.hpp"

#include <cmath>
#include <limits>

namespace phenocate::optim {

BfgsResult bfgs_minimize(const Objective& objective, Eigen::VectorXd x0, const BfgsOptions& options) {
  const Eigen::Index n = x0.size();
  BfgsResult result;
  Eigen::VectorXd x = std::move(x0);
  Eigen::VectorXd g(n);
  double f = objective(x, g);
  if (!std::isfinite(f) || !g.allFinite()) {
    result.x = x;
    result.value = f;
    result.gradient_norm = std::numeric_limits<double>::infinity();
    return result;
  }

  Eigen::MatrixXd inv_h = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd g_new(n);
  bool fresh = true;
  int it = 0;
  for (; it < options.max_iterations; ++it) {
    if (g.norm() < options.gradient_tolerance) {
      result.converged = true;
      break;
    }
    Eigen::VectorXd direction = -inv_h * g;
    double slope = g.dot(direction);
    if (!(slope < 0.0)) {
      inv_h.setIdentity();
      direction = -g;
      slope = -g.squaredNorm();
      fresh = true;
    }
    // Keep the first step of a fresh curvature estimate modest.
    double step = 1.0;
    if (fresh) step = std::min(1.0, 1.0 / std::max(1e-12, direction.lpNorm<Eigen::Infinity>()));

    bool accepted = false;
    Eigen::VectorXd x_new;
    double f_new = 0.0;
    for (int bt = 0; bt < options.max_backtracks; ++bt) {
      x_new = x + step * direction;
      f_new = objective(x_new, g_new);
      if (std::isfinite(f_new) && g_new.allFinite() && f_new <= f + options.armijo * step * slope) {
        accepted = true;
        break;
      }
      step *= options.backtrack;
    }
    if (!accepted) {
      if (fresh) break;  // steepest descent failed as well
      inv_h.setIdentity();
      fresh = true;
      continue;
    }

    const Eigen::VectorXd s = x_new - x;
    const Eigen::VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (fresh) {
        inv_h = Eigen::MatrixXd::Identity(n, n) * (sy / y.squaredNorm());
      }
      const double rho = 1.0 / sy;
      const Eigen::VectorXd hy = inv_h * y;
      inv_h += (rho * rho * y.dot(hy) + rho) * (s * s.transpose()) -
               rho * (hy * s.transpose() + s * hy.transpose());
      fresh = false;
    }
    x = std::move(x_new);
    f = f_new;
    g = g_new;
  }
  if (!result.converged && g.norm() < options.gradient_tolerance) result.converged = true;
  result.x = std::move(x);
  result.value = f;
  result.gradient_norm = g.norm();
  result.iterations = it;
  return result;
}

}  // namespace phenocate::optim
