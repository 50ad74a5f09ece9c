#pragma once

#include <functional>

#include <Eigen/Dense>

namespace phenocate::optim {

// Objective returning f(x) and writing grad f(x). Non-finite values are
// treated as infeasible and trigger backtracking.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

struct BfgsOptions {
  int max_iterations = 500;
  double gradient_tolerance = 1e-6;
  double armijo = 1e-4;
  double backtrack = 0.5;
  int max_backtracks = 60;
};

struct BfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  double gradient_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Minimizes with BFGS (inverse-Hessian update) and backtracking line search.
BfgsResult bfgs_minimize(const Objective& objective, Eigen::VectorXd x0,
                         const BfgsOptions& options = {});

}  // namespace phenocate::optim
