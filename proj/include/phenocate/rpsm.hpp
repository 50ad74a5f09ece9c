#pragma once

#include <cstddef>
#include <cmath>
#include <cstdint>
#include <utility>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "phenocate/splinekit.hpp"
#include "phenocate/survdata.hpp"

namespace phenocate {

enum class Quantity { survival, hazard, cumhaz };

const char* to_string(Quantity q);
Quantity quantity_from_string(const std::string& s);

}  // namespace phenocate

namespace phenocate::rpsm {

// A covariate product entering the linear predictor: 1, z, x1_j or z * x1_j.
struct Term {
  std::string name;
  bool treatment = false;
  int modifier = -1;

  double value(bool z, std::span<const std::uint8_t> x1) const;
};

// Parses "z", "<modifier>" or "z:<modifier>".
Term parse_term(const std::string& name, const std::vector<std::string>& modifier_names);

// Model layout. Coefficients are packed as
//   [gamma_0 .. gamma_{m+1}]                  baseline spline (m+2)
//   [gamma_{1r} .. gamma_{m+1,r}] per tv term  time-varying parts (m+1 each)
//   [beta_1 .. beta_F]                         fixed effects
struct ModelSpec {
  SplineBasis basis;
  std::vector<Term> terms;
  std::vector<std::size_t> tv_terms;  // indices into `terms`

  // Main effects z and x1, plus z * x1 interactions.
  static ModelSpec standard(SplineBasis basis, const std::vector<std::string>& modifier_names,
                            const std::vector<std::string>& tv_term_names = {});

  void validate() const;
  std::size_t dimension() const;
  std::size_t spline_offset(std::size_t tv) const;  // first coefficient of tv term `tv`
  std::size_t beta_offset() const;
  std::vector<std::string> coefficient_names() const;

  std::vector<double> term_values(bool z, std::span<const std::uint8_t> x1) const;
  // Gradient rows of eta and d eta / d log t with respect to theta.
  void design_rows(double log_t, std::span<const double> d, std::span<double> row,
                   std::span<double> deriv_row) const;
};

// log cumulative hazard eta(t | d) for term values d.
double log_eta(double t, std::span<const double> d, const Eigen::VectorXd& theta,
               const ModelSpec& spec);
// d eta / d log t.
double log_eta_slope(double t, std::span<const double> d, const Eigen::VectorXd& theta,
                     const ModelSpec& spec);

struct LogLik {
  double value = 0.0;
  Eigen::VectorXd gradient;
  std::size_t positivity_violations = 0;  // event times with slope below the floor
};

constexpr double kSlopeFloor = 1e-8;

// Censored-data log-likelihood with exact gradient. Below kSlopeFloor the
// log-slope term continues as a concave quadratic scaled by `barrier_weight`.
LogLik loglik_grad(const SurvivalFrame& frame, const Eigen::VectorXd& theta, const ModelSpec& spec,
                   double barrier_weight = 1.0);

struct FitOptions {
  int max_iterations = 500;
  double gradient_tolerance = 1e-6;
  double hessian_step = 1e-5;
  int barrier_restarts = 3;
};

struct Fit {
  Eigen::VectorXd theta;
  Eigen::MatrixXd covariance;
  double loglik = 0.0;
  bool converged = false;
  int iterations = 0;
  double gradient_norm = 0.0;
  std::size_t positivity_violations = 0;
  std::size_t n = 0;
  std::size_t events = 0;

  double aic() const { return -2.0 * loglik + 2.0 * static_cast<double>(theta.size()); }
  double bic() const {
    return -2.0 * loglik + std::log(static_cast<double>(n)) * static_cast<double>(theta.size());
  }
};

// Maximum likelihood fit; throws NumericalError on non-convergence or a
// singular observed information matrix.
Fit fit(const SurvivalFrame& frame, const ModelSpec& spec, const FitOptions& options = {});

struct Prediction {
  std::vector<double> values;
  bool positivity_warning = false;  // hazard slope <= 0 at some grid point
};

Prediction predict(const Eigen::VectorXd& theta, const ModelSpec& spec, bool z,
                   std::span<const std::uint8_t> x1, const TimeGrid& grid, Quantity quantity);
Prediction predict(const Fit& fit, const ModelSpec& spec, bool z, std::span<const std::uint8_t> x1,
                   const TimeGrid& grid, Quantity quantity);

// Multivariate normal draws around the estimate. Covariance eigenvalues are
// floored at 1e-10 times the largest one.
std::vector<Eigen::VectorXd> sample_coefficients(const Fit& fit, std::size_t draws, std::uint64_t seed);

struct SelectionRow {
  std::string label;
  std::size_t parameters = 0;
  double loglik = 0.0;
  double aic = 0.0;
  double bic = 0.0;
};

// Fits each candidate and reports AIC/BIC; no automatic selection is made.
std::vector<SelectionRow> selection_report(
    const SurvivalFrame& frame, const std::vector<std::pair<std::string, ModelSpec>>& candidates,
    const FitOptions& options = {});

nlohmann::json to_json(const Fit& fit, const ModelSpec& spec);
nlohmann::json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::json& j, const std::vector<std::string>& modifier_names);

}  // namespace phenocate::rpsm
