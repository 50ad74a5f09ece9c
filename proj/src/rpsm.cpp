#include "phenocate/rpsm.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "phenocate/error.hpp"
#include "phenocate/optim.hpp"

namespace phenocate {

const char* to_string(Quantity q) {
  switch (q) {
    case Quantity::survival: return "survival";
    case Quantity::hazard: return "hazard";
    case Quantity::cumhaz: return "cumhaz";
  }
  return "?";
}

Quantity quantity_from_string(const std::string& s) {
  if (s == "survival") return Quantity::survival;
  if (s == "hazard") return Quantity::hazard;
  if (s == "cumhaz") return Quantity::cumhaz;
  throw ConfigError("unknown quantity '" + s + "' (expected survival|hazard|cumhaz)");
}

}  // namespace phenocate

namespace phenocate::rpsm {

double Term::value(bool z, std::span<const std::uint8_t> x1) const {
  double v = 1.0;
  if (treatment) v *= z ? 1.0 : 0.0;
  if (modifier >= 0) v *= static_cast<double>(x1[static_cast<std::size_t>(modifier)]);
  return v;
}

Term parse_term(const std::string& name, const std::vector<std::string>& modifier_names) {
  Term term;
  term.name = name;
  std::string rest = name;
  if (rest == "z") {
    term.treatment = true;
    return term;
  }
  if (rest.rfind("z:", 0) == 0) {
    term.treatment = true;
    rest = rest.substr(2);
  }
  auto it = std::find(modifier_names.begin(), modifier_names.end(), rest);
  if (it == modifier_names.end()) throw ConfigError("unknown model term '" + name + "'");
  term.modifier = static_cast<int>(it - modifier_names.begin());
  return term;
}

ModelSpec ModelSpec::standard(SplineBasis basis, const std::vector<std::string>& modifier_names,
                              const std::vector<std::string>& tv_term_names) {
  ModelSpec spec;
  spec.basis = std::move(basis);
  spec.terms.push_back(parse_term("z", modifier_names));
  for (const auto& m : modifier_names) spec.terms.push_back(parse_term(m, modifier_names));
  for (const auto& m : modifier_names) spec.terms.push_back(parse_term("z:" + m, modifier_names));
  for (const auto& tv : tv_term_names) {
    auto it = std::find_if(spec.terms.begin(), spec.terms.end(),
                           [&](const Term& t) { return t.name == tv; });
    if (it == spec.terms.end()) throw ConfigError("time-varying term '" + tv + "' is not a model term");
    spec.tv_terms.push_back(static_cast<std::size_t>(it - spec.terms.begin()));
  }
  spec.validate();
  return spec;
}

void ModelSpec::validate() const {
  if (terms.empty()) throw ConfigError("model needs at least one covariate term");
  for (std::size_t i = 0; i < tv_terms.size(); ++i) {
    if (tv_terms[i] >= terms.size()) throw ConfigError("time-varying term index out of range");
    for (std::size_t j = 0; j < i; ++j) {
      if (tv_terms[j] == tv_terms[i]) throw ConfigError("duplicate time-varying term");
    }
  }
}

std::size_t ModelSpec::dimension() const {
  return basis.dimension() + tv_terms.size() * (basis.dimension() - 1) + terms.size();
}

std::size_t ModelSpec::spline_offset(std::size_t tv) const {
  return basis.dimension() + tv * (basis.dimension() - 1);
}

std::size_t ModelSpec::beta_offset() const { return spline_offset(tv_terms.size()); }

std::vector<std::string> ModelSpec::coefficient_names() const {
  std::vector<std::string> names;
  names.push_back("gamma0");
  for (std::size_t j = 1; j < basis.dimension(); ++j) names.push_back("gamma" + std::to_string(j));
  for (auto tv : tv_terms) {
    for (std::size_t j = 1; j < basis.dimension(); ++j) {
      names.push_back("gamma" + std::to_string(j) + "[" + terms[tv].name + "]");
    }
  }
  for (const auto& t : terms) names.push_back("beta[" + t.name + "]");
  return names;
}

std::vector<double> ModelSpec::term_values(bool z, std::span<const std::uint8_t> x1) const {
  std::vector<double> d(terms.size());
  for (std::size_t i = 0; i < terms.size(); ++i) d[i] = terms[i].value(z, x1);
  return d;
}

void ModelSpec::design_rows(double log_t, std::span<const double> d, std::span<double> row,
                            std::span<double> deriv_row) const {
  const std::size_t nb = basis.dimension();
  basis.evaluate(log_t, row.first(nb));
  basis.derivative(log_t, deriv_row.first(nb));
  for (std::size_t r = 0; r < tv_terms.size(); ++r) {
    const double dv = d[tv_terms[r]];
    const std::size_t off = spline_offset(r);
    for (std::size_t j = 1; j < nb; ++j) {
      row[off + j - 1] = dv * row[j];
      deriv_row[off + j - 1] = dv * deriv_row[j];
    }
  }
  const std::size_t bo = beta_offset();
  for (std::size_t i = 0; i < terms.size(); ++i) {
    row[bo + i] = d[i];
    deriv_row[bo + i] = 0.0;
  }
}

namespace {

void check_theta(const Eigen::VectorXd& theta, const ModelSpec& spec) {
  if (static_cast<std::size_t>(theta.size()) != spec.dimension()) {
    throw DataError("coefficient vector has length " + std::to_string(theta.size()) +
                    ", model expects " + std::to_string(spec.dimension()));
  }
}

// Per-subject design for eta and its log-time slope.
struct Design {
  Eigen::MatrixXd x;
  Eigen::MatrixXd dx;
  Eigen::VectorXd log_t;
  Eigen::VectorXd delta;

  Design(const SurvivalFrame& frame, const ModelSpec& spec) {
    const auto n = static_cast<Eigen::Index>(frame.size());
    const auto p = static_cast<Eigen::Index>(spec.dimension());
    x.resize(n, p);
    dx.resize(n, p);
    log_t.resize(n);
    delta.resize(n);
    std::vector<double> row(spec.dimension()), drow(spec.dimension());
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& s = frame.subjects()[static_cast<std::size_t>(i)];
      log_t(i) = std::log(s.time);
      delta(i) = s.event ? 1.0 : 0.0;
      const auto d = spec.term_values(s.treatment, s.modifiers);
      spec.design_rows(log_t(i), d, row, drow);
      for (Eigen::Index j = 0; j < p; ++j) {
        x(i, j) = row[static_cast<std::size_t>(j)];
        dx(i, j) = drow[static_cast<std::size_t>(j)];
      }
    }
  }

  LogLik evaluate(const Eigen::VectorXd& theta, double barrier_weight) const {
    LogLik out;
    const Eigen::VectorXd eta = x * theta;
    const Eigen::VectorXd slope = dx * theta;
    Eigen::VectorXd a(eta.size());
    Eigen::VectorXd b = Eigen::VectorXd::Zero(eta.size());
    double ll = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      const double h = std::exp(eta(i));
      ll -= h;
      a(i) = delta(i) - h;
      if (delta(i) > 0.0) {
        const double s = slope(i);
        double log_s, dlog_s;
        if (s >= kSlopeFloor) {
          log_s = std::log(s);
          dlog_s = 1.0 / s;
        } else {
          const double u = (s - kSlopeFloor) / kSlopeFloor;
          log_s = std::log(kSlopeFloor) + u - barrier_weight * u * u;
          dlog_s = (1.0 - 2.0 * barrier_weight * u) / kSlopeFloor;
          ++out.positivity_violations;
        }
        ll += eta(i) + log_s - log_t(i);
        b(i) = dlog_s;
      }
    }
    out.value = ll;
    out.gradient = x.transpose() * a + dx.transpose() * b;
    return out;
  }
};

// Weibull start: least squares of log Nelson-Aalen on log time.
std::pair<double, double> weibull_start(const SurvivalFrame& frame) {
  std::map<double, std::pair<double, double>> table;
  for (const auto& s : frame.subjects()) {
    auto& c = table[s.time];
    if (s.event) c.first += 1.0;
    c.second += 1.0;
  }
  double at_risk = static_cast<double>(frame.size());
  double cum = 0.0;
  double sx = 0, sy = 0, sxx = 0, sxy = 0, m = 0;
  for (const auto& [t, c] : table) {
    if (c.first > 0.0) {
      cum += c.first / at_risk;
      const double lx = std::log(t), ly = std::log(cum);
      sx += lx; sy += ly; sxx += lx * lx; sxy += lx * ly; m += 1.0;
    }
    at_risk -= c.second;
  }
  if (m < 2.0) return {0.0, 1.0};
  const double var = sxx - sx * sx / m;
  double slope = var > 0.0 ? (sxy - sx * sy / m) / var : 1.0;
  if (!(slope > 0.05) || !std::isfinite(slope)) slope = 1.0;
  const double intercept = (sy - slope * sx) / m;
  return {intercept, slope};
}

}  // namespace

double log_eta(double t, std::span<const double> d, const Eigen::VectorXd& theta,
               const ModelSpec& spec) {
  if (!(t > 0.0)) throw DataError("log_eta: time must be positive");
  check_theta(theta, spec);
  std::vector<double> row(spec.dimension()), drow(spec.dimension());
  spec.design_rows(std::log(t), d, row, drow);
  return Eigen::Map<const Eigen::VectorXd>(row.data(), theta.size()).dot(theta);
}

double log_eta_slope(double t, std::span<const double> d, const Eigen::VectorXd& theta,
                     const ModelSpec& spec) {
  if (!(t > 0.0)) throw DataError("log_eta_slope: time must be positive");
  check_theta(theta, spec);
  std::vector<double> row(spec.dimension()), drow(spec.dimension());
  spec.design_rows(std::log(t), d, row, drow);
  return Eigen::Map<const Eigen::VectorXd>(drow.data(), theta.size()).dot(theta);
}

LogLik loglik_grad(const SurvivalFrame& frame, const Eigen::VectorXd& theta, const ModelSpec& spec,
                   double barrier_weight) {
  check_theta(theta, spec);
  return Design(frame, spec).evaluate(theta, barrier_weight);
}

Fit fit(const SurvivalFrame& frame, const ModelSpec& spec, const FitOptions& options) {
  spec.validate();
  const std::size_t p = spec.dimension();
  const std::size_t events = frame.event_count();
  if (p >= events) {
    throw DataError("model dimension " + std::to_string(p) + " is not below the event count " +
                    std::to_string(events));
  }
  const Design design(frame, spec);
  const double n = static_cast<double>(frame.size());

  // Column scaling conditions the quasi-Newton iterations.
  Eigen::VectorXd scale(static_cast<Eigen::Index>(p));
  for (Eigen::Index j = 0; j < scale.size(); ++j) {
    const double rms = std::sqrt((design.x.col(j).squaredNorm() + design.dx.col(j).squaredNorm()) / n);
    scale(j) = rms > 1e-8 ? rms : 1.0;
  }

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
  const auto [intercept, slope] = weibull_start(frame);
  theta(0) = intercept;
  theta(1) = slope;

  // Preliminary Weibull (intercept + log-time slope) run.
  {
    auto objective = [&](const Eigen::VectorXd& phi, Eigen::VectorXd& grad) {
      Eigen::VectorXd full = theta;
      full(0) = phi(0) / scale(0);
      full(1) = phi(1) / scale(1);
      const LogLik ll = design.evaluate(full, 1.0);
      grad.resize(2);
      grad(0) = -ll.gradient(0) / scale(0) / n;
      grad(1) = -ll.gradient(1) / scale(1) / n;
      return -ll.value / n;
    };
    Eigen::VectorXd phi0(2);
    phi0 << theta(0) * scale(0), theta(1) * scale(1);
    optim::BfgsOptions short_run;
    short_run.max_iterations = 50;
    short_run.gradient_tolerance = options.gradient_tolerance;
    const auto res = optim::bfgs_minimize(objective, phi0, short_run);
    theta(0) = res.x(0) / scale(0);
    theta(1) = res.x(1) / scale(1);
  }

  Fit out;
  double weight = 1.0;
  optim::BfgsResult res;
  LogLik final_ll;
  int total_iterations = 0;
  for (int attempt = 0; attempt <= options.barrier_restarts; ++attempt) {
    auto objective = [&](const Eigen::VectorXd& phi, Eigen::VectorXd& grad) {
      const Eigen::VectorXd th = phi.cwiseQuotient(scale);
      const LogLik ll = design.evaluate(th, weight);
      grad = -ll.gradient.cwiseQuotient(scale) / n;
      return -ll.value / n;
    };
    optim::BfgsOptions bo;
    bo.max_iterations = options.max_iterations;
    bo.gradient_tolerance = options.gradient_tolerance;
    res = optim::bfgs_minimize(objective, theta.cwiseProduct(scale), bo);
    total_iterations += res.iterations;
    theta = res.x.cwiseQuotient(scale);
    final_ll = design.evaluate(theta, weight);
    if (final_ll.positivity_violations == 0) break;
    weight *= 100.0;
  }

  out.theta = theta;
  out.loglik = final_ll.value;
  out.converged = res.converged;
  out.iterations = total_iterations;
  out.gradient_norm = res.gradient_norm;
  out.positivity_violations = final_ll.positivity_violations;
  out.n = frame.size();
  out.events = events;
  if (!out.converged) {
    throw NumericalError("rpsm fit did not converge after " + std::to_string(total_iterations) +
                         " iterations (gradient norm " + std::to_string(res.gradient_norm) + ")");
  }

  // Observed information by central differences of the analytic gradient.
  const auto pi = static_cast<Eigen::Index>(p);
  Eigen::MatrixXd hessian(pi, pi);
  for (Eigen::Index j = 0; j < pi; ++j) {
    Eigen::VectorXd up = theta, down = theta;
    up(j) += options.hessian_step;
    down(j) -= options.hessian_step;
    hessian.col(j) = (design.evaluate(up, weight).gradient - design.evaluate(down, weight).gradient) /
                     (2.0 * options.hessian_step);
  }
  const Eigen::MatrixXd information = -0.5 * (hessian + hessian.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt(information);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("rpsm fit: observed information matrix is not positive definite");
  }
  out.covariance = llt.solve(Eigen::MatrixXd::Identity(pi, pi));
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose());
  return out;
}

Prediction predict(const Eigen::VectorXd& theta, const ModelSpec& spec, bool z,
                   std::span<const std::uint8_t> x1, const TimeGrid& grid, Quantity quantity) {
  check_theta(theta, spec);
  const auto d = spec.term_values(z, x1);
  std::vector<double> row(spec.dimension()), drow(spec.dimension());
  Prediction out;
  out.values.reserve(grid.size());
  for (double t : grid.points()) {
    if (!(t > 0.0)) throw DataError("predict: grid times must be positive");
    spec.design_rows(std::log(t), d, row, drow);
    const double eta = Eigen::Map<const Eigen::VectorXd>(row.data(), theta.size()).dot(theta);
    const double cumhaz = std::exp(eta);
    switch (quantity) {
      case Quantity::cumhaz: out.values.push_back(cumhaz); break;
      case Quantity::survival: out.values.push_back(std::exp(-cumhaz)); break;
      case Quantity::hazard: {
        const double slope = Eigen::Map<const Eigen::VectorXd>(drow.data(), theta.size()).dot(theta);
        if (!(slope > 0.0)) out.positivity_warning = true;
        out.values.push_back(cumhaz * slope / t);
        break;
      }
    }
  }
  return out;
}

Prediction predict(const Fit& fit, const ModelSpec& spec, bool z, std::span<const std::uint8_t> x1,
                   const TimeGrid& grid, Quantity quantity) {
  if (!fit.converged) throw NumericalError("predict: fit did not converge");
  return predict(fit.theta, spec, z, x1, grid, quantity);
}

std::vector<Eigen::VectorXd> sample_coefficients(const Fit& fit, std::size_t draws, std::uint64_t seed) {
  if (draws < 1) throw DataError("sample_coefficients: need at least one draw");
  const Eigen::Index p = fit.theta.size();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (fit.covariance + fit.covariance.transpose()));
  if (eig.info() != Eigen::Success) throw NumericalError("covariance eigen-decomposition failed");
  Eigen::VectorXd values = eig.eigenvalues();
  const double floor = 1e-10 * std::max(0.0, values.maxCoeff());
  for (Eigen::Index j = 0; j < p; ++j) values(j) = std::sqrt(std::max(values(j), floor));
  const Eigen::MatrixXd root = eig.eigenvectors() * values.asDiagonal();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Eigen::VectorXd> out;
  out.reserve(draws);
  Eigen::VectorXd z(p);
  for (std::size_t b = 0; b < draws; ++b) {
    for (Eigen::Index j = 0; j < p; ++j) z(j) = normal(rng);
    out.push_back(fit.theta + root * z);
  }
  return out;
}

std::vector<SelectionRow> selection_report(
    const SurvivalFrame& frame, const std::vector<std::pair<std::string, ModelSpec>>& candidates,
    const FitOptions& options) {
  std::vector<SelectionRow> rows;
  for (const auto& [label, spec] : candidates) {
    const Fit f = fit(frame, spec, options);
    rows.push_back({label, spec.dimension(), f.loglik, f.aic(), f.bic()});
  }
  return rows;
}

nlohmann::json spec_to_json(const ModelSpec& spec) {
  nlohmann::json j;
  j["boundary_knots"] = {spec.basis.k_min(), spec.basis.k_max()};
  j["interior_knots"] = spec.basis.interior();
  std::vector<std::string> terms, tv;
  for (const auto& t : spec.terms) terms.push_back(t.name);
  for (auto i : spec.tv_terms) tv.push_back(spec.terms[i].name);
  j["terms"] = terms;
  j["tv_terms"] = tv;
  return j;
}

ModelSpec spec_from_json(const nlohmann::json& j, const std::vector<std::string>& modifier_names) {
  ModelSpec spec;
  const auto bk = j.at("boundary_knots").get<std::vector<double>>();
  if (bk.size() != 2) throw ConfigError("boundary_knots must have two entries");
  spec.basis = SplineBasis(bk[0], bk[1], j.value("interior_knots", std::vector<double>{}));
  for (const auto& name : j.at("terms").get<std::vector<std::string>>()) {
    spec.terms.push_back(parse_term(name, modifier_names));
  }
  for (const auto& name : j.value("tv_terms", std::vector<std::string>{})) {
    auto it = std::find_if(spec.terms.begin(), spec.terms.end(),
                           [&](const Term& t) { return t.name == name; });
    if (it == spec.terms.end()) throw ConfigError("time-varying term '" + name + "' is not a model term");
    spec.tv_terms.push_back(static_cast<std::size_t>(it - spec.terms.begin()));
  }
  spec.validate();
  return spec;
}

nlohmann::json to_json(const Fit& fit, const ModelSpec& spec) {
  nlohmann::json j = spec_to_json(spec);
  j["coefficient_names"] = spec.coefficient_names();
  j["theta"] = std::vector<double>(fit.theta.data(), fit.theta.data() + fit.theta.size());
  nlohmann::json cov = nlohmann::json::array();
  for (Eigen::Index r = 0; r < fit.covariance.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(fit.covariance.cols()));
    for (Eigen::Index c = 0; c < fit.covariance.cols(); ++c) row[static_cast<std::size_t>(c)] = fit.covariance(r, c);
    cov.push_back(row);
  }
  j["covariance"] = cov;
  j["loglik"] = fit.loglik;
  j["aic"] = fit.aic();
  j["bic"] = fit.bic();
  j["converged"] = fit.converged;
  j["iterations"] = fit.iterations;
  j["gradient_norm"] = fit.gradient_norm;
  j["positivity_violations"] = fit.positivity_violations;
  j["n"] = fit.n;
  j["events"] = fit.events;
  return j;
}

}  // namespace phenocate::rpsm
