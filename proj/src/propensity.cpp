#include "phenocate/propensity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <tuple>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/hypergeometric.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "phenocate/error.hpp"
#include "phenocate/io.hpp"

namespace phenocate::propensity {

namespace {

Eigen::MatrixXd design(const SurvivalFrame& frame) {
  const auto& subjects = frame.subjects();
  Eigen::MatrixXd x(subjects.size(), frame.confounder_count() + 1);
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    x(i, 0) = 1.0;
    for (std::size_t j = 0; j < frame.confounder_count(); ++j) x(i, j + 1) = subjects[i].confounders[j];
  }
  return x;
}

double log_likelihood(const Eigen::VectorXd& eta, const Eigen::VectorXd& z) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    // log p = -log(1 + e^-eta), log(1 - p) = -log(1 + e^eta)
    const double e = eta(i);
    ll -= z(i) > 0.5 ? std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
  }
  return ll;
}

Eigen::VectorXd expit(const Eigen::VectorXd& eta) {
  return eta.unaryExpr([](double e) { return 1.0 / (1.0 + std::exp(-e)); });
}

double quantile7(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_variance(const std::vector<double>& v, double m) {
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

}  // namespace

double PsModel::linear_predictor(const std::vector<double>& confounders) const {
  if (confounders.size() + 1 != static_cast<std::size_t>(coefficients.size()))
    throw DataError("propensity: subject has " + std::to_string(confounders.size()) +
                    " confounders, model expects " + std::to_string(coefficients.size() - 1));
  double eta = coefficients(0);
  for (std::size_t j = 0; j < confounders.size(); ++j) eta += coefficients(j + 1) * confounders[j];
  return eta;
}

PsModel fit_ps(const SurvivalFrame& frame, const FitOptions& options) {
  const auto& subjects = frame.subjects();
  std::size_t treated = 0;
  for (const auto& s : subjects) treated += s.treatment ? 1 : 0;
  if (treated == 0 || treated == subjects.size())
    throw DataError("propensity: both treatment arms must be present");

  const Eigen::MatrixXd x = design(frame);
  Eigen::VectorXd z(subjects.size());
  for (std::size_t i = 0; i < subjects.size(); ++i) z(i) = subjects[i].treatment ? 1.0 : 0.0;

  PsModel model;
  model.names.push_back("(intercept)");
  for (const auto& n : frame.confounder_names()) model.names.push_back(n);
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(x.cols());
  Eigen::VectorXd eta = x * beta;
  double ll = log_likelihood(eta, z);
  model.loglik_trace.push_back(ll);

  Eigen::MatrixXd info;
  for (int it = 0; it < options.max_iterations; ++it) {
    const Eigen::VectorXd p = expit(eta);
    const Eigen::VectorXd score = x.transpose() * (z - p);
    const Eigen::VectorXd w = p.cwiseProduct((1.0 - p.array()).matrix());
    info = x.transpose() * w.asDiagonal() * x;
    if (score.cwiseAbs().maxCoeff() < options.tolerance) {
      model.converged = true;
      break;
    }
    Eigen::VectorXd step = info.ldlt().solve(score);
    if (!step.allFinite()) throw NumericalError("propensity: singular information matrix");
    // Ascent test with an allowance for rounding in the summed log-likelihood.
    const double slack = 1e-12 * (1.0 + std::abs(ll));
    double scale = 1.0;
    Eigen::VectorXd next = beta + step;
    Eigen::VectorXd next_eta = x * next;
    double next_ll = log_likelihood(next_eta, z);
    for (int h = 0; h < 40 && !(next_ll >= ll - slack); ++h) {
      scale *= 0.5;
      next = beta + scale * step;
      next_eta = x * next;
      next_ll = log_likelihood(next_eta, z);
    }
    if (!(next_ll >= ll - slack)) throw NumericalError("propensity: line search failed");
    beta = next;
    eta = next_eta;
    ll = next_ll;
    model.loglik_trace.push_back(ll);
    model.iterations = it + 1;
    for (Eigen::Index j = 0; j < beta.size(); ++j)
      if (std::abs(beta(j)) > options.separation_bound)
        throw NumericalError("propensity: coefficient for '" + model.names[j] +
                             "' exceeds " + io::fmt(options.separation_bound) +
                             " in magnitude; the arms look separated and a penalized fit "
                             "would be needed, which is not supported");
  }
  if (!model.converged)
    throw NumericalError("propensity: IRLS did not converge in " +
                         std::to_string(options.max_iterations) + " iterations");

  model.coefficients = beta;
  model.std_errors = info.inverse().diagonal().cwiseSqrt();
  const Eigen::VectorXd p = expit(eta);
  model.probabilities.assign(p.data(), p.data() + p.size());
  return model;
}

MatchResult match(const SurvivalFrame& frame, const PsModel& model, double caliper_sd) {
  if (!(caliper_sd >= 0.0)) throw ConfigError("match: caliper_sd must be non-negative");
  const auto& subjects = frame.subjects();
  std::vector<double> logit(subjects.size());
  for (std::size_t i = 0; i < subjects.size(); ++i)
    logit[i] = model.linear_predictor(subjects[i].confounders);

  MatchResult result;
  if (subjects.size() > 1) {
    const double m = mean(logit);
    result.caliper = caliper_sd * std::sqrt(sample_variance(logit, m));
  }

  using Key = std::tuple<double, std::int64_t, std::size_t>;
  std::set<Key> controls;
  std::vector<std::size_t> treated;
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    if (subjects[i].treatment)
      treated.push_back(i);
    else
      controls.emplace(logit[i], subjects[i].id, i);
  }
  std::sort(treated.begin(), treated.end(), [&](std::size_t a, std::size_t b) {
    if (logit[a] != logit[b]) return logit[a] > logit[b];
    return subjects[a].id < subjects[b].id;
  });

  constexpr auto kLowestId = std::numeric_limits<std::int64_t>::min();
  std::vector<std::size_t> rows;
  for (std::size_t t : treated) {
    if (controls.empty()) {
      ++result.unmatched_treated;
      continue;
    }
    const double x = logit[t];
    auto best = controls.end();
    double best_d = std::numeric_limits<double>::infinity();
    auto consider = [&](std::set<Key>::iterator it) {
      const double d = std::abs(std::get<0>(*it) - x);
      if (best == controls.end() || d < best_d ||
          (d == best_d && std::get<1>(*it) < std::get<1>(*best))) {
        best = it;
        best_d = d;
      }
    };
    auto above = controls.lower_bound({x, kLowestId, 0});
    if (above != controls.end()) consider(above);
    if (above != controls.begin()) {
      // Smallest id among the controls sharing the nearest lower logit.
      const double v = std::get<0>(*std::prev(above));
      consider(controls.lower_bound({v, kLowestId, 0}));
    }
    if (best_d > result.caliper) {
      ++result.unmatched_treated;
      continue;
    }
    const std::size_t c = std::get<2>(*best);
    result.pairs.push_back({subjects[t].id, subjects[c].id, best_d});
    rows.push_back(t);
    rows.push_back(c);
    controls.erase(best);
  }
  if (result.pairs.empty()) throw DataError("match: no treated subject found a control within the caliper");
  result.frame = frame.select(rows);
  return result;
}

std::string pairs_csv(const std::vector<Pair>& pairs) {
  std::ostringstream out;
  out << "treated_id,control_id,distance\n";
  for (const auto& p : pairs) out << p.treated_id << ',' << p.control_id << ',' << io::fmt(p.distance) << '\n';
  return out.str();
}

const char* to_string(Test t) {
  switch (t) {
    case Test::welch_t: return "welch_t";
    case Test::chi_squared: return "chi_squared";
    case Test::fisher: return "fisher";
    case Test::none: return "none";
  }
  return "none";
}

double fisher_exact(std::int64_t a, std::int64_t b, std::int64_t c, std::int64_t d) {
  if (a < 0 || b < 0 || c < 0 || d < 0) throw DataError("fisher_exact: negative cell count");
  const auto total = static_cast<unsigned>(a + b + c + d);
  if (total == 0) return 1.0;
  const auto col1 = static_cast<unsigned>(a + c);
  const auto row1 = static_cast<unsigned>(a + b);
  boost::math::hypergeometric_distribution<double> h(col1, row1, total);
  const unsigned lo = row1 + col1 > total ? row1 + col1 - total : 0;
  const unsigned hi = std::min(row1, col1);
  const double observed = boost::math::pdf(h, static_cast<unsigned>(a));
  double p = 0.0;
  for (unsigned k = lo; k <= hi; ++k) {
    const double pk = boost::math::pdf(h, k);
    if (pk <= observed * (1.0 + 1e-7)) p += pk;
  }
  return std::min(1.0, p);
}

ArmSummary compare_arms(const std::vector<double>& treated, const std::vector<double>& control,
                        bool binary) {
  if (treated.size() < 2 || control.size() < 2)
    throw DataError("balance: each arm needs at least two subjects");
  ArmSummary s;
  s.mean_treated = mean(treated);
  s.mean_control = mean(control);
  const double n1 = static_cast<double>(treated.size());
  const double n0 = static_cast<double>(control.size());
  double v1, v0;
  if (binary) {
    v1 = s.mean_treated * (1.0 - s.mean_treated);
    v0 = s.mean_control * (1.0 - s.mean_control);
  } else {
    v1 = sample_variance(treated, s.mean_treated);
    v0 = sample_variance(control, s.mean_control);
  }
  const double pooled = std::sqrt((v1 + v0) / 2.0);
  if (!(pooled > 0.0)) {
    s.zero_variance = true;
    return s;
  }
  s.effect_size = 100.0 * (s.mean_treated - s.mean_control) / pooled;

  if (binary) {
    const auto a = static_cast<std::int64_t>(std::llround(s.mean_treated * n1));
    const auto c = static_cast<std::int64_t>(std::llround(s.mean_control * n0));
    const std::int64_t b = static_cast<std::int64_t>(treated.size()) - a;
    const std::int64_t d = static_cast<std::int64_t>(control.size()) - c;
    const double obs[4] = {double(a), double(b), double(c), double(d)};
    const double n = n1 + n0;
    const double col1 = obs[0] + obs[2];
    const double col0 = obs[1] + obs[3];
    const double expected[4] = {n1 * col1 / n, n1 * col0 / n, n0 * col1 / n, n0 * col0 / n};
    if (*std::min_element(expected, expected + 4) < 5.0) {
      s.test = Test::fisher;
      s.p_value = fisher_exact(a, b, c, d);
    } else {
      s.test = Test::chi_squared;
      double x2 = 0.0;
      for (int i = 0; i < 4; ++i) {
        const double dev = std::abs(obs[i] - expected[i]);
        const double corrected = dev - std::min(0.5, dev);
        x2 += corrected * corrected / expected[i];
      }
      boost::math::chi_squared_distribution<double> chi(1.0);
      s.p_value = boost::math::cdf(boost::math::complement(chi, x2));
    }
  } else {
    s.test = Test::welch_t;
    const double se1 = v1 / n1, se0 = v0 / n0;
    const double se = std::sqrt(se1 + se0);
    const double t = (s.mean_treated - s.mean_control) / se;
    const double df = (se1 + se0) * (se1 + se0) / (se1 * se1 / (n1 - 1.0) + se0 * se0 / (n0 - 1.0));
    boost::math::students_t_distribution<double> dist(df);
    s.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  }
  return s;
}

double BalanceReport::mean_abs_effect_before() const {
  double s = 0.0;
  for (const auto& r : rows) s += std::abs(r.before.effect_size);
  return rows.empty() ? 0.0 : s / static_cast<double>(rows.size());
}

double BalanceReport::mean_abs_effect_after() const {
  double s = 0.0;
  for (const auto& r : rows) s += std::abs(r.after.effect_size);
  return rows.empty() ? 0.0 : s / static_cast<double>(rows.size());
}

BalanceReport balance(const SurvivalFrame& before, const SurvivalFrame& after) {
  if (before.confounder_names() != after.confounder_names())
    throw DataError("balance: frames do not share the same confounders");
  auto split = [](const SurvivalFrame& f, std::size_t j, std::vector<double>& t, std::vector<double>& c) {
    for (const auto& s : f.subjects()) (s.treatment ? t : c).push_back(s.confounders[j]);
  };
  BalanceReport report;
  for (std::size_t j = 0; j < before.confounder_count(); ++j) {
    BalanceRow row;
    row.name = before.confounder_names()[j];
    std::vector<double> t0, c0, t1, c1;
    split(before, j, t0, c0);
    split(after, j, t1, c1);
    row.binary = true;
    for (const auto* v : {&t0, &c0})
      for (double x : *v) row.binary = row.binary && (x == 0.0 || x == 1.0);
    row.before = compare_arms(t0, c0, row.binary);
    row.after = compare_arms(t1, c1, row.binary);
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string balance_csv(const BalanceReport& report) {
  std::ostringstream out;
  out << "covariate,type,treated_before,control_before,effect_size_before,p_before,test_before,"
         "treated_after,control_after,effect_size_after,p_after,test_after,zero_variance\n";
  for (const auto& r : report.rows) {
    out << r.name << ',' << (r.binary ? "binary" : "continuous");
    for (const auto* s : {&r.before, &r.after})
      out << ',' << io::fmt(s->mean_treated) << ',' << io::fmt(s->mean_control) << ','
          << io::fmt(s->effect_size) << ',' << io::fmt(s->p_value) << ',' << to_string(s->test);
    out << ',' << ((r.before.zero_variance || r.after.zero_variance) ? 1 : 0) << '\n';
  }
  return out.str();
}

std::vector<double> iptw_weights(const SurvivalFrame& frame, const PsModel& model) {
  std::vector<double> w;
  w.reserve(frame.size());
  for (const auto& s : frame.subjects()) {
    const double p = 1.0 / (1.0 + std::exp(-model.linear_predictor(s.confounders)));
    w.push_back(s.treatment ? 1.0 / p : 1.0 / (1.0 - p));
  }
  if (w.empty()) return w;
  const double lo = quantile7(w, 0.01);
  const double hi = quantile7(w, 0.99);
  for (double& x : w) x = std::clamp(x, lo, hi);
  return w;
}

}  // namespace phenocate::propensity
