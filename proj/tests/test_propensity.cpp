#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <set>

#include "phenocate/error.hpp"
#include "phenocate/propensity.hpp"
#include "phenocate/simgen.hpp"

using namespace phenocate;
using namespace phenocate::propensity;

namespace {

Subject person(std::int64_t id, bool z, std::vector<double> c) {
  Subject s;
  s.id = id;
  s.time = 1.0;
  s.event = true;
  s.treatment = z;
  s.confounders = std::move(c);
  return s;
}

SurvivalFrame frame_of(std::vector<Subject> subjects, std::vector<std::string> names) {
  return SurvivalFrame(std::move(subjects), {}, std::move(names));
}

// Logistic data with known coefficients.
SurvivalFrame logistic_sample(std::size_t n, const std::vector<double>& beta, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::bernoulli_distribution coin(0.3);
  std::uniform_real_distribution<double> unif;
  std::vector<Subject> subjects;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> c{normal(rng), coin(rng) ? 1.0 : 0.0};
    const double eta = beta[0] + beta[1] * c[0] + beta[2] * c[1];
    const bool z = unif(rng) < 1.0 / (1.0 + std::exp(-eta));
    subjects.push_back(person(static_cast<std::int64_t>(i + 1), z, c));
  }
  return frame_of(std::move(subjects), {"age", "sex"});
}

PsModel identity_model() {
  PsModel m;
  m.names = {"(intercept)", "logit"};
  m.coefficients = Eigen::Vector2d(0.0, 1.0);
  return m;
}

// Student t upper tail by Simpson integration of the density.
double t_two_sided(double t, double df) {
  const double c = std::exp(std::lgamma((df + 1) / 2) - std::lgamma(df / 2)) / std::sqrt(df * M_PI);
  auto f = [&](double x) { return c * std::pow(1.0 + x * x / df, -(df + 1) / 2); };
  const double a = 0.0, b = std::abs(t);
  const int m = 20000;
  const double h = (b - a) / m;
  double s = f(a) + f(b);
  for (int i = 1; i < m; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
  return 2.0 * (0.5 - s * h / 3.0);
}

}  // namespace

TEST_CASE("intercept-only fit returns the treated fraction") {
  std::vector<Subject> s;
  for (int i = 0; i < 40; ++i) s.push_back(person(i, i < 13, {}));
  const auto m = fit_ps(frame_of(s, {}));
  CHECK(m.converged);
  for (double p : m.probabilities) CHECK(p == doctest::Approx(13.0 / 40.0).epsilon(1e-12));
  CHECK(m.coefficients(0) == doctest::Approx(std::log(13.0 / 27.0)).epsilon(1e-10));
}

TEST_CASE("fit recovers known coefficients within 3 SE and solves the score equations") {
  const std::vector<double> truth{-0.4, 0.8, -0.6};
  const auto frame = logistic_sample(20000, truth, 5);
  const auto m = fit_ps(frame);
  REQUIRE(m.converged);
  for (int j = 0; j < 3; ++j) CHECK(std::abs(m.coefficients(j) - truth[j]) < 3.0 * m.std_errors(j));

  Eigen::Vector3d score = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < frame.size(); ++i) {
    const auto& s = frame.subjects()[i];
    const double r = (s.treatment ? 1.0 : 0.0) - m.probabilities[i];
    score += r * Eigen::Vector3d(1.0, s.confounders[0], s.confounders[1]);
  }
  CHECK(score.cwiseAbs().maxCoeff() < 1e-6);
  for (double p : m.probabilities) CHECK((p > 0.0 && p < 1.0));
  // Nondecreasing up to rounding in the summed log-likelihood.
  const auto& ll = m.loglik_trace;
  for (std::size_t i = 1; i < ll.size(); ++i) CHECK(ll[i] >= ll[i - 1] - 1e-12 * (1.0 + std::abs(ll[i - 1])));
}

TEST_CASE("fit errors") {
  std::vector<Subject> one_arm;
  for (int i = 0; i < 10; ++i) one_arm.push_back(person(i, true, {double(i)}));
  CHECK_THROWS_AS(fit_ps(frame_of(one_arm, {"c"})), DataError);

  std::vector<Subject> separated;
  for (int i = 0; i < 20; ++i) separated.push_back(person(i, i >= 10, {double(i)}));
  CHECK_THROWS_AS(fit_ps(frame_of(separated, {"c"})), NumericalError);
}

TEST_CASE("identical scores match every treated unit, ties broken by id") {
  std::vector<Subject> s;
  for (int i = 1; i <= 8; ++i) s.push_back(person(i, i % 2 == 0, {0.5}));
  const auto r = match(frame_of(s, {"logit"}), identity_model());
  REQUIRE(r.pairs.size() == 4);
  const std::int64_t treated[] = {2, 4, 6, 8};
  const std::int64_t control[] = {1, 3, 5, 7};
  for (int i = 0; i < 4; ++i) {
    CHECK(r.pairs[i].treated_id == treated[i]);
    CHECK(r.pairs[i].control_id == control[i]);
    CHECK(r.pairs[i].distance == 0.0);
  }
}

TEST_CASE("hand-enumerated greedy pairing and caliper") {
  // Treated A=2.0, B=1.0; controls C=1.6, D=0.0. Greedy takes A-C then B-D.
  std::vector<Subject> s{person(1, true, {2.0}), person(2, true, {1.0}), person(3, false, {1.6}),
                         person(4, false, {0.0})};
  const auto frame = frame_of(s, {"logit"});
  auto r = match(frame, identity_model(), 10.0);
  REQUIRE(r.pairs.size() == 2);
  CHECK(r.pairs[0].treated_id == 1);
  CHECK(r.pairs[0].control_id == 3);
  CHECK(r.pairs[0].distance == doctest::Approx(0.4));
  CHECK(r.pairs[1].treated_id == 2);
  CHECK(r.pairs[1].control_id == 4);
  CHECK(r.frame.size() == 4);

  // SD of the logits is sqrt(2.27 / 3); a 1 SD caliper drops B-D.
  r = match(frame, identity_model(), 1.0);
  CHECK(r.caliper == doctest::Approx(std::sqrt(2.27 / 3.0)));
  REQUIRE(r.pairs.size() == 1);
  CHECK(r.unmatched_treated == 1);

  CHECK_THROWS_AS(match(frame, identity_model(), 0.0), DataError);
}

TEST_CASE("equidistant controls on both sides go to the smaller id") {
  std::vector<Subject> s{person(1, true, {1.0}), person(9, false, {0.5}), person(7, false, {0.5}),
                         person(8, false, {1.5})};
  const auto r = match(frame_of(s, {"logit"}), identity_model(), 10.0);
  REQUIRE(r.pairs.size() == 1);
  CHECK(r.pairs[0].control_id == 7);
}

TEST_CASE("matching invariants on random data") {
  const auto frame = logistic_sample(3000, {-0.2, 1.0, 0.5}, 17);
  const auto m = fit_ps(frame);
  const auto r = match(frame, m);
  std::map<std::int64_t, const Subject*> by_id;
  for (const auto& s : frame.subjects()) by_id[s.id] = &s;
  std::set<std::int64_t> controls, treated;
  for (const auto& p : r.pairs) {
    CHECK(controls.insert(p.control_id).second);
    CHECK(treated.insert(p.treated_id).second);
    CHECK(by_id[p.treated_id]->treatment);
    CHECK_FALSE(by_id[p.control_id]->treatment);
    const double d = std::abs(m.linear_predictor(by_id[p.treated_id]->confounders) -
                              m.linear_predictor(by_id[p.control_id]->confounders));
    CHECK(d == doctest::Approx(p.distance).epsilon(1e-12));
    CHECK(p.distance <= r.caliper);
  }
  std::size_t nt = 0;
  for (const auto& s : r.frame.subjects()) nt += s.treatment ? 1 : 0;
  CHECK(nt * 2 == r.frame.size());
  CHECK(pairs_csv(r.pairs).rfind("treated_id,control_id,distance\n", 0) == 0);
}

TEST_CASE("balance effect sizes") {
  // Identical arms.
  std::vector<Subject> s;
  for (int i = 0; i < 20; ++i) s.push_back(person(i, i % 2 == 0, {double(i / 2), double((i / 2) % 2)}));
  auto rep = balance(frame_of(s, {"x", "b"}), frame_of(s, {"x", "b"}));
  for (const auto& row : rep.rows) CHECK(row.before.effect_size == doctest::Approx(0.0));
  CHECK_FALSE(rep.rows[0].binary);
  CHECK(rep.rows[1].binary);

  // Binary arm means 0.6 / 0.5.
  std::vector<double> t{1, 1, 1, 1, 1, 1, 0, 0, 0, 0}, c{1, 1, 1, 1, 1, 0, 0, 0, 0, 0};
  const auto a = compare_arms(t, c, true);
  CHECK(a.effect_size == doctest::Approx(100.0 * 0.1 / std::sqrt((0.24 + 0.25) / 2.0)).epsilon(1e-12));
  CHECK(a.test == Test::fisher);

  // Zero variance.
  const auto z = compare_arms({2, 2, 2}, {2, 2}, false);
  CHECK(z.zero_variance);
  CHECK(z.effect_size == 0.0);
}

TEST_CASE("balance tests against independent oracles") {
  // Tea tasting table: p = 34/70.
  CHECK(fisher_exact(3, 1, 1, 3) == doctest::Approx(34.0 / 70.0).epsilon(1e-10));

  // Welch t against Simpson-integrated t density.
  std::vector<double> t{1, 2, 3, 4, 5, 6.5}, c{2, 4, 6, 8, 10};
  const auto w = compare_arms(t, c, false);
  const double m1 = 21.5 / 6.0, m0 = 6.0;
  double v1 = 0, v0 = 0;
  for (double x : t) v1 += (x - m1) * (x - m1);
  for (double x : c) v0 += (x - m0) * (x - m0);
  v1 /= 5.0;
  v0 /= 4.0;
  const double se1 = v1 / 6.0, se0 = v0 / 5.0;
  const double tt = (m1 - m0) / std::sqrt(se1 + se0);
  const double df = (se1 + se0) * (se1 + se0) / (se1 * se1 / 5.0 + se0 * se0 / 4.0);
  CHECK(w.test == Test::welch_t);
  CHECK(w.p_value == doctest::Approx(t_two_sided(tt, df)).epsilon(1e-8));

  // Yates chi-squared on a 40/60 vs 25/75 table: p = erfc(sqrt(x2 / 2)).
  std::vector<double> bt(100, 0.0), bc(100, 0.0);
  for (int i = 0; i < 40; ++i) bt[i] = 1.0;
  for (int i = 0; i < 25; ++i) bc[i] = 1.0;
  const auto x = compare_arms(bt, bc, true);
  const double obs[4] = {40, 60, 25, 75}, ex[4] = {32.5, 67.5, 32.5, 67.5};
  double x2 = 0;
  for (int i = 0; i < 4; ++i) x2 += std::pow(std::abs(obs[i] - ex[i]) - 0.5, 2) / ex[i];
  CHECK(x.test == Test::chi_squared);
  CHECK(x.p_value == doctest::Approx(std::erfc(std::sqrt(x2 / 2.0))).epsilon(1e-10));
}

TEST_CASE("matching improves balance on confounded simulated data") {
  auto spec = simgen::reference_dgm();
  spec.n = 4000;
  spec.confounding.enabled = true;
  const auto frame = simgen::generate(spec);
  const auto m = fit_ps(frame);
  const auto r = match(frame, m);
  const auto rep = balance(frame, r.frame);
  REQUIRE(rep.rows.size() == 4);
  CHECK(rep.mean_abs_effect_after() < rep.mean_abs_effect_before());
  CHECK(balance_csv(rep).find("c4,binary") != std::string::npos);
}

TEST_CASE("IPTW weights are truncated at the 1st and 99th percentiles") {
  const auto frame = logistic_sample(2000, {0.0, 1.5, 0.0}, 3);
  const auto m = fit_ps(frame);
  const auto w = iptw_weights(frame, m);
  std::vector<double> raw;
  for (const auto& s : frame.subjects()) {
    const double p = 1.0 / (1.0 + std::exp(-m.linear_predictor(s.confounders)));
    raw.push_back(s.treatment ? 1.0 / p : 1.0 / (1.0 - p));
  }
  auto sorted = raw;
  std::sort(sorted.begin(), sorted.end());
  const double lo_h = 0.01 * 1999.0, hi_h = 0.99 * 1999.0;
  const double lo = sorted[19] + (lo_h - 19.0) * (sorted[20] - sorted[19]);
  const double hi = sorted[1979] + (hi_h - 1979.0) * (sorted[1980] - sorted[1979]);
  for (std::size_t i = 0; i < w.size(); ++i) CHECK(w[i] == doctest::Approx(std::clamp(raw[i], lo, hi)));
}
