#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "phenocate/error.hpp"
#include "phenocate/simgen.hpp"

using namespace phenocate;
using namespace phenocate::simgen;

namespace {

// log H = a + b log t, one modifier with a zero coefficient.
DgmSpec weibull_dgm(double a, double b) {
  DgmSpec spec;
  spec.modifier_names = {"m"};
  spec.prevalence = {0.5};
  spec.model.basis = SplineBasis(0.0, 1.0);
  spec.model.terms = {rpsm::parse_term("m", spec.modifier_names)};
  spec.theta = Eigen::Vector3d(a, b, 0.0);
  spec.horizon = 100.0;
  spec.censor_upper = 0.0;
  spec.validate();
  return spec;
}

double true_survival(const DgmSpec& spec, bool z, std::span<const std::uint8_t> x1, double t) {
  const auto d = spec.model.term_values(z, x1);
  return std::exp(-std::exp(rpsm::log_eta(t, d, spec.theta, spec.model)));
}

}  // namespace

TEST_CASE("inverse transform on closed forms") {
  const auto exp1 = weibull_dgm(0.0, 1.0);
  const std::vector<double> none{0.0};
  CHECK(sample_event_time(none, exp1, std::exp(-2.0)) == doctest::Approx(2.0).epsilon(1e-8));
  const auto weib = weibull_dgm(0.0, 2.0);
  CHECK(sample_event_time(none, weib, std::exp(-1.0)) == doctest::Approx(1.0).epsilon(1e-8));
  // Rate 3 exponential: t = -log(u) / 3.
  const auto rate3 = weibull_dgm(std::log(3.0), 1.0);
  CHECK(sample_event_time(none, rate3, 0.25) == doctest::Approx(-std::log(0.25) / 3.0).epsilon(1e-8));
  CHECK_THROWS_AS(sample_event_time(none, exp1, 0.0), DataError);
  CHECK_THROWS_AS(sample_event_time(none, exp1, 1.0), DataError);
}

TEST_CASE("event times are monotone in u") {
  const auto spec = reference_dgm();
  const std::vector<std::uint8_t> x1{1, 0, 1, 1, 0};
  const auto d = spec.model.term_values(true, x1);
  double prev = kNever;
  for (int i = 1; i < 500; ++i) {
    const double t = sample_event_time(d, spec, i / 500.0);
    CHECK(t <= prev);
    prev = t;
  }
}

TEST_CASE("empirical survival of 100k draws matches exp(-H) on random profiles") {
  const auto spec = reference_dgm();
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<int> bit(0, 1);
  for (int rep = 0; rep < 5; ++rep) {
    std::vector<std::uint8_t> x1(5);
    for (auto& v : x1) v = static_cast<std::uint8_t>(bit(rng));
    const bool z = bit(rng) == 1;
    const auto d = spec.model.term_values(z, x1);
    std::vector<double> times(100000);
    for (auto& t : times) {
      double u = unif(rng);
      while (u <= 0.0) u = unif(rng);
      t = sample_event_time(d, spec, u);
    }
    std::sort(times.begin(), times.end());
    double worst = 0.0;
    for (int c = 1; c <= 10; ++c) {
      const double t = 3.0 * c;
      const double above = static_cast<double>(times.end() - std::upper_bound(times.begin(), times.end(), t));
      worst = std::max(worst, std::abs(above / 1e5 - true_survival(spec, z, x1, t)));
    }
    CHECK(worst < 0.01);
  }
}

TEST_CASE("generate: determinism, prevalence and event proportion") {
  auto spec = reference_dgm();
  spec.n = 20000;
  spec.seed = 4;
  const auto a = generate(spec);
  const auto b = generate(spec);
  CHECK(to_csv(a) == to_csv(b));
  spec.seed = 5;
  CHECK(to_csv(generate(spec)) != to_csv(a));

  double treated = 0.0, events = 0.0;
  for (const auto& s : a.subjects()) {
    treated += s.treatment ? 1.0 : 0.0;
    events += s.event ? 1.0 : 0.0;
    CHECK(s.time <= spec.horizon);
  }
  CHECK(std::abs(treated / 20000.0 - 0.5) < 3.0 * std::sqrt(0.25 / 20000.0));

  // P(event) = E[ F(w)(1 - w/U) + (1/U) int_0^w F(t) dt ] over the uniform
  // (z, x1) lattice, by Simpson's rule on a fine grid.
  const double w = spec.horizon, U = spec.censor_upper;
  double expected = 0.0;
  const auto profiles = cate::enumerate_profiles(5);
  for (bool z : {false, true}) {
    for (const auto& p : profiles) {
      const int m = 4000;
      const double h = w / m;
      auto F = [&](double t) { return t <= 0.0 ? 0.0 : 1.0 - true_survival(spec, z, p.x1, t); };
      double integral = F(0.0) + F(w);
      for (int i = 1; i < m; ++i) integral += (i % 2 ? 4.0 : 2.0) * F(i * h);
      integral *= h / 3.0;
      expected += F(w) * (1.0 - w / U) + integral / U;
    }
  }
  expected /= 64.0;
  CHECK(std::abs(events / 20000.0 - expected) < 0.02);
}

TEST_CASE("without censoring every event inside the horizon is observed") {
  auto spec = weibull_dgm(0.0, 1.0);
  spec.n = 2000;
  const auto f = generate(spec);
  for (const auto& s : f.subjects()) CHECK(s.event == (s.time < spec.horizon));
  std::size_t events = f.event_count();
  CHECK(events == f.size());  // P(T > 100) = e^-100
}

TEST_CASE("null DGM has unit ratio curves; ground truth is deterministic") {
  const auto grid = TimeGrid::uniform(30.0, 101);
  const auto null = ground_truth(null_dgm(), grid, {2});
  CHECK(null.curves.curves.rows() == 32);
  CHECK((null.curves.curves.array() - 1.0).abs().maxCoeff() < 1e-12);

  auto spec = reference_dgm();
  const auto g1 = ground_truth(spec, grid, {2, 3, 4});
  spec.n = 777;
  spec.seed = 42;
  const auto g2 = ground_truth(spec, grid, {2, 3, 4});
  CHECK(g1.curves.curves == g2.curves.curves);
  CHECK(g1.labels == g2.labels);
}

TEST_CASE("k=2 gold labels follow the two coefficient blocks") {
  const auto gt = ground_truth(reference_dgm(), TimeGrid::uniform(30.0, 101), {2, 3, 4});
  const auto& l = gt.labels.at(2);
  const auto profiles = cate::enumerate_profiles(5);
  for (std::size_t p = 0; p < profiles.size(); ++p) CHECK(l[p] == (profiles[p].x1[0] == 1 ? l.back() : l.front()));
  CHECK(l.front() != l.back());
  CHECK(gt.labels.at(3).size() == 32);
  CHECK(gt.labels.at(4).size() == 32);
}

TEST_CASE("JSON round trip and validation errors") {
  const auto spec = reference_dgm();
  const auto j = to_json(spec);
  const auto back = dgm_from_json(j);
  CHECK(back.theta == spec.theta);
  CHECK(back.modifier_names == spec.modifier_names);
  CHECK(back.model.coefficient_names() == spec.model.coefficient_names());
  CHECK(to_json(back) == j);

  auto bad = j;
  bad["coefficients"]["nonsense"] = 1.0;
  CHECK_THROWS_AS(dgm_from_json(bad), ConfigError);
  bad = j;
  bad["coefficients"].erase("beta[z]");
  CHECK_THROWS_AS(dgm_from_json(bad), ConfigError);
  bad = j;
  bad["extra"] = 1;
  CHECK_THROWS_AS(dgm_from_json(bad), ConfigError);

  // Negative slope on log t violates positivity.
  auto neg = spec;
  neg.theta(1) = -0.5;
  CHECK_THROWS_AS(neg.validate(), ConfigError);
}

TEST_CASE("confounded toggle adds four confounders that shift treatment") {
  auto spec = reference_dgm();
  spec.n = 20000;
  spec.confounding.enabled = true;
  const auto f = generate(spec);
  REQUIRE(f.confounder_count() == 4);
  double t_hi = 0, n_hi = 0, t_lo = 0, n_lo = 0;
  for (const auto& s : f.subjects()) {
    CHECK((s.confounders[3] == 0.0 || s.confounders[3] == 1.0));
    (s.confounders[0] > 0 ? n_hi : n_lo) += 1;
    (s.confounders[0] > 0 ? t_hi : t_lo) += s.treatment ? 1 : 0;
  }
  CHECK(t_hi / n_hi > t_lo / n_lo + 0.1);
}
