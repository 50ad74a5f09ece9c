#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <set>

#include "phenocate/cate.hpp"
#include "phenocate/error.hpp"
#include "phenocate/simgen.hpp"

using namespace phenocate;
using namespace phenocate::cate;

namespace {

// H(t | z) = rate(z) * t.
Predictor exponential(double rate0, double rate1) {
  return [=](bool z, std::span<const std::uint8_t>, const TimeGrid& grid, Quantity q) {
    const double r = z ? rate1 : rate0;
    std::vector<double> out;
    for (double t : grid.points()) {
      switch (q) {
        case Quantity::survival: out.push_back(std::exp(-r * t)); break;
        case Quantity::hazard: out.push_back(r); break;
        case Quantity::cumhaz: out.push_back(r * t); break;
      }
    }
    return out;
  };
}

double cube_plus(double x) { return x > 0.0 ? x * x * x : 0.0; }
double square_plus(double x) { return x > 0.0 ? x * x : 0.0; }

// One-knot model with a time-varying treatment effect, written out by hand.
struct TvModel {
  double kmin = std::log(0.5), kmax = std::log(30.0), knot = std::log(10.0);
  Eigen::VectorXd theta{{-2.0, 0.9, 0.03, 0.25, -0.02, -0.3}};
  rpsm::ModelSpec spec;

  TvModel() {
    spec.basis = SplineBasis(kmin, kmax, {knot});
    spec.terms = {rpsm::parse_term("z", {"m"})};
    spec.tv_terms = {0};
  }
  double lambda() const { return (kmax - knot) / (kmax - kmin); }
  double v(double x) const {
    return cube_plus(x - knot) - lambda() * cube_plus(x - kmin) - (1.0 - lambda()) * cube_plus(x - kmax);
  }
  double dv(double x) const {
    return 3.0 * (square_plus(x - knot) - lambda() * square_plus(x - kmin) -
                  (1.0 - lambda()) * square_plus(x - kmax));
  }
  double delta_eta(double t) const { return theta(5) + theta(3) * std::log(t) + theta(4) * v(std::log(t)); }
  double slope(bool z, double t) const {
    const double x = std::log(t);
    double s = theta(1) + theta(2) * dv(x);
    if (z) s += theta(3) + theta(4) * dv(x);
    return s;
  }
};

SurvivalFrame reference_sample(std::size_t n, std::uint64_t seed) {
  auto spec = simgen::reference_dgm();
  spec.n = n;
  spec.seed = seed;
  return simgen::generate(spec);
}

double mean_sd(const CateEnsemble& e) {
  const auto B = static_cast<double>(e.size());
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(e.curves[0].rows(), e.curves[0].cols());
  for (const auto& c : e.curves) mean += c / B;
  Eigen::MatrixXd var = Eigen::MatrixXd::Zero(mean.rows(), mean.cols());
  for (const auto& c : e.curves) var += (c - mean).cwiseAbs2() / (B - 1.0);
  return var.cwiseSqrt().mean();
}

}  // namespace

TEST_CASE("profile enumeration") {
  const auto p = enumerate_profiles(3);
  REQUIRE(p.size() == 8);
  std::set<std::vector<std::uint8_t>> seen;
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(p[i].id == i);
    CHECK(seen.insert(p[i].x1).second);
  }
  CHECK(profile_from_id(5, 3).x1 == std::vector<std::uint8_t>{1, 0, 1});
  CHECK(profile_from_id(1, 3).x1 == std::vector<std::uint8_t>{0, 0, 1});
  CHECK(to_string(EffectSpec{}) == "cumhaz_ratio");
  const auto e = effect_from_strings("survival", "difference");
  CHECK(e.g == Quantity::survival);
  CHECK(e.f == Contrast::difference);
  CHECK_THROWS_AS(effect_from_strings("odds", "ratio"), ConfigError);
}

TEST_CASE("null and exponential contrasts") {
  const auto grid = TimeGrid::uniform(5.0, 50);
  const auto profile = profile_from_id(0, 1);
  for (Quantity g : {Quantity::survival, Quantity::hazard, Quantity::cumhaz}) {
    const auto r = cate_curve(exponential(0.7, 0.7), profile, {g, Contrast::ratio}, grid);
    const auto d = cate_curve(exponential(0.7, 0.7), profile, {g, Contrast::difference}, grid);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      CHECK(r.values[i] == 1.0);
      CHECK(d.values[i] == 0.0);
    }
  }
  const auto chr = cate_curve(exponential(1.0, 2.0), profile, {}, grid);
  for (double v : chr.values) CHECK(v == doctest::Approx(2.0).epsilon(1e-14));
  const auto sd = cate_curve(exponential(1.0, 2.0), profile, {Quantity::survival, Contrast::difference}, grid);
  for (std::size_t i = 0; i < grid.size(); ++i)
    CHECK(sd.values[i] == doctest::Approx(std::exp(-2.0 * grid[i]) - std::exp(-grid[i])));
}

TEST_CASE("ratio with a vanishing denominator names the time point") {
  const auto grid = TimeGrid::linspace(1.0, 2.0, 3);
  try {
    cate_curve(exponential(0.0, 1.0), profile_from_id(0, 1), {}, grid);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("t = 1") != std::string::npos);
  }
}

TEST_CASE("time-varying treatment effect matches the closed-form eta difference") {
  const TvModel m;
  const auto grid = TimeGrid::uniform(30.0, 101);
  const auto pred = rpsm_predictor(m.theta, m.spec);
  const auto profile = profile_from_id(0, 1);
  const auto chr = cate_curve(pred, profile, {Quantity::cumhaz, Contrast::ratio}, grid);
  const auto hr = cate_curve(pred, profile, {Quantity::hazard, Contrast::ratio}, grid);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double t = grid[i];
    CHECK(std::abs(chr.values[i] - std::exp(m.delta_eta(t))) < 1e-8);
    const double hr_oracle = std::exp(m.delta_eta(t)) * m.slope(true, t) / m.slope(false, t);
    CHECK(std::abs(hr.values[i] - hr_oracle) < 1e-8);
  }
  CHECK(std::abs(hr.values.front() - hr.values.back()) > 0.1);
}

TEST_CASE("proportional hazards give a constant cumhaz ratio") {
  const auto spec = simgen::reference_dgm();
  rpsm::ModelSpec ph = spec.model;
  ph.tv_terms.clear();
  Eigen::VectorXd theta(ph.dimension());
  theta << spec.theta.head(3), spec.theta.tail(static_cast<Eigen::Index>(ph.terms.size()));
  const auto pred = rpsm_predictor(theta, ph);
  const auto grid = TimeGrid::uniform(30.0, 101);
  for (const auto& p : enumerate_profiles(5)) {
    const auto c = cate_curve(pred, p, {}, grid);
    for (double v : c.values) CHECK(std::abs(v - c.values.front()) < 1e-8);
  }
}

TEST_CASE("log survival ratio equals minus the cumhaz difference") {
  const auto spec = simgen::reference_dgm();
  const auto pred = simgen::truth_predictor(spec);
  const auto grid = TimeGrid::uniform(30.0, 101);
  for (std::size_t id : {0u, 7u, 19u, 31u}) {
    const auto p = profile_from_id(id, 5);
    const auto sr = cate_curve(pred, p, {Quantity::survival, Contrast::ratio}, grid);
    const auto hd = cate_curve(pred, p, {Quantity::cumhaz, Contrast::difference}, grid);
    for (std::size_t i = 0; i < grid.size(); ++i) CHECK(std::abs(std::log(sr.values[i]) + hd.values[i]) < 1e-10);
  }
}

TEST_CASE("zero covariance draws reproduce the point estimate") {
  const TvModel m;
  rpsm::Fit fit;
  fit.theta = m.theta;
  fit.covariance = Eigen::MatrixXd::Zero(m.theta.size(), m.theta.size());
  const auto draws = rpsm::sample_coefficients(fit, 1, 3);
  REQUIRE(draws.size() == 1);
  const auto grid = TimeGrid::uniform(30.0, 31);
  const auto p = profile_from_id(0, 1);
  const auto a = cate_curve(rpsm_predictor(draws[0], m.spec), p, {}, grid);
  const auto b = cate_curve(rpsm_predictor(m.theta, m.spec), p, {}, grid);
  for (std::size_t i = 0; i < grid.size(); ++i) CHECK(a.values[i] == doctest::Approx(b.values[i]).epsilon(1e-12));
}

TEST_CASE("rpsm ensemble spread shrinks like 1 / sqrt(n)") {
  Engine engine;
  engine.model = simgen::reference_dgm().model;
  const auto grid = TimeGrid::uniform(30.0, 51);
  std::vector<double> sd;
  const std::vector<double> ns{1500, 5000, 10000};
  for (double n : ns) sd.push_back(mean_sd(bootstrap_ensemble(reference_sample(std::size_t(n), 21), engine, {}, grid, 200, 5)));
  for (std::size_t i = 1; i < ns.size(); ++i) {
    const double observed = sd[0] / sd[i];
    const double expected = std::sqrt(ns[i] / ns[0]);
    CHECK(observed > 0.75 * expected);
    CHECK(observed < 1.33 * expected);
  }
}

TEST_CASE("summary order statistics and coverage") {
  CateEnsemble e;
  e.grid = TimeGrid::uniform(1.0, 4);
  e.profiles = enumerate_profiles(1);
  for (double v : {3.0, 1.0, 2.0}) e.curves.push_back(Eigen::MatrixXd::Constant(2, 4, v));
  auto s = ensemble_summary(e);
  CHECK((s.median.array() == 2.0).all());
  CHECK(s.lower(0, 0) == doctest::Approx(1.0 + 0.025 * 2.0));
  CHECK(s.upper(1, 3) == doctest::Approx(1.0 + 0.975 * 2.0));

  for (auto& c : e.curves) c.setConstant(1.5);
  s = ensemble_summary(e);
  CHECK((s.lower.array() == 1.5).all());
  CHECK((s.upper.array() == 1.5).all());
  e.curves.pop_back();
  CHECK_THROWS(ensemble_summary(e));

  // Correctly specified rpsm at n = 10000: bands hold the true curve at >= 80% of points.
  const auto spec = simgen::reference_dgm();
  Engine engine;
  engine.model = spec.model;
  const auto grid = TimeGrid::uniform(30.0, 101);
  const auto ens = bootstrap_ensemble(reference_sample(10000, 8), engine, {}, grid, 200, 9);
  const auto band = ensemble_summary(ens);
  const auto truth = simgen::ground_truth(spec, grid, {2});
  const auto inside = ((truth.curves.curves.array() >= band.lower.array()) &&
                       (truth.curves.curves.array() <= band.upper.array())).cast<double>();
  CHECK(inside.mean() >= 0.8);
}

TEST_CASE("ensembles are deterministic and independent of the job count") {
  const auto frame = reference_sample(1500, 2);
  Engine rp;
  rp.model = simgen::reference_dgm().model;
  const auto grid = TimeGrid::uniform(30.0, 21);
  const auto a = bootstrap_ensemble(frame, rp, {}, grid, 10, 4, 1);
  const auto b = bootstrap_ensemble(frame, rp, {}, grid, 10, 4, 3);
  REQUIRE(a.size() == 10);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.curves[i] == b.curves[i]);

  Engine nn;
  nn.kind = EngineKind::snnets;
  nn.net.training.epochs = 5;
  const auto c = bootstrap_ensemble(frame, nn, {}, grid, 3, 4, 1);
  const auto d = bootstrap_ensemble(frame, nn, {}, grid, 3, 4, 2);
  REQUIRE(c.size() == 3);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(c.curves[i] == d.curves[i]);
  CHECK(c.curves[0] != c.curves[1]);
  CHECK_THROWS_AS(bootstrap_ensemble(frame, rp, {}, grid, 0, 4), ConfigError);
}

TEST_CASE("save and load round trip") {
  const auto frame = reference_sample(1500, 3);
  Engine rp;
  rp.model = simgen::reference_dgm().model;
  const auto e = bootstrap_ensemble(frame, rp, {Quantity::survival, Contrast::difference},
                                    TimeGrid::uniform(30.0, 11), 4, 6);
  const auto dir = std::filesystem::temp_directory_path() / "phenocate_test_cate_roundtrip";
  std::filesystem::remove_all(dir);
  const auto files = save_ensemble(e, dir);
  CHECK(files.size() == 5);
  CHECK(std::filesystem::exists(dir / "replicate_001.csv"));
  CHECK(std::filesystem::exists(dir / "ensemble.json"));
  const auto back = load_ensemble(dir);
  CHECK(back.engine == e.engine);
  CHECK(to_string(back.effect) == "survival_difference");
  CHECK(back.grid == e.grid);
  CHECK(back.B == 4);
  CHECK(back.seed == 6);
  CHECK(back.replicate_ids == e.replicate_ids);
  REQUIRE(back.size() == e.size());
  for (std::size_t i = 0; i < e.size(); ++i) CHECK(back.curves[i] == e.curves[i]);
  std::filesystem::remove_all(dir);
}
