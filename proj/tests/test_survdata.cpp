#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <random>

#include "phenocate/error.hpp"
#include "phenocate/io.hpp"
#include "phenocate/survdata.hpp"

using namespace phenocate;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "phenocate_test_survdata";
  std::filesystem::create_directories(dir);
  return dir / name;
}

SurvivalFrame simple_frame(std::vector<double> times, std::vector<int> events) {
  std::vector<Subject> subjects;
  for (std::size_t i = 0; i < times.size(); ++i) {
    Subject s;
    s.id = static_cast<std::int64_t>(i);
    s.time = times[i];
    s.event = events[i] != 0;
    subjects.push_back(s);
  }
  return SurvivalFrame(std::move(subjects), {}, {});
}

SurvivalFrame random_frame(std::mt19937_64& rng, std::size_t n, std::size_t p1, std::size_t p2) {
  std::uniform_real_distribution<double> unif(0.01, 10.0);
  std::bernoulli_distribution coin(0.5);
  std::normal_distribution<double> normal(0.0, 3.0);
  std::vector<Subject> subjects;
  for (std::size_t i = 0; i < n; ++i) {
    Subject s;
    s.id = static_cast<std::int64_t>(i + 1);
    s.time = unif(rng);
    s.event = coin(rng);
    s.treatment = coin(rng);
    for (std::size_t j = 0; j < p1; ++j) s.modifiers.push_back(coin(rng) ? 1 : 0);
    for (std::size_t j = 0; j < p2; ++j) s.confounders.push_back(normal(rng));
    subjects.push_back(s);
  }
  std::vector<std::string> mods, confs;
  for (std::size_t j = 0; j < p1; ++j) mods.push_back("m" + std::to_string(j));
  for (std::size_t j = 0; j < p2; ++j) confs.push_back("c" + std::to_string(j));
  return SurvivalFrame(std::move(subjects), mods, confs);
}

// Literal product-limit definition: S(t) = prod over event times u <= t of
// (1 - d(u) / n(u)), risk set n(u) = #{time >= u}.
double km_oracle(const SurvivalFrame& f, double t) {
  std::vector<double> event_times;
  for (const auto& s : f.subjects()) {
    if (s.event && s.time <= t) event_times.push_back(s.time);
  }
  std::sort(event_times.begin(), event_times.end());
  event_times.erase(std::unique(event_times.begin(), event_times.end()), event_times.end());
  double surv = 1.0;
  for (double u : event_times) {
    double d = 0, n = 0;
    for (const auto& s : f.subjects()) {
      if (s.time >= u) n += 1;
      if (s.time == u && s.event) d += 1;
    }
    surv *= 1.0 - d / n;
  }
  return surv;
}

}  // namespace

TEST_CASE("load_csv reads a well-formed file") {
  const auto path = temp_file("three.csv");
  io::write_text(path, "id,time,event,z,age,diab\n1,1.5,1,0,1,0\n2,2.0,0,1,0,1\n3,3.25,1,1,1,1\n");
  const auto frame = load_csv(path);
  REQUIRE(frame.size() == 3);
  CHECK(frame.modifier_names() == std::vector<std::string>{"age", "diab"});
  CHECK(frame.subjects()[2].time == 3.25);
  CHECK(frame.subjects()[1].treatment);
  CHECK(frame.subjects()[0].modifiers == std::vector<std::uint8_t>{1, 0});
  CHECK(frame.horizon() == 3.25);
}

TEST_CASE("load_csv rejects invalid rows with the row index") {
  const auto path = temp_file("bad.csv");
  io::write_text(path, "id,time,event,z,m\n1,1.0,1,0,1\n2,-1,0,1,0\n");
  try {
    (void)load_csv(path);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("row 1") != std::string::npos);
  }

  io::write_text(path, "id,time,z,m\n1,1.0,0,1\n");
  CHECK_THROWS_AS(load_csv(path), DataError);  // missing event column
  io::write_text(path, "id,time,event,z,m\n1,abc,1,0,1\n");
  CHECK_THROWS_AS(load_csv(path), DataError);
  io::write_text(path, "id,time,event,z,m\n1,1.0,1,0,2\n");
  CHECK_THROWS_AS(load_csv(path), DataError);
  io::write_text(path, "id,time,event,z,m\n1,1.0,1,0,\n");
  CHECK_THROWS_AS(load_csv(path), DataError);  // missing value
}

TEST_CASE("save_csv / load_csv round trip over random frames") {
  std::mt19937_64 rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    const auto frame = random_frame(rng, 1 + rep * 3, rep % 4, rep % 3);
    const auto path = temp_file("roundtrip.csv");
    save_csv(frame, path);
    const auto back = load_csv(path, CsvSchema::for_frame(frame));
    REQUIRE(back.size() == frame.size());
    CHECK(back.modifier_names() == frame.modifier_names());
    CHECK(back.confounder_names() == frame.confounder_names());
    for (std::size_t i = 0; i < frame.size(); ++i) {
      const auto& a = frame.subjects()[i];
      const auto& b = back.subjects()[i];
      CHECK(a.id == b.id);
      CHECK(std::abs(a.time - b.time) <= 1e-12 * std::abs(a.time));
      CHECK(a.event == b.event);
      CHECK(a.treatment == b.treatment);
      CHECK(a.modifiers == b.modifiers);
      REQUIRE(a.confounders.size() == b.confounders.size());
      for (std::size_t j = 0; j < a.confounders.size(); ++j) {
        CHECK(std::abs(a.confounders[j] - b.confounders[j]) <= 1e-12 * std::abs(a.confounders[j]));
      }
    }
  }
}

TEST_CASE("kaplan_meier hand examples") {
  const auto km = kaplan_meier(simple_frame({1, 2, 3}, {1, 0, 1}));
  CHECK(km(0.5) == 1.0);
  CHECK(km(1.0) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(km(2.0) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(km(3.0) == 0.0);

  const auto censored = kaplan_meier(simple_frame({1, 2, 3}, {0, 0, 0}));
  CHECK(censored.times.empty());
  CHECK(censored(100.0) == 1.0);

  const auto single = kaplan_meier(simple_frame({5}, {1}));
  CHECK(single(4.999) == 1.0);
  CHECK(single(5.0) == 0.0);
  CHECK(single(7.0) == 0.0);
}

TEST_CASE("kaplan_meier matches the product-limit oracle on small frames") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> tick(1, 8);  // forces ties
  std::bernoulli_distribution coin(0.6);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 1 + static_cast<std::size_t>(rep % 20);
    std::vector<double> times;
    std::vector<int> events;
    for (std::size_t i = 0; i < n; ++i) {
      times.push_back(0.5 * tick(rng));
      events.push_back(coin(rng));
    }
    const auto frame = simple_frame(times, events);
    const auto km = kaplan_meier(frame);
    double prev = 1.0;
    for (double t = 0.25; t <= 4.5; t += 0.25) {
      const double s = km(t);
      CHECK(s == doctest::Approx(km_oracle(frame, t)).epsilon(1e-12));
      CHECK(s <= prev + 1e-15);
      prev = s;
    }
    for (std::size_t i = 0; i < km.times.size(); ++i) {
      CHECK(km.lower[i] <= km.survival[i] + 1e-15);
      CHECK(km.upper[i] >= km.survival[i] - 1e-15);
    }
  }
}

TEST_CASE("weighted kaplan_meier with unit weights equals the unweighted estimate") {
  const auto frame = simple_frame({1, 2, 2, 3, 4, 6}, {1, 1, 0, 1, 0, 1});
  std::vector<double> ones(frame.size(), 1.0);
  const auto a = kaplan_meier(frame);
  const auto b = kaplan_meier(frame, ones);
  CHECK(a.survival == b.survival);
  CHECK_THROWS_AS(kaplan_meier(frame, std::vector<double>(2, 1.0)), DataError);
}

TEST_CASE("make_intervals") {
  const auto frame = simple_frame({1, 3, 5, 8}, {1, 1, 1, 1});
  const auto uni = make_intervals(frame, 4, CutStrategy::uniform);
  CHECK(uni.cuts == std::vector<double>{0, 2, 4, 6, 8});
  CHECK_THROWS_AS(make_intervals(frame, 1, CutStrategy::uniform), DataError);
  CHECK_THROWS_AS(make_intervals(frame, 5, CutStrategy::quantile), DataError);

  // Quantile cuts balance per-interval event counts.
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unif(0.0, 100.0);
  std::vector<double> times;
  std::vector<int> events;
  for (int i = 0; i < 2000; ++i) {
    times.push_back(unif(rng) + 1e-3);
    events.push_back(i % 5 != 0);
  }
  const auto big = simple_frame(times, events);
  const auto q = make_intervals(big, 10, CutStrategy::quantile);
  REQUIRE(q.count() == 10);
  std::vector<int> counts(10, 0);
  const auto disc = discretize(big, q);
  for (std::size_t i = 0; i < disc.size(); ++i) {
    if (disc[i].event) ++counts[disc[i].interval];
  }
  const auto [mn, mx] = std::minmax_element(counts.begin(), counts.end());
  CHECK(*mn > 0);
  CHECK(static_cast<double>(*mx) / *mn <= 1.5);
}

TEST_CASE("discretize respects left-closed right-open intervals") {
  IntervalScheme scheme{{0.0, 2.0, 4.0}};
  CHECK(scheme.locate(2.5) == 1);
  CHECK(scheme.locate(2.0) == 1);
  CHECK(scheme.locate(1.999) == 0);
  CHECK(scheme.locate(4.0) == 1);
  CHECK_THROWS_AS(scheme.locate(5.0), DataError);

  const auto frame = simple_frame({0.5, 1.5, 2.0, 3.9}, {1, 0, 0, 1});
  const auto d = discretize(frame, scheme);
  CHECK(d[0].interval == 0);
  CHECK(d[0].past_midpoint == false);
  CHECK(d[1].past_midpoint == true);
  CHECK(d[2].interval == 1);
  CHECK(d[2].past_midpoint == false);
  CHECK(d[3].past_midpoint == true);

  const auto late = simple_frame({5.0}, {1});
  CHECK_THROWS_AS(discretize(late, scheme), DataError);
}

TEST_CASE("discretize after make_intervals assigns exactly one covering interval") {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    auto frame = random_frame(rng, 200, 0, 0);
    for (auto strategy : {CutStrategy::quantile, CutStrategy::uniform}) {
      const auto scheme = make_intervals(frame, 8, strategy);
      const auto d = discretize(frame, scheme);
      for (std::size_t i = 0; i < d.size(); ++i) {
        const double t = frame.subjects()[i].time;
        const auto j = d[i].interval;
        REQUIRE(j < scheme.count());
        CHECK(scheme.cuts[j] <= t);
        CHECK((t < scheme.cuts[j + 1] || (j + 1 == scheme.count() && t == scheme.cuts.back())));
      }
    }
  }
}

TEST_CASE("TimeGrid") {
  const auto g = TimeGrid::uniform(10.0);
  CHECK(g.size() == 101);
  CHECK(g.front() == doctest::Approx(10.0 / 101.0));
  CHECK(g.back() == 10.0);
  CHECK_THROWS_AS(TimeGrid({1.0, 1.0}), DataError);
  CHECK_THROWS_AS(TimeGrid({1.0}), DataError);
  const auto w = TimeGrid::linspace(0.5, 2.5, 5).trapezoid_weights();
  double sum = 0;
  for (double x : w) sum += x;
  CHECK(sum == doctest::Approx(2.0));
}

TEST_CASE("empty frame is rejected") {
  CHECK_THROWS_AS(SurvivalFrame({}, {}, {}), DataError);
}
