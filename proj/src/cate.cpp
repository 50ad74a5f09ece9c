#include "phenocate/cate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "phenocate/error.hpp"
#include "phenocate/io.hpp"
#include "phenocate/parallel.hpp"

namespace phenocate::cate {

std::vector<Profile> enumerate_profiles(std::size_t p1) {
  if (p1 == 0 || p1 > 20) throw ConfigError("profile enumeration needs 1..20 binary modifiers");
  std::vector<Profile> out;
  for (std::size_t id = 0; id < (std::size_t{1} << p1); ++id) out.push_back(profile_from_id(id, p1));
  return out;
}

Profile profile_from_id(std::size_t id, std::size_t p1) {
  if (id >= (std::size_t{1} << p1)) throw DataError("profile id " + std::to_string(id) + " out of range");
  Profile p;
  p.id = id;
  for (std::size_t j = 0; j < p1; ++j) p.x1.push_back(static_cast<std::uint8_t>((id >> (p1 - 1 - j)) & 1u));
  return p;
}

std::string to_string(const EffectSpec& e) {
  return std::string(phenocate::to_string(e.g)) + (e.f == Contrast::ratio ? "_ratio" : "_difference");
}

EffectSpec effect_from_strings(const std::string& g, const std::string& f) {
  EffectSpec e;
  e.g = quantity_from_string(g);
  if (f == "ratio") e.f = Contrast::ratio;
  else if (f == "difference") e.f = Contrast::difference;
  else throw ConfigError("unknown effect contrast '" + f + "'");
  return e;
}

Predictor rpsm_predictor(Eigen::VectorXd theta, rpsm::ModelSpec spec) {
  return [theta = std::move(theta), spec = std::move(spec)](bool z, std::span<const std::uint8_t> x1,
                                                             const TimeGrid& grid, Quantity q) {
    return rpsm::predict(theta, spec, z, x1, grid, q).values;
  };
}

Predictor snnets_predictor(nnsurv::NetParams params, IntervalScheme scheme) {
  return [params = std::move(params), scheme = std::move(scheme)](bool z, std::span<const std::uint8_t> x1,
                                                                   const TimeGrid& grid, Quantity q) {
    const auto sh = nnsurv::smooth(params, z, x1, scheme);
    std::vector<double> out;
    out.reserve(grid.size());
    for (double t : grid.points()) {
      switch (q) {
        case Quantity::survival: out.push_back(sh.survival(t)); break;
        case Quantity::hazard: out.push_back(sh.hazard(t)); break;
        case Quantity::cumhaz: out.push_back(sh.cumhaz(t)); break;
      }
    }
    return out;
  };
}

CateCurve cate_curve(const Predictor& predictor, const Profile& profile, const EffectSpec& effect,
                     const TimeGrid& grid) {
  const auto treated = predictor(true, profile.x1, grid, effect.g);
  const auto control = predictor(false, profile.x1, grid, effect.g);
  CateCurve c{profile, effect, grid, {}};
  c.values.resize(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (effect.f == Contrast::ratio) {
      if (!(std::abs(control[i]) >= 1e-12)) {
        throw NumericalError("CATE ratio denominator vanishes at t = " + io::fmt(grid[i]) + " for profile " +
                             std::to_string(profile.id));
      }
      c.values[i] = treated[i] / control[i];
    } else {
      c.values[i] = treated[i] - control[i];
    }
    if (!std::isfinite(c.values[i])) {
      throw NumericalError("non-finite CATE at t = " + io::fmt(grid[i]) + " for profile " +
                           std::to_string(profile.id));
    }
  }
  return c;
}

const char* to_string(EngineKind k) { return k == EngineKind::rpsm ? "rpsm" : "snnets"; }

EngineKind engine_from_string(const std::string& s) {
  if (s == "rpsm") return EngineKind::rpsm;
  if (s == "snnets") return EngineKind::snnets;
  throw ConfigError("unknown engine '" + s + "'");
}

namespace {

Eigen::MatrixXd curve_matrix(const Predictor& predictor, const std::vector<Profile>& profiles,
                             const EffectSpec& effect, const TimeGrid& grid) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(profiles.size()), static_cast<Eigen::Index>(grid.size()));
  for (std::size_t p = 0; p < profiles.size(); ++p) {
    const auto c = cate_curve(predictor, profiles[p], effect, grid);
    for (std::size_t g = 0; g < grid.size(); ++g) m(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(g)) = c.values[g];
  }
  return m;
}

double quantile(std::vector<double>& v, double p) {
  std::sort(v.begin(), v.end());
  const double h = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

CateEnsemble bootstrap_ensemble(const SurvivalFrame& frame, const Engine& engine, const EffectSpec& effect,
                                const TimeGrid& grid, std::size_t B, std::uint64_t seed, std::size_t jobs) {
  if (B < 1) throw ConfigError("bootstrap needs B >= 1");
  if (frame.size() == 0) throw DataError("bootstrap: empty frame");
  CateEnsemble ens;
  ens.engine = engine.kind;
  ens.effect = effect;
  ens.grid = grid;
  ens.profiles = enumerate_profiles(frame.modifier_count());
  ens.B = B;
  ens.seed = seed;

  std::vector<Eigen::MatrixXd> curves(B);
  std::vector<std::string> causes(B);

  if (engine.kind == EngineKind::rpsm) {
    const auto fitted = rpsm::fit(frame, engine.model, engine.fit_options);
    const auto draws = rpsm::sample_coefficients(fitted, B, seed);
    parallel_for(B, jobs, [&](std::size_t b) {
      try {
        curves[b] = curve_matrix(rpsm_predictor(draws[b], engine.model), ens.profiles, effect, grid);
      } catch (const std::exception& e) {
        causes[b] = e.what();
      }
    });
  } else {
    const auto scheme = make_intervals(frame, engine.intervals, engine.cuts);
    nnsurv::NetConfig net = engine.net;
    net.input_dim = frame.modifier_count() + 1;
    net.output_dim = scheme.count();
    parallel_for(B, jobs, [&](std::size_t b) {
      try {
        std::mt19937_64 rng(seed + b);
        std::uniform_int_distribution<std::size_t> pick(0, frame.size() - 1);
        std::vector<std::size_t> rows(frame.size());
        for (auto& r : rows) r = pick(rng);
        nnsurv::NetConfig cfg = net;
        cfg.training.seed = seed + b;
        const auto trained = nnsurv::train(frame.select(rows), scheme, cfg);
        curves[b] = curve_matrix(snnets_predictor(trained.params, scheme), ens.profiles, effect, grid);
      } catch (const std::exception& e) {
        causes[b] = e.what();
      }
    });
  }

  for (std::size_t b = 0; b < B; ++b) {
    if (causes[b].empty()) {
      ens.replicate_ids.push_back(b);
      ens.curves.push_back(std::move(curves[b]));
    } else {
      ens.failures.push_back({b, causes[b]});
    }
  }
  if (10 * ens.failures.size() > B) {
    throw NumericalError(std::to_string(ens.failures.size()) + " of " + std::to_string(B) +
                         " bootstrap replicates failed; first cause: " + ens.failures.front().cause);
  }
  return ens;
}

Summary ensemble_summary(const CateEnsemble& ensemble) {
  if (ensemble.size() < 3) throw DataError("ensemble summary needs at least 3 successful replicates");
  const Eigen::Index P = ensemble.curves.front().rows(), G = ensemble.curves.front().cols();
  Summary s{Eigen::MatrixXd(P, G), Eigen::MatrixXd(P, G), Eigen::MatrixXd(P, G)};
  std::vector<double> v(ensemble.size());
  for (Eigen::Index p = 0; p < P; ++p) {
    for (Eigen::Index g = 0; g < G; ++g) {
      for (std::size_t b = 0; b < v.size(); ++b) v[b] = ensemble.curves[b](p, g);
      s.median(p, g) = quantile(v, 0.5);
      s.lower(p, g) = quantile(v, 0.025);
      s.upper(p, g) = quantile(v, 0.975);
    }
  }
  return s;
}

std::vector<std::filesystem::path> save_ensemble(const CateEnsemble& ensemble, const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> written;
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t r = 0; r < ensemble.size(); ++r) {
    char name[32];
    std::snprintf(name, sizeof name, "replicate_%03zu.csv", ensemble.replicate_ids[r] + 1);
    std::ostringstream out;
    out << "profile_id,t,value\n";
    for (std::size_t p = 0; p < ensemble.profiles.size(); ++p) {
      for (std::size_t g = 0; g < ensemble.grid.size(); ++g) {
        out << ensemble.profiles[p].id << ',' << io::fmt(ensemble.grid[g]) << ','
            << io::fmt(ensemble.curves[r](static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(g))) << '\n';
      }
    }
    io::write_text(dir / name, out.str());
    written.push_back(dir / name);
    files.push_back(name);
  }
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& f : ensemble.failures) failures.push_back({{"replicate", f.replicate + 1}, {"cause", f.cause}});
  nlohmann::json j{{"engine", to_string(ensemble.engine)},
                   {"effect", {{"g", phenocate::to_string(ensemble.effect.g)},
                               {"f", ensemble.effect.f == Contrast::ratio ? "ratio" : "difference"}}},
                   {"seed", ensemble.seed},
                   {"B", ensemble.B},
                   {"modifier_count", ensemble.profiles.empty() ? 0 : ensemble.profiles.front().x1.size()},
                   {"grid", ensemble.grid.points()},
                   {"files", files},
                   {"failures", failures}};
  io::write_text(dir / "ensemble.json", j.dump(2) + "\n");
  written.push_back(dir / "ensemble.json");
  return written;
}

CateEnsemble load_ensemble(const std::filesystem::path& dir) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(dir / "ensemble.json"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("ensemble.json: " + std::string(e.what()));
  }
  CateEnsemble ens;
  ens.engine = engine_from_string(j.at("engine").get<std::string>());
  ens.effect = effect_from_strings(j.at("effect").at("g").get<std::string>(), j.at("effect").at("f").get<std::string>());
  ens.seed = j.at("seed").get<std::uint64_t>();
  ens.B = j.at("B").get<std::size_t>();
  ens.grid = TimeGrid(j.at("grid").get<std::vector<double>>());
  ens.profiles = enumerate_profiles(j.at("modifier_count").get<std::size_t>());
  for (const auto& f : j.at("failures")) {
    ens.failures.push_back({f.at("replicate").get<std::size_t>() - 1, f.at("cause").get<std::string>()});
  }
  const auto P = static_cast<Eigen::Index>(ens.profiles.size());
  const auto G = static_cast<Eigen::Index>(ens.grid.size());
  for (const auto& name : j.at("files")) {
    const std::string file = name.get<std::string>();
    unsigned b = 0;
    if (std::sscanf(file.c_str(), "replicate_%u.csv", &b) != 1 || b == 0) {
      throw DataError("unexpected replicate file name '" + file + "'");
    }
    std::istringstream in(io::read_text(dir / file));
    std::string line;
    std::getline(in, line);
    if (line != "profile_id,t,value") throw DataError(file + ": unexpected header");
    Eigen::MatrixXd m = Eigen::MatrixXd::Constant(P, G, std::nan(""));
    Eigen::Index row = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto cells = io::split_csv_line(line);
      if (cells.size() != 3) throw DataError(file + ": expected 3 columns");
      const auto p = static_cast<Eigen::Index>(io::parse_double(cells[0], file + " profile_id"));
      if (p < 0 || p >= P || row % G >= G) throw DataError(file + ": profile id out of range");
      m(p, row % G) = io::parse_double(cells[2], file + " value");
      ++row;
    }
    if (row != P * G || !m.allFinite()) throw DataError(file + ": incomplete curve table");
    ens.replicate_ids.push_back(b - 1);
    ens.curves.push_back(std::move(m));
  }
  return ens;
}

}  // namespace phenocate::cate
