#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "phenocate/nnsurv.hpp"
#include "phenocate/rpsm.hpp"
#include "phenocate/survdata.hpp"

namespace phenocate::cate {

// Binary modifier profile; id reads x1 as a binary number, first modifier
// most significant.
struct Profile {
  std::vector<std::uint8_t> x1;
  std::size_t id = 0;
};

std::vector<Profile> enumerate_profiles(std::size_t p1);
Profile profile_from_id(std::size_t id, std::size_t p1);

enum class Contrast { ratio, difference };

struct EffectSpec {
  Quantity g = Quantity::cumhaz;
  Contrast f = Contrast::ratio;
};

std::string to_string(const EffectSpec& e);  // e.g. "cumhaz_ratio"
EffectSpec effect_from_strings(const std::string& g, const std::string& f);

// g(t | z, x1) on a grid.
using Predictor =
    std::function<std::vector<double>(bool z, std::span<const std::uint8_t> x1, const TimeGrid& grid, Quantity q)>;

Predictor rpsm_predictor(Eigen::VectorXd theta, rpsm::ModelSpec spec);
Predictor snnets_predictor(nnsurv::NetParams params, IntervalScheme scheme);

struct CateCurve {
  Profile profile;
  EffectSpec effect;
  TimeGrid grid;
  std::vector<double> values;
};

// f(g(t | 1, x1), g(t | 0, x1)); a ratio denominator below 1e-12 in
// magnitude throws NumericalError naming t.
CateCurve cate_curve(const Predictor& predictor, const Profile& profile, const EffectSpec& effect,
                     const TimeGrid& grid);

enum class EngineKind { rpsm, snnets };

struct Engine {
  EngineKind kind = EngineKind::rpsm;
  rpsm::ModelSpec model;         // rpsm
  rpsm::FitOptions fit_options;  // rpsm
  nnsurv::NetConfig net;         // snnets; input/output dims are set from the data
  std::size_t intervals = 20;    // snnets
  CutStrategy cuts = CutStrategy::quantile;
};

const char* to_string(EngineKind k);
EngineKind engine_from_string(const std::string& s);

struct Failure {
  std::size_t replicate = 0;
  std::string cause;
};

struct CateEnsemble {
  EngineKind engine = EngineKind::rpsm;
  EffectSpec effect;
  TimeGrid grid;
  std::vector<Profile> profiles;
  std::vector<std::size_t> replicate_ids;  // 0-based b of each kept replicate
  std::vector<Eigen::MatrixXd> curves;     // per kept replicate: profiles x grid
  std::vector<Failure> failures;
  std::size_t B = 0;
  std::uint64_t seed = 0;

  std::size_t size() const { return curves.size(); }
};

// rpsm: one fit, B coefficient draws. snnets: B subject resamples, each
// retrained with seed + b on the interval scheme of the full data.
// Failed replicates are dropped; more than 10% failures throw NumericalError.
CateEnsemble bootstrap_ensemble(const SurvivalFrame& frame, const Engine& engine, const EffectSpec& effect,
                                const TimeGrid& grid, std::size_t B, std::uint64_t seed, std::size_t jobs = 1);

struct Summary {
  Eigen::MatrixXd median, lower, upper;  // profiles x grid
};

// Pointwise median and 2.5/97.5 percentiles (linear interpolation between
// order statistics). Needs at least 3 replicates.
Summary ensemble_summary(const CateEnsemble& ensemble);

// replicate_###.csv (profile_id,t,value) per kept replicate plus ensemble.json.
std::vector<std::filesystem::path> save_ensemble(const CateEnsemble& ensemble, const std::filesystem::path& dir);
CateEnsemble load_ensemble(const std::filesystem::path& dir);

}  // namespace phenocate::cate
