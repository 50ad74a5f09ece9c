#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "phenocate/cate.hpp"
#include "phenocate/fclust.hpp"
#include "phenocate/rpsm.hpp"
#include "phenocate/survdata.hpp"

namespace phenocate::simgen {

// Observational variant: normal and binary confounders shift both the
// treatment log-odds and the log cumulative hazard.
struct Confounding {
  bool enabled = false;
  std::vector<std::string> names{"c1", "c2", "c3", "c4"};  // last one binary
  double binary_prevalence = 0.4;
  double treatment_intercept = -0.2;
  std::vector<double> treatment_coefficients{0.8, -0.6, 0.4, 0.7};
  std::vector<double> outcome_coefficients{0.3, -0.2, 0.25, 0.3};
};

struct DgmSpec {
  std::vector<std::string> modifier_names;
  std::vector<double> prevalence;
  rpsm::ModelSpec model;
  Eigen::VectorXd theta;
  double horizon = 30.0;       // administrative censoring
  double censor_upper = 60.0;  // uniform censoring on (0, censor_upper]; 0 disables
  std::size_t n = 1000;
  std::uint64_t seed = 1;
  Confounding confounding;

  // Shape checks plus positivity of d eta / d log t on a dense log grid over
  // (0, horizon] for every (z, x1); throws ConfigError.
  void validate() const;
};

nlohmann::json to_json(const DgmSpec& spec);
// Coefficients are keyed by name; missing or unknown names are errors.
DgmSpec dgm_from_json(const nlohmann::json& j);

// Shipped reference model: 5 modifiers, one interior knot at log 10, two
// treatment-effect blocks split by the first modifier.
DgmSpec reference_dgm();
// Same model with every treatment coefficient set to zero.
DgmSpec null_dgm();

inline constexpr double kNever = std::numeric_limits<double>::infinity();

// Solves exp(eta(t | d) + offset) = -log u by bisection; kNever when the
// cumulative hazard stays below -log u.
double sample_event_time(std::span<const double> d, const DgmSpec& spec, double u, double offset = 0.0);

SurvivalFrame generate(const DgmSpec& spec);

struct GroundTruth {
  cate::EffectSpec effect;
  fclust::CurveSet curves;                  // one per profile
  std::map<std::size_t, std::vector<int>> labels;  // k -> 0-based labels
};

GroundTruth ground_truth(const DgmSpec& spec, const TimeGrid& grid, const std::vector<std::size_t>& k_values,
                         const cate::EffectSpec& effect = {});

// True g(t | z, x1) with confounder effects at zero.
cate::Predictor truth_predictor(const DgmSpec& spec);

}  // namespace phenocate::simgen
