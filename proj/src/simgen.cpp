#include "phenocate/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "phenocate/error.hpp"

namespace phenocate::simgen {

namespace {

double logistic(double a) { return 1.0 / (1.0 + std::exp(-a)); }

// Treatment-related coefficients: beta[z], beta[z:*] and every time-varying block on a z term.
std::vector<std::size_t> treatment_coefficients(const rpsm::ModelSpec& model) {
  std::vector<std::size_t> idx;
  const std::size_t nb = model.basis.dimension();
  for (std::size_t r = 0; r < model.tv_terms.size(); ++r) {
    if (!model.terms[model.tv_terms[r]].treatment) continue;
    for (std::size_t j = 0; j + 1 < nb; ++j) idx.push_back(model.spline_offset(r) + j);
  }
  for (std::size_t t = 0; t < model.terms.size(); ++t) {
    if (model.terms[t].treatment) idx.push_back(model.beta_offset() + t);
  }
  return idx;
}

}  // namespace

void DgmSpec::validate() const {
  const std::size_t p1 = modifier_names.size();
  if (p1 == 0) throw ConfigError("DGM needs at least one effect modifier");
  if (prevalence.size() != p1) throw ConfigError("DGM needs one prevalence per modifier");
  for (double p : prevalence) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("DGM prevalences must lie in [0, 1]");
  }
  model.validate();
  if (static_cast<std::size_t>(theta.size()) != model.dimension()) {
    throw ConfigError("DGM coefficient vector has " + std::to_string(theta.size()) + " entries, model needs " +
                      std::to_string(model.dimension()));
  }
  if (!theta.allFinite()) throw ConfigError("DGM coefficients must be finite");
  if (!(horizon > 0.0)) throw ConfigError("DGM horizon must be positive");
  if (censor_upper < 0.0) throw ConfigError("DGM censoring bound must be nonnegative");
  if (n == 0) throw ConfigError("DGM sample size must be positive");
  if (confounding.enabled) {
    const auto c = confounding.names.size();
    if (c == 0 || confounding.treatment_coefficients.size() != c || confounding.outcome_coefficients.size() != c) {
      throw ConfigError("confounding needs one treatment and one outcome coefficient per confounder");
    }
  }
  // Dense log grid; below the first boundary knot the slope is constant.
  const double lo = std::log(horizon) - 12.0, hi = std::log(horizon);
  const auto profiles = cate::enumerate_profiles(p1);
  for (bool z : {false, true}) {
    for (const auto& p : profiles) {
      const auto d = model.term_values(z, p.x1);
      for (int g = 0; g <= 2000; ++g) {
        const double t = std::exp(lo + (hi - lo) * g / 2000.0);
        if (!(rpsm::log_eta_slope(t, d, theta, model) > 0.0)) {
          throw ConfigError("DGM hazard is not positive at t = " + std::to_string(t) + " for z = " +
                            std::to_string(z) + ", profile " + std::to_string(p.id));
        }
      }
    }
  }
}

nlohmann::json to_json(const DgmSpec& spec) {
  nlohmann::json coef = nlohmann::json::object();
  const auto names = spec.model.coefficient_names();
  for (std::size_t i = 0; i < names.size(); ++i) coef[names[i]] = spec.theta(static_cast<Eigen::Index>(i));
  nlohmann::json j{{"modifiers", spec.modifier_names},
                   {"prevalence", spec.prevalence},
                   {"model", rpsm::spec_to_json(spec.model)},
                   {"coefficients", coef},
                   {"horizon", spec.horizon},
                   {"censor_upper", spec.censor_upper},
                   {"n", spec.n},
                   {"seed", spec.seed}};
  const auto& c = spec.confounding;
  j["confounding"] = {{"enabled", c.enabled},
                      {"names", c.names},
                      {"binary_prevalence", c.binary_prevalence},
                      {"treatment_intercept", c.treatment_intercept},
                      {"treatment_coefficients", c.treatment_coefficients},
                      {"outcome_coefficients", c.outcome_coefficients}};
  return j;
}

namespace {

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> keys, const std::string& where) {
  for (const auto& [k, v] : j.items()) {
    if (std::find_if(keys.begin(), keys.end(), [&](const char* s) { return k == s; }) == keys.end()) {
      throw ConfigError(where + ": unknown key '" + k + "'");
    }
  }
}

}  // namespace

DgmSpec dgm_from_json(const nlohmann::json& j) {
  try {
    reject_unknown(j, {"modifiers", "prevalence", "model", "coefficients", "horizon", "censor_upper", "n", "seed", "confounding"},
                   "dgm");
    DgmSpec spec;
    spec.modifier_names = j.at("modifiers").get<std::vector<std::string>>();
    spec.prevalence = j.value("prevalence", std::vector<double>(spec.modifier_names.size(), 0.5));
    const auto& m = j.at("model");
    reject_unknown(m, {"boundary_knots", "interior_knots", "terms", "tv_terms"}, "dgm.model");
    if (m.contains("terms")) {
      spec.model = rpsm::spec_from_json(m, spec.modifier_names);
    } else {
      const auto bk = m.at("boundary_knots").get<std::vector<double>>();
      if (bk.size() != 2) throw ConfigError("dgm.model.boundary_knots must have two entries");
      spec.model = rpsm::ModelSpec::standard(SplineBasis(bk[0], bk[1], m.value("interior_knots", std::vector<double>{})),
                                             spec.modifier_names, m.value("tv_terms", std::vector<std::string>{}));
    }
    const auto names = spec.model.coefficient_names();
    const auto& coef = j.at("coefficients");
    for (const auto& [k, v] : coef.items()) {
      if (std::find(names.begin(), names.end(), k) == names.end()) {
        throw ConfigError("dgm.coefficients: unknown coefficient '" + k + "'");
      }
    }
    spec.theta.resize(static_cast<Eigen::Index>(names.size()));
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (!coef.contains(names[i])) throw ConfigError("dgm.coefficients: missing '" + names[i] + "'");
      spec.theta(static_cast<Eigen::Index>(i)) = coef.at(names[i]).get<double>();
    }
    spec.horizon = j.value("horizon", spec.horizon);
    spec.censor_upper = j.value("censor_upper", spec.censor_upper);
    spec.n = j.value("n", spec.n);
    spec.seed = j.value("seed", spec.seed);
    if (j.contains("confounding")) {
      const auto& c = j.at("confounding");
      reject_unknown(c, {"enabled", "names", "binary_prevalence", "treatment_intercept", "treatment_coefficients", "outcome_coefficients"},
                     "dgm.confounding");
      auto& out = spec.confounding;
      out.enabled = c.value("enabled", out.enabled);
      out.names = c.value("names", out.names);
      out.binary_prevalence = c.value("binary_prevalence", out.binary_prevalence);
      out.treatment_intercept = c.value("treatment_intercept", out.treatment_intercept);
      out.treatment_coefficients = c.value("treatment_coefficients", out.treatment_coefficients);
      out.outcome_coefficients = c.value("outcome_coefficients", out.outcome_coefficients);
    }
    spec.validate();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("dgm: ") + e.what());
  }
}

DgmSpec reference_dgm() {
  DgmSpec spec;
  spec.modifier_names = {"x1_1", "x1_2", "x1_3", "x1_4", "x1_5"};
  spec.prevalence.assign(5, 0.5);
  spec.model.basis = SplineBasis(std::log(0.5), std::log(30.0), {std::log(10.0)});
  for (const char* t : {"z", "x1_1", "x1_2", "x1_3", "x1_4", "x1_5", "z:x1_1", "z:x1_2", "z:x1_3"}) {
    spec.model.terms.push_back(rpsm::parse_term(t, spec.modifier_names));
  }
  spec.model.tv_terms = {6};
  // gamma0 gamma1 gamma2 | gamma1[z:x1_1] gamma2[z:x1_1] | z x1_1..x1_5 | z:x1_1 z:x1_2 z:x1_3
  spec.theta.resize(14);
  spec.theta << -2.305, 0.7, 0.02,  //
      0.15, 0.0,                    //
      -0.4, 0.2, -0.15, 0.1, 0.25, -0.2,  //
      0.4, 0.12, 0.06;
  spec.horizon = 30.0;
  spec.censor_upper = 60.0;
  spec.n = 10000;
  spec.seed = 1;
  spec.validate();
  return spec;
}

DgmSpec null_dgm() {
  DgmSpec spec = reference_dgm();
  for (auto i : treatment_coefficients(spec.model)) spec.theta(static_cast<Eigen::Index>(i)) = 0.0;
  spec.validate();
  return spec;
}

double sample_event_time(std::span<const double> d, const DgmSpec& spec, double u, double offset) {
  if (!(u > 0.0 && u < 1.0)) throw DataError("sample_event_time: u must lie in (0, 1)");
  const double target = std::log(-std::log(u));
  auto f = [&](double t) { return rpsm::log_eta(t, d, spec.theta, spec.model) + offset - target; };
  double lo = 1e-8;
  if (f(lo) >= 0.0) return lo;
  double hi = 1.0;
  int doublings = 0;
  while (f(hi) < 0.0) {
    if (++doublings > 60) return kNever;
    lo = hi;
    hi *= 2.0;
  }
  while (hi - lo > 1e-10 * hi) {
    const double mid = 0.5 * (lo + hi);
    (f(mid) < 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

SurvivalFrame generate(const DgmSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto& c = spec.confounding;
  std::vector<Subject> subjects;
  subjects.reserve(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) {
    Subject s;
    s.id = static_cast<std::int64_t>(i + 1);
    for (double p : spec.prevalence) s.modifiers.push_back(unif(rng) < p ? 1 : 0);
    double treat_logit = 0.0, offset = 0.0;
    if (c.enabled) {
      treat_logit = c.treatment_intercept;
      for (std::size_t k = 0; k < c.names.size(); ++k) {
        const double x = k + 1 == c.names.size() ? (unif(rng) < c.binary_prevalence ? 1.0 : 0.0) : normal(rng);
        s.confounders.push_back(x);
        treat_logit += c.treatment_coefficients[k] * x;
        offset += c.outcome_coefficients[k] * x;
      }
    }
    s.treatment = unif(rng) < logistic(treat_logit);
    double u = unif(rng);
    while (u <= 0.0) u = unif(rng);
    const double t = sample_event_time(spec.model.term_values(s.treatment, s.modifiers), spec, u, offset);
    const double censor = spec.censor_upper > 0.0 ? spec.censor_upper * (1.0 - unif(rng)) : kNever;
    const double stop = std::min(censor, spec.horizon);
    s.event = t <= stop;
    s.time = std::min(t, stop);
    subjects.push_back(std::move(s));
  }
  return SurvivalFrame(std::move(subjects), spec.modifier_names,
                       c.enabled ? c.names : std::vector<std::string>{}, spec.horizon);
}

cate::Predictor truth_predictor(const DgmSpec& spec) { return cate::rpsm_predictor(spec.theta, spec.model); }

GroundTruth ground_truth(const DgmSpec& spec, const TimeGrid& grid, const std::vector<std::size_t>& k_values,
                         const cate::EffectSpec& effect) {
  spec.validate();
  GroundTruth gt;
  gt.effect = effect;
  const auto profiles = cate::enumerate_profiles(spec.modifier_names.size());
  const auto predictor = truth_predictor(spec);
  gt.curves.grid = grid;
  gt.curves.curves.resize(static_cast<Eigen::Index>(profiles.size()), static_cast<Eigen::Index>(grid.size()));
  for (std::size_t p = 0; p < profiles.size(); ++p) {
    const auto c = cate::cate_curve(predictor, profiles[p], effect, grid);
    for (std::size_t g = 0; g < grid.size(); ++g) {
      gt.curves.curves(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(g)) = c.values[g];
    }
    gt.curves.ids.push_back(profiles[p].id);
  }
  fclust::KmeansOptions opt;
  opt.restarts = 50;
  for (auto k : k_values) gt.labels[k] = fclust::kmeans(gt.curves, k, 1, opt).labels;
  return gt;
}

}  // namespace phenocate::simgen
