#include "phenocate/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <set>
#include <sstream>

#include "phenocate/error.hpp"
#include "phenocate/io.hpp"
#include "phenocate/parallel.hpp"
#include "phenocate/propensity.hpp"

namespace phenocate::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(Method m) {
  switch (m) {
    case Method::vote: return "vote";
    case Method::medoid_euclidean: return "medoid_euclidean";
    case Method::medoid_manhattan: return "medoid_manhattan";
    case Method::medoid_rand: return "medoid_rand";
    case Method::soft_euclidean: return "soft_euclidean";
    case Method::soft_manhattan: return "soft_manhattan";
  }
  return "vote";
}

std::vector<Method> all_methods() {
  return {Method::vote, Method::medoid_euclidean, Method::medoid_manhattan, Method::medoid_rand,
          Method::soft_euclidean, Method::soft_manhattan};
}

Method method_from_string(const std::string& s) {
  for (Method m : all_methods())
    if (s == to_string(m)) return m;
  throw ConfigError("unknown consensus method '" + s + "'");
}

namespace {

const char* to_string(RpsmModel m) {
  switch (m) {
    case RpsmModel::automatic: return "auto";
    case RpsmModel::dgm: return "dgm";
    case RpsmModel::standard: return "standard";
  }
  return "auto";
}

const char* to_string(CutStrategy c) { return c == CutStrategy::quantile ? "quantile" : "uniform"; }

// Object reader that remembers which keys were consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be an object");
  }

  template <class T>
  T get(const std::string& key, const T& fallback) {
    used_.insert(key);
    if (!j_.contains(key)) return fallback;
    const auto& v = j_.at(key);
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_integer() || v.get<long long>() < 0)
        throw ConfigError(where(key) + " must be a non-negative integer");
    } else if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw ConfigError(where(key) + " must be a number");
    }
    try {
      return v.get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + " has the wrong type");
    }
  }

  bool has(const std::string& key) const { return j_.contains(key); }
  const json& raw(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }
  Section child(const std::string& key) {
    used_.insert(key);
    static const json empty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, where(key));
  }
  std::string where(const std::string& key) const { return path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!used_.count(k)) throw ConfigError("unknown config key '" + where(k) + "'");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

fs::path resolve(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

simgen::DgmSpec dgm_from_value(const json& v, const fs::path& base) {
  if (v.is_object()) return simgen::dgm_from_json(v);
  if (!v.is_string()) throw ConfigError("config.data.dgm must be \"reference\", \"null\", a path or an object");
  const auto s = v.get<std::string>();
  if (s == "reference") return simgen::reference_dgm();
  if (s == "null") return simgen::null_dgm();
  json j;
  try {
    j = json::parse(io::read_text(resolve(s, base)));
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse DGM file " + s + ": " + e.what());
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return simgen::dgm_from_json(j);
}

double quantile7(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double median(std::vector<double> v) { return quantile7(std::move(v), 0.5); }

std::vector<std::size_t> profile_ids(const cate::CateEnsemble& e) {
  std::vector<std::size_t> ids;
  for (const auto& p : e.profiles) ids.push_back(p.id);
  return ids;
}

std::string pad3(std::size_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%03zu", v);
  return buf;
}

}  // namespace

void Config::validate() const {
  if (jobs == 0) throw ConfigError("config.jobs must be at least 1");
  if (input.empty() && !dgm) throw ConfigError("config.data needs an input file or a DGM");
  if (!(caliper_sd >= 0.0)) throw ConfigError("config.matching.caliper_sd must be non-negative");
  if (grid_points < 2) throw ConfigError("config.grid.points must be at least 2");
  if (!(grid_horizon >= 0.0)) throw ConfigError("config.grid.horizon must be non-negative");
  if (B == 0) throw ConfigError("config.bootstrap.B must be at least 1");
  if (k_values.empty()) throw ConfigError("config.clustering.k must list at least one k");
  for (auto k : k_values)
    if (k < 1) throw ConfigError("config.clustering.k entries must be positive");
  if (kmeans.restarts == 0) throw ConfigError("config.clustering.restarts must be at least 1");
  if (methods.empty()) throw ConfigError("config.consensus.methods must not be empty");
  if (intervals < 2) throw ConfigError("config.engine.snnets.intervals must be at least 2");
  if (rpsm_model == RpsmModel::dgm && !dgm) throw ConfigError("config.engine.rpsm.model is \"dgm\" but no DGM is set");
  if (simulate_sizes.empty() || study_sizes.empty()) throw ConfigError("scenario size lists must not be empty");
  if (simulate_replicates == 0 || study_replicates == 0 || compare_replicates == 0)
    throw ConfigError("replicate counts must be at least 1");
  if (compare_n == 0) throw ConfigError("config.compare_engines.n must be positive");
  nnsurv::NetConfig probe = net;
  probe.output_dim = intervals;
  probe.validate();
}

json default_config_json() {
  json j = to_json(Config{});
  j["data"]["dgm"] = "reference";
  j["data"]["n"] = 0;
  j["data"]["confounded"] = false;
  return j;
}

json to_json(const Config& c) {
  json methods = json::array();
  for (Method m : c.methods) methods.push_back(to_string(m));
  json data{{"input", c.input.generic_string()},
            {"id", c.schema.id},
            {"time", c.schema.time},
            {"event", c.schema.event},
            {"treatment", c.schema.treatment},
            {"modifiers", c.schema.modifiers},
            {"confounders", c.schema.confounders},
            {"horizon", c.schema.horizon}};
  data["dgm"] = c.dgm ? simgen::to_json(*c.dgm) : json(nullptr);
  const auto& t = c.net.training;
  return json{
      {"seed", c.seed},
      {"jobs", c.jobs},
      {"output_dir", c.output_dir.generic_string()},
      {"record_timings", c.record_timings},
      {"data", data},
      {"matching", {{"enabled", c.matching}, {"caliper_sd", c.caliper_sd}}},
      {"engine",
       {{"kind", cate::to_string(c.engine)},
        {"rpsm",
         {{"model", to_string(c.rpsm_model)},
          {"interior_knots", c.rpsm_interior_knots},
          {"tv_terms", c.rpsm_tv_terms},
          {"max_iterations", c.rpsm_fit.max_iterations},
          {"gradient_tolerance", c.rpsm_fit.gradient_tolerance},
          {"hessian_step", c.rpsm_fit.hessian_step}}},
        {"snnets",
         {{"hidden_layers", c.net.hidden_layers},
          {"hidden_units", c.net.hidden_units},
          {"learning_rate", t.learning_rate},
          {"batch_size", t.batch_size},
          {"epochs", t.epochs},
          {"patience", t.patience},
          {"validation_fraction", t.validation_fraction},
          {"intervals", c.intervals},
          {"cuts", to_string(c.cuts)}}}}},
      {"effect", {{"g", phenocate::to_string(c.effect.g)}, {"f", c.effect.f == cate::Contrast::ratio ? "ratio" : "difference"}}},
      {"grid", {{"points", c.grid_points}, {"horizon", c.grid_horizon}}},
      {"bootstrap", {{"B", c.B}}},
      {"clustering", {{"k", c.k_values}, {"restarts", c.kmeans.restarts}, {"max_iterations", c.kmeans.max_iterations}}},
      {"consensus", {{"methods", methods}, {"max_rounds", c.max_rounds}}},
      {"simulate", {{"sizes", c.simulate_sizes}, {"replicates", c.simulate_replicates}}},
      {"agreement_study", {{"sizes", c.study_sizes}, {"replicates", c.study_replicates}}},
      {"compare_engines", {{"n", c.compare_n}, {"replicates", c.compare_replicates}}}};
}

Config parse_config(const json& j, const fs::path& base_dir) {
  Config c;
  Section root(j, "config");
  c.seed = root.get<std::uint64_t>("seed", c.seed);
  c.jobs = root.get<std::size_t>("jobs", c.jobs);
  c.output_dir = resolve(root.get<std::string>("output_dir", ""), base_dir);
  c.record_timings = root.get<bool>("record_timings", c.record_timings);

  auto data = root.child("data");
  c.input = resolve(data.get<std::string>("input", ""), base_dir);
  c.schema.id = data.get<std::string>("id", c.schema.id);
  c.schema.time = data.get<std::string>("time", c.schema.time);
  c.schema.event = data.get<std::string>("event", c.schema.event);
  c.schema.treatment = data.get<std::string>("treatment", c.schema.treatment);
  c.schema.modifiers = data.get<std::vector<std::string>>("modifiers", {});
  c.schema.confounders = data.get<std::vector<std::string>>("confounders", {});
  c.schema.horizon = data.get<double>("horizon", 0.0);
  if (data.has("dgm") && !data.raw("dgm").is_null()) {  // raw() marks the key as seen
    c.dgm = dgm_from_value(data.raw("dgm"), base_dir);
  } else if (c.input.empty()) {
    c.dgm = simgen::reference_dgm();
  }
  const auto n = data.get<std::size_t>("n", 0);
  const bool confounded = data.get<bool>("confounded", false);
  if ((n > 0 || confounded) && !c.dgm) throw ConfigError("config.data.n and config.data.confounded need a DGM");
  if (n > 0) c.dgm->n = n;
  if (confounded) c.dgm->confounding.enabled = true;
  data.finish();

  auto matching = root.child("matching");
  c.matching = matching.get<bool>("enabled", c.matching);
  c.caliper_sd = matching.get<double>("caliper_sd", c.caliper_sd);
  matching.finish();

  auto engine = root.child("engine");
  try {
    c.engine = cate::engine_from_string(engine.get<std::string>("kind", cate::to_string(c.engine)));
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config.engine.kind: ") + e.what());
  }
  auto rp = engine.child("rpsm");
  const auto model = rp.get<std::string>("model", "auto");
  if (model == "auto") c.rpsm_model = RpsmModel::automatic;
  else if (model == "dgm") c.rpsm_model = RpsmModel::dgm;
  else if (model == "standard") c.rpsm_model = RpsmModel::standard;
  else throw ConfigError("config.engine.rpsm.model must be auto, dgm or standard");
  c.rpsm_interior_knots = rp.get<std::size_t>("interior_knots", c.rpsm_interior_knots);
  c.rpsm_tv_terms = rp.get<std::vector<std::string>>("tv_terms", c.rpsm_tv_terms);
  c.rpsm_fit.max_iterations = rp.get<int>("max_iterations", c.rpsm_fit.max_iterations);
  c.rpsm_fit.gradient_tolerance = rp.get<double>("gradient_tolerance", c.rpsm_fit.gradient_tolerance);
  c.rpsm_fit.hessian_step = rp.get<double>("hessian_step", c.rpsm_fit.hessian_step);
  rp.finish();
  auto nn = engine.child("snnets");
  c.net.hidden_layers = nn.get<std::size_t>("hidden_layers", c.net.hidden_layers);
  c.net.hidden_units = nn.get<std::size_t>("hidden_units", c.net.hidden_units);
  auto& t = c.net.training;
  t.learning_rate = nn.get<double>("learning_rate", t.learning_rate);
  t.batch_size = nn.get<std::size_t>("batch_size", t.batch_size);
  t.epochs = nn.get<std::size_t>("epochs", t.epochs);
  t.patience = nn.get<std::size_t>("patience", t.patience);
  t.validation_fraction = nn.get<double>("validation_fraction", t.validation_fraction);
  c.intervals = nn.get<std::size_t>("intervals", c.intervals);
  const auto cuts = nn.get<std::string>("cuts", "quantile");
  if (cuts == "quantile") c.cuts = CutStrategy::quantile;
  else if (cuts == "uniform") c.cuts = CutStrategy::uniform;
  else throw ConfigError("config.engine.snnets.cuts must be quantile or uniform");
  nn.finish();
  engine.finish();

  auto effect = root.child("effect");
  {
    const auto g = effect.get<std::string>("g", "cumhaz");
    const auto f = effect.get<std::string>("f", "ratio");
    try {
      c.effect = cate::effect_from_strings(g, f);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config.effect: ") + e.what());
    }
  }
  effect.finish();

  auto grid = root.child("grid");
  c.grid_points = grid.get<std::size_t>("points", c.grid_points);
  c.grid_horizon = grid.get<double>("horizon", c.grid_horizon);
  grid.finish();

  auto boot = root.child("bootstrap");
  c.B = boot.get<std::size_t>("B", c.B);
  boot.finish();

  auto cl = root.child("clustering");
  c.k_values = cl.get<std::vector<std::size_t>>("k", c.k_values);
  c.kmeans.restarts = cl.get<std::size_t>("restarts", c.kmeans.restarts);
  c.kmeans.max_iterations = cl.get<std::size_t>("max_iterations", c.kmeans.max_iterations);
  cl.finish();

  auto cons = root.child("consensus");
  if (cons.has("methods")) {
    c.methods.clear();
    for (const auto& m : cons.get<std::vector<std::string>>("methods", {})) c.methods.push_back(method_from_string(m));
  }
  c.max_rounds = cons.get<std::size_t>("max_rounds", c.max_rounds);
  cons.finish();

  auto sim = root.child("simulate");
  c.simulate_sizes = sim.get<std::vector<std::size_t>>("sizes", c.simulate_sizes);
  c.simulate_replicates = sim.get<std::size_t>("replicates", c.simulate_replicates);
  sim.finish();

  auto study = root.child("agreement_study");
  c.study_sizes = study.get<std::vector<std::size_t>>("sizes", c.study_sizes);
  c.study_replicates = study.get<std::size_t>("replicates", c.study_replicates);
  study.finish();

  auto cmp = root.child("compare_engines");
  c.compare_n = cmp.get<std::size_t>("n", c.compare_n);
  c.compare_replicates = cmp.get<std::size_t>("replicates", c.compare_replicates);
  cmp.finish();

  root.finish();
  c.validate();
  return c;
}

Config load_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(io::read_text(path));
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return parse_config(j, path.parent_path());
}

fs::path resolve_output_dir(const Config& config) {
  if (!config.output_dir.empty()) return config.output_dir;
  if (const char* env = std::getenv("PHENOCATE_OUT"); env && *env) return env;
  return "phenocate_out";
}

SurvivalFrame load_frame(const Config& config) {
  if (!config.input.empty()) return load_csv(config.input, config.schema);
  return simgen::generate(*config.dgm);
}

TimeGrid make_grid(const Config& config, const SurvivalFrame& frame) {
  const double h = config.grid_horizon > 0.0 ? config.grid_horizon : frame.horizon();
  return TimeGrid::uniform(h, config.grid_points);
}

cate::Engine make_engine(const Config& config, const SurvivalFrame& frame) {
  cate::Engine e;
  e.kind = config.engine;
  e.fit_options = config.rpsm_fit;
  e.net = config.net;
  e.intervals = config.intervals;
  e.cuts = config.cuts;
  const bool use_dgm = config.rpsm_model == RpsmModel::dgm ||
                       (config.rpsm_model == RpsmModel::automatic && config.dgm.has_value());
  if (use_dgm) {
    if (config.dgm->modifier_names != frame.modifier_names())
      throw ConfigError("DGM modifiers do not match the data columns");
    e.model = config.dgm->model;
  } else if (e.kind == cate::EngineKind::rpsm) {
    std::vector<double> log_times;
    for (const auto& s : frame.subjects())
      if (s.event) log_times.push_back(std::log(s.time));
    if (log_times.size() < 2) throw DataError("too few events to place spline knots");
    e.model = rpsm::ModelSpec::standard(SplineBasis::from_log_times(log_times, config.rpsm_interior_knots),
                                        frame.modifier_names(), config.rpsm_tv_terms);
  }
  return e;
}

ConsensusOutcome run_consensus(const std::vector<ensemble::Labels>& partitions, std::size_t k, Method method,
                               std::size_t max_rounds) {
  if (partitions.empty()) throw DataError("consensus needs at least one partition");
  ConsensusOutcome out;
  out.method = method;
  const auto n = partitions.front().size();
  switch (method) {
    case Method::vote: {
      out.labels = ensemble::majority_vote(partitions);
      out.membership = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
      for (const auto& p : partitions) out.membership += ensemble::membership(ensemble::align(partitions.front(), p), k);
      out.membership /= static_cast<double>(partitions.size());
      out.diagnostics = {{"partitions", partitions.size()}};
      break;
    }
    case Method::medoid_euclidean:
    case Method::medoid_manhattan:
    case Method::medoid_rand: {
      const auto d = method == Method::medoid_euclidean   ? ensemble::Dissimilarity::euclidean
                     : method == Method::medoid_manhattan ? ensemble::Dissimilarity::manhattan
                                                          : ensemble::Dissimilarity::rand;
      const auto r = ensemble::medoid_consensus(partitions, d);
      out.labels = r.labels;
      out.membership = ensemble::membership(r.labels, k);
      out.diagnostics = {{"medoid_partition", r.index + 1}, {"objective", r.objective}};
      break;
    }
    case Method::soft_euclidean:
    case Method::soft_manhattan: {
      const auto d = method == Method::soft_euclidean ? ensemble::Dissimilarity::euclidean
                                                      : ensemble::Dissimilarity::manhattan;
      const auto r = ensemble::soft_consensus(partitions, d, max_rounds);
      out.labels = r.labels;
      out.membership = r.membership;
      out.diagnostics = {{"objective", r.objective}, {"rounds", r.rounds}, {"converged", r.converged}};
      break;
    }
  }
  return out;
}

Centroids consensus_centroids(const cate::CateEnsemble& ens, const ensemble::Labels& labels) {
  if (labels.size() != ens.profiles.size()) throw DataError("centroids: label count differs from profile count");
  Centroids c;
  std::set<int> present(labels.begin(), labels.end());
  c.curves.resize(static_cast<Eigen::Index>(present.size()), static_cast<Eigen::Index>(ens.grid.size()));
  Eigen::Index row = 0;
  for (int label : present) {
    fclust::CurveSet set;
    set.grid = ens.grid;
    std::vector<std::size_t> members;
    for (std::size_t p = 0; p < labels.size(); ++p)
      if (labels[p] == label) members.push_back(p);
    set.curves.resize(static_cast<Eigen::Index>(members.size() * ens.size()), static_cast<Eigen::Index>(ens.grid.size()));
    Eigen::Index r = 0;
    for (const auto& m : ens.curves) {
      for (auto p : members) {
        set.curves.row(r) = m.row(static_cast<Eigen::Index>(p));
        set.ids.push_back(static_cast<std::size_t>(r));
        ++r;
      }
    }
    c.labels.push_back(label);
    c.sizes.push_back(static_cast<std::size_t>(r));
    c.curves.row(row++) = set.curves.row(static_cast<Eigen::Index>(fclust::functional_median(set)));
  }
  return c;
}

std::vector<KResult> cluster_ensemble(const cate::CateEnsemble& ens, const Config& config) {
  if (ens.size() == 0) throw DataError("clustering: ensemble has no replicates");
  const auto ids = profile_ids(ens);
  std::vector<KResult> out;
  for (std::size_t k : config.k_values) {
    KResult kr;
    kr.k = k;
    kr.partitions.resize(ens.size());
    kr.silhouettes.resize(ens.size());
    parallel_for(ens.size(), config.jobs, [&](std::size_t r) {
      const fclust::CurveSet set{ens.curves[r], ens.grid, ids};
      const auto res = fclust::kmeans(set, k, config.seed + ens.replicate_ids[r], config.kmeans);
      kr.silhouettes[r] = k > 1 ? fclust::silhouette(set, res.labels).mean : 0.0;
      kr.partitions[r] = res.labels;
    });
    if (kr.partitions.size() >= 2) {
      kr.internal_crand = ensemble::mean_pairwise_agreement(kr.partitions, ensemble::Index::crand);
      kr.internal_jaccard = ensemble::mean_pairwise_agreement(kr.partitions, ensemble::Index::jaccard);
    } else {
      kr.internal_crand = kr.internal_jaccard = std::numeric_limits<double>::quiet_NaN();
    }
    for (Method m : config.methods) kr.consensus.push_back(run_consensus(kr.partitions, k, m, config.max_rounds));
    out.push_back(std::move(kr));
  }
  return out;
}

PhenotypeResult phenotype(const SurvivalFrame& frame, const Config& config) {
  PhenotypeResult res;
  const auto grid = make_grid(config, frame);
  const auto engine = staged("engine", [&] { return make_engine(config, frame); });
  res.ensemble = staged("cate", [&] {
    return cate::bootstrap_ensemble(frame, engine, config.effect, grid, config.B, config.seed, config.jobs);
  });
  res.per_k = staged("clustering", [&] { return cluster_ensemble(res.ensemble, config); });
  staged("centroids", [&] {
    for (const auto& kr : res.per_k) {
      std::vector<Centroids> row;
      for (const auto& c : kr.consensus) row.push_back(consensus_centroids(res.ensemble, c.labels));
      res.centroids.push_back(std::move(row));
    }
  });
  return res;
}

StudyResult agreement_study(const Config& config) {
  if (!config.dgm) throw ConfigError("agreement study needs a DGM for ground truth");
  StudyResult out;
  const auto& dgm = *config.dgm;
  const double h = config.grid_horizon > 0.0 ? config.grid_horizon : dgm.horizon;
  const auto grid = TimeGrid::uniform(h, config.grid_points);
  out.gold = staged("ground truth", [&] { return simgen::ground_truth(dgm, grid, config.k_values, config.effect).labels; });
  for (std::size_t n : config.study_sizes) {
    for (std::size_t r = 0; r < config.study_replicates; ++r) {
      auto spec = dgm;
      spec.n = n;
      spec.seed = dgm.seed + r;
      const auto frame = simgen::generate(spec);
      const auto engine = make_engine(config, frame);
      const auto ens = staged("cate", [&] {
        return cate::bootstrap_ensemble(frame, engine, config.effect, grid, config.B, config.seed + r, config.jobs);
      });
      StudyScenario sc;
      sc.n = n;
      sc.replicate = r;
      sc.per_k = staged("clustering", [&] { return cluster_ensemble(ens, config); });
      for (const auto& kr : sc.per_k) {
        const auto& gold = out.gold.at(kr.k);
        for (const auto& c : kr.consensus) {
          out.rows.push_back({n, r, kr.k, c.method, ensemble::crand(c.labels, gold), ensemble::jaccard(c.labels, gold),
                              kr.internal_crand, kr.internal_jaccard});
        }
      }
      out.scenarios.push_back(std::move(sc));
    }
  }
  return out;
}

CompareResult compare_engines(const Config& config) {
  if (!config.dgm) throw ConfigError("engine comparison needs a DGM for ground truth");
  const auto& dgm = *config.dgm;
  const std::size_t R = config.compare_replicates;
  const auto profiles = cate::enumerate_profiles(dgm.modifier_names.size());
  const std::size_t P = profiles.size();
  const auto truth = simgen::truth_predictor(dgm);
  const double h = config.grid_horizon > 0.0 ? config.grid_horizon : dgm.horizon;
  const auto grid = TimeGrid::uniform(h, config.grid_points);

  CompareResult out;
  out.distances.assign(2, std::vector<std::vector<double>>(R, std::vector<double>(2 * P)));
  parallel_for(R, config.jobs, [&](std::size_t r) {
    auto spec = dgm;
    spec.n = config.compare_n;
    spec.seed = dgm.seed + r;
    const auto frame = simgen::generate(spec);
    const auto fit = staged("fit-rpsm", [&] { return rpsm::fit(frame, dgm.model, config.rpsm_fit); });
    const auto scheme = make_intervals(frame, config.intervals, config.cuts);
    nnsurv::NetConfig net = config.net;
    net.input_dim = frame.modifier_count() + 1;
    net.output_dim = scheme.count();
    net.training.seed = config.seed + r;
    const auto trained = staged("fit-nnet", [&] { return nnsurv::train(frame, scheme, net); });
    const cate::Predictor predictors[2] = {cate::rpsm_predictor(fit.theta, dgm.model),
                                           cate::snnets_predictor(trained.params, scheme)};
    for (int z = 0; z < 2; ++z) {
      for (std::size_t p = 0; p < P; ++p) {
        const auto H = truth(z == 1, profiles[p].x1, grid, Quantity::cumhaz);
        for (int e = 0; e < 2; ++e) {
          const auto est = predictors[e](z == 1, profiles[p].x1, grid, Quantity::cumhaz);
          out.distances[e][r][z * P + p] = fclust::l2_distance(est, H, grid);
        }
      }
    }
  });

  std::vector<double> medians[2];
  for (int e = 0; e < 2; ++e) {
    for (int z = 0; z < 2; ++z) {
      for (std::size_t p = 0; p < P; ++p) {
        std::vector<double> d;
        for (std::size_t r = 0; r < R; ++r) d.push_back(out.distances[e][r][z * P + p]);
        CompareRow row;
        row.engine = e == 0 ? cate::EngineKind::rpsm : cate::EngineKind::snnets;
        row.z = z == 1;
        row.profile = profiles[p].id;
        row.median = median(d);
        row.lower = quantile7(d, 0.025);
        row.upper = quantile7(d, 0.975);
        medians[e].push_back(row.median);
        out.rows.push_back(row);
      }
    }
  }
  out.rpsm_median = median(medians[0]);
  out.snnets_median = median(medians[1]);
  return out;
}

// ---------------------------------------------------------------------------

Run::Run(const Config& config, std::string command)
    : config_(config), command_(std::move(command)), dir_(resolve_output_dir(config)) {
  config_.validate();
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) throw DataError("cannot create output directory " + dir_.string() + ": " + ec.message());
  json echo = to_json(config_);
  echo.erase("output_dir");
  echo.erase("jobs");
  write("config.json", echo.dump(2) + "\n");
  write_manifest("running");
}

void Run::write(const std::string& relative, const std::string& text) {
  io::write_text(dir_ / relative, text);
  if (std::find(outputs_.begin(), outputs_.end(), relative) == outputs_.end()) outputs_.push_back(relative);
}

void Run::adopt(const fs::path& absolute) {
  const auto rel = absolute.lexically_relative(dir_).generic_string();
  if (std::find(outputs_.begin(), outputs_.end(), rel) == outputs_.end()) outputs_.push_back(rel);
}

void Run::finish() { write_manifest("complete"); }

void Run::write_manifest(const std::string& status) {
  json echo = to_json(config_);
  echo.erase("output_dir");
  echo.erase("jobs");
  auto outputs = outputs_;
  std::sort(outputs.begin(), outputs.end());
  json m{{"command", command_},
         {"status", status},
         {"version", kVersion},
         {"config_hash", io::fnv1a_hex(echo.dump())},
         {"seed", config_.seed},
         {"outputs", outputs},
         {"warnings", warnings_}};
  if (config_.dgm) m["dgm_seed"] = config_.dgm->seed;
  if (config_.record_timings) {
    json t = json::object();
    for (const auto& [name, seconds] : timings_) t[name] = seconds;
    m["timings"] = t;
  }
  io::write_text(dir_ / "manifest.json", m.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

namespace {

std::string curves_long(const std::vector<std::string>& series, const Eigen::MatrixXd& values, const TimeGrid& grid) {
  std::ostringstream out;
  out << "series,t,value\n";
  for (Eigen::Index r = 0; r < values.rows(); ++r)
    for (std::size_t g = 0; g < grid.size(); ++g)
      out << series[static_cast<std::size_t>(r)] << ',' << io::fmt(grid[g]) << ','
          << io::fmt(values(r, static_cast<Eigen::Index>(g))) << '\n';
  return out.str();
}

// Curves of a fitted model for every (z, profile) and quantity.
std::string model_curves(const cate::Predictor& predictor, std::size_t p1, const TimeGrid& grid) {
  std::vector<std::string> series;
  std::vector<std::vector<double>> rows;
  for (const auto& p : cate::enumerate_profiles(p1)) {
    for (int z = 0; z < 2; ++z) {
      for (Quantity q : {Quantity::survival, Quantity::hazard, Quantity::cumhaz}) {
        series.push_back("z" + std::to_string(z) + "_profile" + std::to_string(p.id) + "_" + to_string(q));
        rows.push_back(predictor(z == 1, p.x1, grid, q));
      }
    }
  }
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(grid.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t g = 0; g < grid.size(); ++g) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(g)) = rows[r][g];
  return curves_long(series, m, grid);
}

std::string partitions_csv(const KResult& kr, const cate::CateEnsemble& ens) {
  std::ostringstream out;
  out << "replicate,profile_id,label\n";
  for (std::size_t r = 0; r < kr.partitions.size(); ++r)
    for (std::size_t p = 0; p < ens.profiles.size(); ++p)
      out << ens.replicate_ids[r] + 1 << ',' << ens.profiles[p].id << ',' << kr.partitions[r][p] + 1 << '\n';
  return out.str();
}

void write_matching(Run& run, const SurvivalFrame& frame, const propensity::PsModel& ps,
                    const propensity::MatchResult& m, const std::string& prefix) {
  const auto report = propensity::balance(frame, m.frame);
  run.write(prefix + "matched.csv", to_csv(m.frame));
  run.write(prefix + "pairs.csv", propensity::pairs_csv(m.pairs));
  run.write(prefix + "balance.csv", propensity::balance_csv(report));
  std::ostringstream w;
  w << "id,weight\n";
  const auto weights = propensity::iptw_weights(frame, ps);
  for (std::size_t i = 0; i < frame.size(); ++i) w << frame.subjects()[i].id << ',' << io::fmt(weights[i]) << '\n';
  run.write(prefix + "iptw.csv", w.str());
  json j{{"names", ps.names},
         {"coefficients", std::vector<double>(ps.coefficients.data(), ps.coefficients.data() + ps.coefficients.size())},
         {"std_errors", std::vector<double>(ps.std_errors.data(), ps.std_errors.data() + ps.std_errors.size())},
         {"converged", ps.converged},
         {"iterations", ps.iterations},
         {"loglik_trace", ps.loglik_trace},
         {"caliper", m.caliper},
         {"pairs", m.pairs.size()},
         {"unmatched_treated", m.unmatched_treated},
         {"mean_abs_effect_before", report.mean_abs_effect_before()},
         {"mean_abs_effect_after", report.mean_abs_effect_after()}};
  run.write(prefix + "propensity.json", j.dump(2) + "\n");
}

SurvivalFrame maybe_match(Run& run, const Config& config, SurvivalFrame frame) {
  if (!config.matching) return frame;
  return run.stage("matching", [&] {
    if (frame.confounder_count() == 0) throw ConfigError("matching is enabled but the data has no confounders");
    const auto ps = propensity::fit_ps(frame);
    auto m = propensity::match(frame, ps, config.caliper_sd);
    write_matching(run, frame, ps, m, "matching/");
    return m.frame;
  });
}

void write_clustering(Run& run, const cate::CateEnsemble& ens, const std::vector<KResult>& per_k) {
  std::ostringstream sil, table;
  sil << "k,replicate,mean_silhouette\n";
  table << "k,internal_crand,internal_jaccard,mean_silhouette\n";
  for (const auto& kr : per_k) {
    run.write("clustering/partitions_k" + std::to_string(kr.k) + ".csv", partitions_csv(kr, ens));
    double s = 0.0;
    for (std::size_t r = 0; r < kr.silhouettes.size(); ++r) {
      sil << kr.k << ',' << ens.replicate_ids[r] + 1 << ',' << io::fmt(kr.silhouettes[r]) << '\n';
      s += kr.silhouettes[r];
    }
    s /= static_cast<double>(kr.silhouettes.size());
    table << kr.k << ',' << io::fmt(kr.internal_crand) << ',' << io::fmt(kr.internal_jaccard) << ',' << io::fmt(s) << '\n';
  }
  run.write("clustering/silhouette.csv", sil.str());
  run.write("clustering/agreement.csv", table.str());
}

void write_consensus(Run& run, const cate::CateEnsemble& ens, const std::vector<KResult>& per_k,
                     const std::vector<std::vector<Centroids>>& centroids) {
  json table = json::array();
  for (const auto& kr : per_k)
    table.push_back({{"k", kr.k}, {"internal_crand", kr.internal_crand}, {"internal_jaccard", kr.internal_jaccard}});
  for (std::size_t i = 0; i < per_k.size(); ++i) {
    const auto& kr = per_k[i];
    for (std::size_t m = 0; m < kr.consensus.size(); ++m) {
      const auto& c = kr.consensus[m];
      const std::string stem = "k" + std::to_string(kr.k) + "_" + to_string(c.method);
      std::ostringstream out;
      out << "profile_id,final_label";
      for (std::size_t j = 0; j < kr.k; ++j) out << ",membership_" << j + 1;
      out << '\n';
      for (std::size_t p = 0; p < ens.profiles.size(); ++p) {
        out << ens.profiles[p].id << ',' << c.labels[p] + 1;
        for (Eigen::Index j = 0; j < c.membership.cols(); ++j)
          out << ',' << io::fmt(c.membership(static_cast<Eigen::Index>(p), j));
        out << '\n';
      }
      run.write("consensus/" + stem + ".csv", out.str());
      json diag = c.diagnostics;
      diag["method"] = to_string(c.method);
      diag["k"] = kr.k;
      diag["internal_agreement"] = table;
      run.write("consensus/" + stem + ".json", diag.dump(2) + "\n");

      const auto& cen = centroids[i][m];
      std::vector<std::string> series;
      for (int l : cen.labels) series.push_back("cluster" + std::to_string(l + 1));
      run.write("centroids/" + stem + ".csv", curves_long(series, cen.curves, ens.grid));
    }
  }
}

std::vector<ensemble::Labels> read_partitions(const fs::path& file, std::size_t profiles) {
  std::istringstream in(io::read_text(file));
  std::string line;
  std::getline(in, line);
  if (line != "replicate,profile_id,label") throw DataError(file.string() + ": unexpected header");
  std::map<std::size_t, ensemble::Labels> by_rep;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto cells = io::split_csv_line(line);
    if (cells.size() != 3) throw DataError(file.string() + ": row " + std::to_string(row) + " needs 3 fields");
    const auto rep = static_cast<std::size_t>(io::parse_double(cells[0], "replicate"));
    const auto pid = static_cast<std::size_t>(io::parse_double(cells[1], "profile_id"));
    const auto label = static_cast<int>(io::parse_double(cells[2], "label"));
    auto& l = by_rep[rep];
    if (l.empty()) l.assign(profiles, -1);
    if (pid >= profiles || label < 1) throw DataError(file.string() + ": row " + std::to_string(row) + " out of range");
    l[pid] = label - 1;
  }
  std::vector<ensemble::Labels> out;
  for (auto& [rep, l] : by_rep) {
    if (std::find(l.begin(), l.end(), -1) != l.end())
      throw DataError(file.string() + ": replicate " + std::to_string(rep) + " misses profiles");
    out.push_back(std::move(l));
  }
  return out;
}

}  // namespace

void cmd_simulate(const Config& config) {
  if (!config.dgm) throw ConfigError("simulate needs a DGM");
  Run run(config, "simulate");
  const auto& dgm = *config.dgm;
  run.write("dgm.json", simgen::to_json(dgm).dump(2) + "\n");
  run.stage("simulate", [&] {
    for (std::size_t n : config.simulate_sizes) {
      for (std::size_t r = 0; r < config.simulate_replicates; ++r) {
        auto spec = dgm;
        spec.n = n;
        spec.seed = dgm.seed + r;
        run.write("n" + std::to_string(n) + "/replicate_" + pad3(r + 1) + ".csv", to_csv(simgen::generate(spec)));
      }
    }
  });
  run.stage("ground truth", [&] {
    const double h = config.grid_horizon > 0.0 ? config.grid_horizon : dgm.horizon;
    const auto grid = TimeGrid::uniform(h, config.grid_points);
    const auto gt = simgen::ground_truth(dgm, grid, config.k_values, config.effect);
    std::vector<std::string> series;
    for (auto id : gt.curves.ids) series.push_back("profile" + std::to_string(id));
    run.write("ground_truth/curves.csv", curves_long(series, gt.curves.curves, grid));
    std::ostringstream labels;
    labels << "profile_id";
    for (const auto& [k, l] : gt.labels) labels << ",k" << k;
    labels << '\n';
    for (std::size_t p = 0; p < gt.curves.ids.size(); ++p) {
      labels << gt.curves.ids[p];
      for (const auto& [k, l] : gt.labels) labels << ',' << l[p] + 1;
      labels << '\n';
    }
    run.write("ground_truth/labels.csv", labels.str());
  });
  run.finish();
}

void cmd_match(const Config& config) {
  Run run(config, "match");
  const auto frame = run.stage("data", [&] { return load_frame(config); });
  run.stage("matching", [&] {
    if (frame.confounder_count() == 0) throw DataError("the data has no confounder columns");
    const auto ps = propensity::fit_ps(frame);
    const auto m = propensity::match(frame, ps, config.caliper_sd);
    write_matching(run, frame, ps, m, "");
  });
  run.finish();
}

void cmd_fit_rpsm(const Config& config) {
  Run run(config, "fit-rpsm");
  auto frame = run.stage("data", [&] { return load_frame(config); });
  frame = maybe_match(run, config, std::move(frame));
  Config c = config;
  c.engine = cate::EngineKind::rpsm;
  const auto engine = run.stage("engine", [&] { return make_engine(c, frame); });
  const auto fit = run.stage("fit-rpsm", [&] { return rpsm::fit(frame, engine.model, engine.fit_options); });
  run.write("fit.json", rpsm::to_json(fit, engine.model).dump(2) + "\n");
  run.write("curves.csv", model_curves(cate::rpsm_predictor(fit.theta, engine.model), frame.modifier_count(),
                                       make_grid(config, frame)));
  run.finish();
}

void cmd_fit_nnet(const Config& config) {
  Run run(config, "fit-nnet");
  auto frame = run.stage("data", [&] { return load_frame(config); });
  frame = maybe_match(run, config, std::move(frame));
  const auto scheme = run.stage("intervals", [&] { return make_intervals(frame, config.intervals, config.cuts); });
  nnsurv::NetConfig net = config.net;
  net.input_dim = frame.modifier_count() + 1;
  net.output_dim = scheme.count();
  net.training.seed = config.seed;
  const auto trained = run.stage("fit-nnet", [&] { return nnsurv::train(frame, scheme, net); });
  json j{{"params", nnsurv::to_json(trained.params)},
         {"cuts", scheme.cuts},
         {"train_loss", trained.train_loss},
         {"validation_loss", trained.validation_loss},
         {"best_epoch", trained.best_epoch}};
  run.write("net.json", j.dump(2) + "\n");
  run.write("curves.csv", model_curves(cate::snnets_predictor(trained.params, scheme), frame.modifier_count(),
                                       make_grid(config, frame)));
  run.finish();
}

void cmd_cate(const Config& config) {
  Run run(config, "cate");
  auto frame = run.stage("data", [&] { return load_frame(config); });
  frame = maybe_match(run, config, std::move(frame));
  const auto engine = run.stage("engine", [&] { return make_engine(config, frame); });
  const auto ens = run.stage("cate", [&] {
    return cate::bootstrap_ensemble(frame, engine, config.effect, make_grid(config, frame), config.B, config.seed,
                                    config.jobs);
  });
  for (const auto& f : ens.failures) run.warn("replicate " + std::to_string(f.replicate + 1) + " failed: " + f.cause);
  for (const auto& p : cate::save_ensemble(ens, run.dir() / "ensemble")) run.adopt(p);
  if (ens.size() >= 3) {
    const auto s = cate::ensemble_summary(ens);
    std::ostringstream out;
    out << "profile_id,t,median,lower,upper\n";
    for (std::size_t p = 0; p < ens.profiles.size(); ++p)
      for (std::size_t g = 0; g < ens.grid.size(); ++g) {
        const auto r = static_cast<Eigen::Index>(p), c = static_cast<Eigen::Index>(g);
        out << ens.profiles[p].id << ',' << io::fmt(ens.grid[g]) << ',' << io::fmt(s.median(r, c)) << ','
            << io::fmt(s.lower(r, c)) << ',' << io::fmt(s.upper(r, c)) << '\n';
      }
    run.write("summary.csv", out.str());
  } else {
    run.warn("fewer than 3 replicates; no summary bands written");
  }
  run.finish();
}

void cmd_cluster(const Config& config, const fs::path& ensemble_dir) {
  Run run(config, "cluster");
  const auto ens = run.stage("data", [&] { return cate::load_ensemble(ensemble_dir); });
  Config c = config;
  c.methods.clear();
  std::vector<KResult> per_k;
  run.stage("clustering", [&] {
    const auto ids = profile_ids(ens);
    for (std::size_t k : c.k_values) {
      KResult kr;
      kr.k = k;
      kr.partitions.resize(ens.size());
      kr.silhouettes.resize(ens.size());
      parallel_for(ens.size(), c.jobs, [&](std::size_t r) {
        const fclust::CurveSet set{ens.curves[r], ens.grid, ids};
        const auto res = fclust::kmeans(set, k, c.seed + ens.replicate_ids[r], c.kmeans);
        kr.silhouettes[r] = k > 1 ? fclust::silhouette(set, res.labels).mean : 0.0;
        kr.partitions[r] = res.labels;
      });
      if (kr.partitions.size() >= 2) {
        kr.internal_crand = ensemble::mean_pairwise_agreement(kr.partitions, ensemble::Index::crand);
        kr.internal_jaccard = ensemble::mean_pairwise_agreement(kr.partitions, ensemble::Index::jaccard);
      } else {
        kr.internal_crand = kr.internal_jaccard = std::numeric_limits<double>::quiet_NaN();
        run.warn("k=" + std::to_string(k) + ": internal agreement needs at least 2 replicates");
      }
      per_k.push_back(std::move(kr));
    }
  });
  write_clustering(run, ens, per_k);
  run.finish();
}

void cmd_consensus(const Config& config, const fs::path& partitions_dir, const fs::path& ensemble_dir) {
  Run run(config, "consensus");
  const auto ens = run.stage("data", [&] { return cate::load_ensemble(ensemble_dir); });
  std::vector<KResult> per_k;
  std::vector<std::vector<Centroids>> centroids;
  run.stage("consensus", [&] {
    for (std::size_t k : config.k_values) {
      KResult kr;
      kr.k = k;
      kr.partitions = read_partitions(partitions_dir / ("partitions_k" + std::to_string(k) + ".csv"), ens.profiles.size());
      if (kr.partitions.size() != ens.size())
        throw DataError("partition count " + std::to_string(kr.partitions.size()) + " differs from ensemble size " +
                        std::to_string(ens.size()));
      if (kr.partitions.size() >= 2) {
        kr.internal_crand = ensemble::mean_pairwise_agreement(kr.partitions, ensemble::Index::crand);
        kr.internal_jaccard = ensemble::mean_pairwise_agreement(kr.partitions, ensemble::Index::jaccard);
      } else {
        kr.internal_crand = kr.internal_jaccard = std::numeric_limits<double>::quiet_NaN();
      }
      std::vector<Centroids> row;
      for (Method m : config.methods) {
        kr.consensus.push_back(run_consensus(kr.partitions, k, m, config.max_rounds));
        row.push_back(consensus_centroids(ens, kr.consensus.back().labels));
      }
      centroids.push_back(std::move(row));
      per_k.push_back(std::move(kr));
    }
  });
  write_consensus(run, ens, per_k, centroids);
  run.finish();
}

void cmd_phenotype(const Config& config) {
  Run run(config, "phenotype");
  auto frame = run.stage("data", [&] { return load_frame(config); });
  frame = maybe_match(run, config, std::move(frame));
  const auto res = run.stage("phenotype", [&] { return phenotype(frame, config); });
  for (const auto& f : res.ensemble.failures)
    run.warn("replicate " + std::to_string(f.replicate + 1) + " failed: " + f.cause);
  for (const auto& p : cate::save_ensemble(res.ensemble, run.dir() / "ensemble")) run.adopt(p);
  write_clustering(run, res.ensemble, res.per_k);
  write_consensus(run, res.ensemble, res.per_k, res.centroids);
  if (config.dgm && config.input.empty()) {
    run.stage("gold standard", [&] {
      const auto gold = simgen::ground_truth(*config.dgm, res.ensemble.grid, config.k_values, config.effect);
      std::ostringstream out;
      out << "k,method,crand,jaccard\n";
      for (const auto& kr : res.per_k)
        for (const auto& c : kr.consensus)
          out << kr.k << ',' << to_string(c.method) << ',' << io::fmt(ensemble::crand(c.labels, gold.labels.at(kr.k)))
              << ',' << io::fmt(ensemble::jaccard(c.labels, gold.labels.at(kr.k))) << '\n';
      run.write("gold_agreement.csv", out.str());
    });
  }
  run.finish();
}

void cmd_agreement_study(const Config& config) {
  if (!config.dgm) throw ConfigError("agreement-study needs a DGM for ground truth");
  Run run(config, "agreement-study");
  const auto res = run.stage("study", [&] { return agreement_study(config); });
  std::ostringstream rows;
  rows << "n,replicate,k,method,crand,jaccard,internal_crand,internal_jaccard\n";
  for (const auto& r : res.rows)
    rows << r.n << ',' << r.replicate + 1 << ',' << r.k << ',' << to_string(r.method) << ',' << io::fmt(r.crand) << ','
         << io::fmt(r.jaccard) << ',' << io::fmt(r.internal_crand) << ',' << io::fmt(r.internal_jaccard) << '\n';
  run.write("results.csv", rows.str());

  std::map<std::pair<std::size_t, std::size_t>, std::pair<double, double>> sums;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> counts;
  for (const auto& sc : res.scenarios) {
    for (const auto& kr : sc.per_k) {
      std::ostringstream p;
      p << "replicate,profile_id,label\n";
      for (std::size_t b = 0; b < kr.partitions.size(); ++b)
        for (std::size_t i = 0; i < kr.partitions[b].size(); ++i) p << b + 1 << ',' << i << ',' << kr.partitions[b][i] + 1 << '\n';
      run.write("partitions/n" + std::to_string(sc.n) + "_r" + pad3(sc.replicate + 1) + "_k" + std::to_string(kr.k) + ".csv",
                p.str());
      auto& s = sums[{sc.n, kr.k}];
      s.first += kr.internal_crand;
      s.second += kr.internal_jaccard;
      ++counts[{sc.n, kr.k}];
    }
  }
  std::ostringstream table;
  table << "n,k,internal_crand,internal_jaccard\n";
  for (const auto& [key, s] : sums) {
    const double c = static_cast<double>(counts[key]);
    table << key.first << ',' << key.second << ',' << io::fmt(s.first / c) << ',' << io::fmt(s.second / c) << '\n';
  }
  run.write("table.csv", table.str());
  run.finish();
}

void cmd_compare_engines(const Config& config) {
  if (!config.dgm) throw ConfigError("compare-engines needs a DGM for ground truth");
  Run run(config, "compare-engines");
  const auto res = run.stage("compare", [&] { return compare_engines(config); });
  const auto P = res.rows.size() / 4;  // rows per engine and arm
  std::ostringstream d;
  d << "engine,replicate,z,profile_id,l2\n";
  for (int e = 0; e < 2; ++e)
    for (std::size_t r = 0; r < res.distances[e].size(); ++r)
      for (std::size_t i = 0; i < res.distances[e][r].size(); ++i)
        d << (e == 0 ? "rpsm" : "snnets") << ',' << r + 1 << ',' << i / P << ',' << i % P << ','
          << io::fmt(res.distances[e][r][i]) << '\n';
  run.write("distances.csv", d.str());
  std::ostringstream s;
  s << "engine,z,profile_id,median,lower,upper\n";
  for (const auto& r : res.rows)
    s << cate::to_string(r.engine) << ',' << (r.z ? 1 : 0) << ',' << r.profile << ',' << io::fmt(r.median) << ','
      << io::fmt(r.lower) << ',' << io::fmt(r.upper) << '\n';
  run.write("summary.csv", s.str());
  json o{{"n", config.compare_n},
         {"replicates", config.compare_replicates},
         {"rpsm_median_l2", res.rpsm_median},
         {"snnets_median_l2", res.snnets_median},
         {"ratio", res.snnets_median / res.rpsm_median}};
  run.write("overall.json", o.dump(2) + "\n");
  run.finish();
}

}  // namespace phenocate::pipeline
