#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "phenocate/cate.hpp"
#include "phenocate/ensemble.hpp"
#include "phenocate/error.hpp"
#include "phenocate/fclust.hpp"
#include "phenocate/simgen.hpp"
#include "phenocate/survdata.hpp"

namespace phenocate::pipeline {

inline constexpr const char* kVersion = "phenocate 1.0.0";

enum class Method { vote, medoid_euclidean, medoid_manhattan, medoid_rand, soft_euclidean, soft_manhattan };

const char* to_string(Method m);
Method method_from_string(const std::string& s);
std::vector<Method> all_methods();

enum class RpsmModel { automatic, dgm, standard };

struct Config {
  std::uint64_t seed = 1;
  std::size_t jobs = 1;
  std::filesystem::path output_dir;  // empty: PHENOCATE_OUT, then ./phenocate_out
  bool record_timings = false;

  // Observed data, or a DGM to simulate from. A DGM also supplies ground truth.
  std::filesystem::path input;
  CsvSchema schema;
  std::optional<simgen::DgmSpec> dgm;

  bool matching = false;
  double caliper_sd = 0.2;

  cate::EngineKind engine = cate::EngineKind::snnets;
  RpsmModel rpsm_model = RpsmModel::automatic;
  std::size_t rpsm_interior_knots = 1;
  std::vector<std::string> rpsm_tv_terms;
  rpsm::FitOptions rpsm_fit;
  nnsurv::NetConfig net;
  std::size_t intervals = 20;
  CutStrategy cuts = CutStrategy::quantile;

  cate::EffectSpec effect;
  std::size_t grid_points = 101;
  double grid_horizon = 0.0;  // 0: horizon of the data
  std::size_t B = 100;

  std::vector<std::size_t> k_values{2, 3, 4};
  fclust::KmeansOptions kmeans;
  std::vector<Method> methods = all_methods();
  std::size_t max_rounds = 100;

  std::vector<std::size_t> simulate_sizes{1500, 5000, 10000, 50000};
  std::size_t simulate_replicates = 1;
  std::vector<std::size_t> study_sizes{1500, 5000, 20000, 50000};
  std::size_t study_replicates = 1;
  std::size_t compare_n = 10000;
  std::size_t compare_replicates = 30;

  void validate() const;
};

// Every key with its default value.
nlohmann::json default_config_json();
// Unknown keys and ill-typed values throw ConfigError; relative paths in the
// config resolve against `base_dir`.
Config parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
Config load_config(const std::filesystem::path& path);
nlohmann::json to_json(const Config& config);

std::filesystem::path resolve_output_dir(const Config& config);

// Observed frame, or the configured DGM sampled at its own n and seed.
SurvivalFrame load_frame(const Config& config);
TimeGrid make_grid(const Config& config, const SurvivalFrame& frame);
cate::Engine make_engine(const Config& config, const SurvivalFrame& frame);

// Rethrows ConfigError / DataError / NumericalError with "<stage>: " prefixed.
template <class F>
auto staged(const std::string& stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError(stage + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(stage + ": " + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(stage + ": " + e.what());
  }
}

struct ConsensusOutcome {
  Method method = Method::vote;
  ensemble::Labels labels;
  Eigen::MatrixXd membership;  // profiles x k
  nlohmann::json diagnostics;
};

ConsensusOutcome run_consensus(const std::vector<ensemble::Labels>& partitions, std::size_t k, Method method,
                               std::size_t max_rounds = 100);

struct Centroids {
  std::vector<int> labels;  // non-empty clusters, ascending
  Eigen::MatrixXd curves;   // one row per label
  std::vector<std::size_t> sizes;  // replicate curves pooled per cluster
};

// Functional median (MBD) of every replicate curve of each cluster's profiles.
Centroids consensus_centroids(const cate::CateEnsemble& ensemble, const ensemble::Labels& labels);

struct KResult {
  std::size_t k = 0;
  std::vector<ensemble::Labels> partitions;  // per kept replicate
  std::vector<double> silhouettes;           // mean silhouette per replicate
  double internal_crand = 0.0;
  double internal_jaccard = 0.0;
  std::vector<ConsensusOutcome> consensus;  // config.methods order
};

// k-means on every replicate (seed + replicate id), then each consensus method.
std::vector<KResult> cluster_ensemble(const cate::CateEnsemble& ensemble, const Config& config);

struct PhenotypeResult {
  cate::CateEnsemble ensemble;
  std::vector<KResult> per_k;
  std::vector<std::vector<Centroids>> centroids;  // [k index][method index]
};

PhenotypeResult phenotype(const SurvivalFrame& frame, const Config& config);

struct StudyRow {
  std::size_t n = 0;
  std::size_t replicate = 0;
  std::size_t k = 0;
  Method method = Method::vote;
  double crand = 0.0;
  double jaccard = 0.0;
  double internal_crand = 0.0;
  double internal_jaccard = 0.0;
};

struct StudyScenario {
  std::size_t n = 0;
  std::size_t replicate = 0;
  std::vector<KResult> per_k;
};

struct StudyResult {
  std::vector<StudyRow> rows;
  std::vector<StudyScenario> scenarios;
  std::map<std::size_t, std::vector<int>> gold;
};

StudyResult agreement_study(const Config& config);

struct CompareRow {
  cate::EngineKind engine = cate::EngineKind::rpsm;
  bool z = false;
  std::size_t profile = 0;
  double median = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

struct CompareResult {
  std::vector<CompareRow> rows;  // per engine, z, profile
  // [engine][replicate][z * profiles + profile]
  std::vector<std::vector<std::vector<double>>> distances;
  double rpsm_median = 0.0;    // median over (z, profile) of the per-profile medians
  double snnets_median = 0.0;
};

// R-PSM uses the DGM's own model; SNnet-S uses the configured net.
CompareResult compare_engines(const Config& config);

// Output tree with a manifest that lists every file written through it.
class Run {
 public:
  Run(const Config& config, std::string command);

  const std::filesystem::path& dir() const { return dir_; }
  void write(const std::string& relative, const std::string& text);
  void adopt(const std::filesystem::path& absolute);  // file written by other code
  void warn(std::string message) { warnings_.push_back(std::move(message)); }
  template <class F>
  auto stage(const std::string& name, F&& f) -> decltype(f()) {
    const auto start = std::chrono::steady_clock::now();
    struct Timer {
      Run* run;
      std::string name;
      std::chrono::steady_clock::time_point start;
      ~Timer() { run->timings_.emplace_back(name, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()); }
    } timer{this, name, start};
    return staged(name, std::forward<F>(f));
  }
  void finish();

 private:
  void write_manifest(const std::string& status);

  Config config_;
  std::string command_;
  std::filesystem::path dir_;
  std::vector<std::string> outputs_;
  std::vector<std::string> warnings_;
  std::vector<std::pair<std::string, double>> timings_;
};

void cmd_simulate(const Config& config);
void cmd_match(const Config& config);
void cmd_fit_rpsm(const Config& config);
void cmd_fit_nnet(const Config& config);
void cmd_cate(const Config& config);
void cmd_cluster(const Config& config, const std::filesystem::path& ensemble_dir);
void cmd_consensus(const Config& config, const std::filesystem::path& partitions_dir,
                   const std::filesystem::path& ensemble_dir);
void cmd_phenotype(const Config& config);
void cmd_agreement_study(const Config& config);
void cmd_compare_engines(const Config& config);

}  // namespace phenocate::pipeline
