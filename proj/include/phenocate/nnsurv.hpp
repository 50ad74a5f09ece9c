#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "phenocate/splinekit.hpp"
#include "phenocate/survdata.hpp"

namespace phenocate::nnsurv {

struct TrainingOptions {
  double learning_rate = 1e-2;
  std::size_t batch_size = 256;
  std::size_t epochs = 500;
  std::size_t patience = 20;
  double validation_fraction = 0.2;
  std::uint64_t seed = 0;
};

// Fully connected net: input -> hidden ReLU layers -> one sigmoid hazard per interval.
struct NetConfig {
  std::size_t input_dim = 1;
  std::size_t hidden_layers = 2;
  std::size_t hidden_units = 32;
  std::size_t output_dim = 20;
  TrainingOptions training;

  void validate() const;
};

struct Layer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
};

struct NetParams {
  std::vector<Layer> layers;

  std::size_t input_dim() const { return static_cast<std::size_t>(layers.front().weight.cols()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(layers.back().weight.rows()); }
  std::size_t parameter_count() const;
  bool operator==(const NetParams& other) const;
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
NetParams init_params(const NetConfig& config, std::uint64_t seed);

// Network input for a (treatment, modifiers) profile: (z, x1...).
std::vector<double> net_input(bool z, std::span<const std::uint8_t> x1);

// Discrete hazards, each strictly inside (0, 1).
std::vector<double> forward(const NetParams& params, std::span<const double> input);

// prod_{l <= j} (1 - h_l) for every interval j.
std::vector<double> discrete_survival(const NetParams& params, std::span<const double> input);

struct Example {
  std::vector<double> input;
  DiscreteOutcome outcome;
};

constexpr double kHazardClamp = 1e-7;

// Mean negative discrete-time log-likelihood. A censored subject's own
// interval counts as survived only past the interval midpoint.
double loss(const NetParams& params, std::span<const Example> batch);

// Exact gradient of loss() with the same layer shapes as `params`.
NetParams backward(const NetParams& params, std::span<const Example> batch);

struct TrainResult {
  NetParams params;
  std::vector<double> train_loss;       // epoch means
  std::vector<double> validation_loss;  // empty without a validation split
  std::size_t best_epoch = 0;
};

// Adam on mini-batches with early stopping on the validation loss; throws
// NumericalError naming the epoch if the loss stops being finite.
TrainResult train(const SurvivalFrame& frame, const IntervalScheme& scheme, const NetConfig& config);

// Continuous hazard built from the discrete hazards: rates
// -log(1 - h_j) / width_j are interpolated on the log scale at interval
// midpoints with a natural cubic spline.
class SmoothedHazard {
 public:
  SmoothedHazard(std::vector<double> discrete_hazards, const IntervalScheme& scheme);

  double hazard(double t) const;
  double cumhaz(double t) const;
  double survival(double t) const { return std::exp(-cumhaz(t)); }

  const std::vector<double>& discrete_hazards() const { return discrete_; }
  const Interpolant& log_rate() const { return log_rate_; }

 private:
  double integrate(double a, double b) const;

  std::vector<double> discrete_;
  Interpolant log_rate_;
  std::vector<double> breaks_;      // 0, node_1, ..., node_h
  std::vector<double> cumulative_;  // cumhaz at each break
};

SmoothedHazard smooth(const NetParams& params, bool z, std::span<const std::uint8_t> x1,
                      const IntervalScheme& scheme);

nlohmann::json to_json(const NetParams& params);
NetParams params_from_json(const nlohmann::json& j);

}  // namespace phenocate::nnsurv
