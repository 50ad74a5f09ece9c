#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "phenocate/survdata.hpp"

namespace phenocate::propensity {

// Logistic regression of treatment on the confounders.
// Coefficients are ordered [intercept, confounder_1 .. confounder_p].
struct PsModel {
  std::vector<std::string> names;
  Eigen::VectorXd coefficients;
  Eigen::VectorXd std_errors;
  std::vector<double> probabilities;  // fitted, per subject of the fitting frame
  std::vector<double> loglik_trace;   // starting value, then one entry per iteration
  bool converged = false;
  int iterations = 0;

  double linear_predictor(const std::vector<double>& confounders) const;
};

struct FitOptions {
  double tolerance = 1e-8;  // max |score|
  int max_iterations = 100;
  double separation_bound = 20.0;
};

PsModel fit_ps(const SurvivalFrame& frame, const FitOptions& options = {});

struct Pair {
  std::int64_t treated_id = 0;
  std::int64_t control_id = 0;
  double distance = 0.0;  // |logit difference|
};

struct MatchResult {
  SurvivalFrame frame;  // matched subjects in pair order, treated first
  std::vector<Pair> pairs;
  double caliper = 0.0;  // on the logit scale
  std::size_t unmatched_treated = 0;
};

// Greedy 1:1 nearest neighbour on the logit, without replacement. Treated
// units go in descending logit order; ties break on the smaller id.
MatchResult match(const SurvivalFrame& frame, const PsModel& model, double caliper_sd = 0.2);

std::string pairs_csv(const std::vector<Pair>& pairs);

enum class Test { welch_t, chi_squared, fisher, none };
const char* to_string(Test t);

struct ArmSummary {
  double mean_treated = 0.0;
  double mean_control = 0.0;
  double effect_size = 0.0;  // standardized mean difference x 100
  double p_value = 1.0;
  Test test = Test::none;
  bool zero_variance = false;
};

struct BalanceRow {
  std::string name;
  bool binary = false;
  ArmSummary before;
  ArmSummary after;
};

struct BalanceReport {
  std::vector<BalanceRow> rows;

  double mean_abs_effect_before() const;
  double mean_abs_effect_after() const;
};

ArmSummary compare_arms(const std::vector<double>& treated, const std::vector<double>& control,
                        bool binary);
BalanceReport balance(const SurvivalFrame& before, const SurvivalFrame& after);
std::string balance_csv(const BalanceReport& report);

// Two-sided Fisher exact test on the 2x2 table [[a, b], [c, d]].
double fisher_exact(std::int64_t a, std::int64_t b, std::int64_t c, std::int64_t d);

// Inverse-probability weights z/p + (1-z)/(1-p), truncated at the 1st and
// 99th percentiles.
std::vector<double> iptw_weights(const SurvivalFrame& frame, const PsModel& model);

}  // namespace phenocate::propensity
