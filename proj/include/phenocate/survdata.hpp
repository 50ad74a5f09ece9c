#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace phenocate {

struct Subject {
  std::int64_t id = 0;
  double time = 0.0;
  bool event = false;
  bool treatment = false;
  std::vector<std::uint8_t> modifiers;
  std::vector<double> confounders;
};

// Right-censored cohort with binary treatment and binary effect modifiers.
class SurvivalFrame {
 public:
  SurvivalFrame() = default;
  // Validates every subject; throws DataError naming the offending row.
  // A non-positive horizon is replaced by the largest observed time.
  SurvivalFrame(std::vector<Subject> subjects, std::vector<std::string> modifier_names,
                std::vector<std::string> confounder_names, double horizon = 0.0);

  const std::vector<Subject>& subjects() const { return subjects_; }
  const std::vector<std::string>& modifier_names() const { return modifier_names_; }
  const std::vector<std::string>& confounder_names() const { return confounder_names_; }
  double horizon() const { return horizon_; }
  std::size_t size() const { return subjects_.size(); }
  std::size_t modifier_count() const { return modifier_names_.size(); }
  std::size_t confounder_count() const { return confounder_names_.size(); }
  double max_time() const;
  std::size_t event_count() const;

  // Subset (rows may repeat) sharing names and horizon.
  SurvivalFrame select(std::span<const std::size_t> rows) const;

 private:
  std::vector<Subject> subjects_;
  std::vector<std::string> modifier_names_;
  std::vector<std::string> confounder_names_;
  double horizon_ = 0.0;
};

// Column mapping for CSV ingestion. With both lists empty, every column
// other than id/time/event/treatment is read as an effect modifier.
struct CsvSchema {
  std::string id = "id";
  std::string time = "time";
  std::string event = "event";
  std::string treatment = "z";
  std::vector<std::string> modifiers;
  std::vector<std::string> confounders;
  double horizon = 0.0;

  static CsvSchema for_frame(const SurvivalFrame& frame);
};

SurvivalFrame load_csv(const std::filesystem::path& path, const CsvSchema& schema = {});
std::string to_csv(const SurvivalFrame& frame);
void save_csv(const SurvivalFrame& frame, const std::filesystem::path& path);

// Product-limit estimate as a right-continuous step function.
struct KaplanMeier {
  std::vector<double> times;     // distinct event times
  std::vector<double> survival;  // S just after each time
  std::vector<double> std_error; // Greenwood
  std::vector<double> lower;     // 95% log(-log) interval
  std::vector<double> upper;

  double operator()(double t) const;
};

// Optional per-subject weights (e.g. inverse-probability weights).
KaplanMeier kaplan_meier(const SurvivalFrame& frame,
                         std::span<const double> weights = {});

// Left-closed right-open intervals [c_{j-1}, c_j); the last interval also
// contains its right end point.
struct IntervalScheme {
  std::vector<double> cuts;  // c_0 = 0 < c_1 < ... < c_h

  std::size_t count() const { return cuts.empty() ? 0 : cuts.size() - 1; }
  double width(std::size_t j) const { return cuts[j + 1] - cuts[j]; }
  double midpoint(std::size_t j) const { return 0.5 * (cuts[j] + cuts[j + 1]); }
  // 0-based interval index; throws DataError beyond the last cut.
  std::size_t locate(double t) const;
};

enum class CutStrategy { quantile, uniform };

IntervalScheme make_intervals(const SurvivalFrame& frame, std::size_t h,
                              CutStrategy strategy = CutStrategy::quantile);

struct DiscreteOutcome {
  std::size_t interval = 0;
  bool event = false;
  bool past_midpoint = false;  // observed time >= midpoint of its interval
};

std::vector<DiscreteOutcome> discretize(const SurvivalFrame& frame, const IntervalScheme& scheme);

// Common evaluation grid for curves: strictly increasing, positive.
class TimeGrid {
 public:
  TimeGrid() = default;
  explicit TimeGrid(std::vector<double> points);

  // `count` points uniform on (0, horizon]; the first point is horizon/count.
  static TimeGrid uniform(double horizon, std::size_t count = 101);
  // `count` points uniform on [start, end].
  static TimeGrid linspace(double start, double end, std::size_t count);

  const std::vector<double>& points() const { return points_; }
  std::size_t size() const { return points_.size(); }
  double operator[](std::size_t i) const { return points_[i]; }
  double front() const { return points_.front(); }
  double back() const { return points_.back(); }
  // Composite trapezoid weights; sum equals back() - front().
  std::vector<double> trapezoid_weights() const;

  bool operator==(const TimeGrid&) const = default;

 private:
  std::vector<double> points_;
};

}  // namespace phenocate
