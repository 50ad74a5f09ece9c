#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "phenocate/survdata.hpp"

namespace phenocate::fclust {

// One curve per row, evaluated on a shared grid.
struct CurveSet {
  Eigen::MatrixXd curves;        // profiles x grid points
  TimeGrid grid;
  std::vector<std::size_t> ids;  // profile id per row

  std::size_t size() const { return static_cast<std::size_t>(curves.rows()); }
  void validate() const;
  CurveSet subset(std::span<const std::size_t> rows) const;
};

// sqrt of the trapezoid integral of (a - b)^2 over the grid.
double l2_distance(std::span<const double> a, std::span<const double> b, const TimeGrid& grid);

struct KmeansOptions {
  std::size_t restarts = 10;
  std::size_t max_iterations = 300;
};

// Labels are 0-based and canonical: clusters are numbered in order of their
// first member when rows are sorted by profile id.
struct ClusterResult {
  std::vector<int> labels;  // per input row
  Eigen::MatrixXd centroids;
  double inertia = 0.0;     // sum of squared L2 distances to own centroid
  std::size_t iterations = 0;
  std::uint64_t seed = 0;
  std::vector<double> inertia_trace;  // best restart, one value per Lloyd step
};

ClusterResult kmeans(const CurveSet& set, std::size_t k, std::uint64_t seed,
                     const KmeansOptions& options = {});

// Within-cluster sum of squared L2 distances to pointwise-mean centroids.
double inertia(const CurveSet& set, std::span<const int> labels);

struct Silhouette {
  std::vector<double> values;
  double mean = 0.0;
};

// Members of singleton clusters get 0.
Silhouette silhouette(const CurveSet& set, std::span<const int> labels);

// Modified band depth with bands of 2..J curves (the J-curve terms are summed,
// so the range is [0, J - 1]). Ties with a band edge count as inside.
std::vector<double> mbd(const CurveSet& set, std::size_t J = 2);

// Row with maximal depth; ties go to the smallest profile id.
std::size_t functional_median(const CurveSet& set, std::size_t J = 2);

nlohmann::json to_json(const ClusterResult& result, const CurveSet& set);
// profile_id,label with 1-based labels.
std::string labels_csv(const std::vector<std::size_t>& ids, std::span<const int> labels);

}  // namespace phenocate::fclust
