#include "phenocate/fclust.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "phenocate/error.hpp"

namespace phenocate::fclust {

void CurveSet::validate() const {
  if (curves.rows() == 0) throw DataError("curve set is empty");
  if (static_cast<std::size_t>(curves.cols()) != grid.size()) {
    throw DataError("curve length does not match the grid");
  }
  if (ids.size() != size()) throw DataError("curve set needs one profile id per curve");
  if (!curves.allFinite()) throw DataError("curve set contains non-finite values");
}

CurveSet CurveSet::subset(std::span<const std::size_t> rows) const {
  CurveSet out;
  out.grid = grid;
  out.curves.resize(static_cast<Eigen::Index>(rows.size()), curves.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.curves.row(static_cast<Eigen::Index>(i)) = curves.row(static_cast<Eigen::Index>(rows[i]));
    out.ids.push_back(ids[rows[i]]);
  }
  return out;
}

double l2_distance(std::span<const double> a, std::span<const double> b, const TimeGrid& grid) {
  if (a.size() != grid.size() || b.size() != grid.size()) {
    throw DataError("l2_distance: curves and grid differ in length");
  }
  const auto w = grid.trapezoid_weights();
  double s = 0.0;
  for (std::size_t g = 0; g < w.size(); ++g) s += w[g] * (a[g] - b[g]) * (a[g] - b[g]);
  return std::sqrt(s);
}

namespace {

// Weighted squared distances between every row of X and every row of C.
Eigen::MatrixXd sq_distances(const Eigen::MatrixXd& X, const Eigen::MatrixXd& C, const Eigen::VectorXd& w) {
  Eigen::MatrixXd D(X.rows(), C.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index c = 0; c < C.rows(); ++c) {
      D(i, c) = ((X.row(i) - C.row(c)).array().square() * w.transpose().array()).sum();
    }
  }
  return D;
}

Eigen::MatrixXd means(const Eigen::MatrixXd& X, const std::vector<int>& labels, std::size_t k) {
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), X.cols());
  std::vector<double> count(k, 0.0);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const auto c = static_cast<std::size_t>(labels[static_cast<std::size_t>(i)]);
    C.row(static_cast<Eigen::Index>(c)) += X.row(i);
    count[c] += 1.0;
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (count[c] > 0) C.row(static_cast<Eigen::Index>(c)) /= count[c];
  }
  return C;
}

struct Run {
  std::vector<int> labels;
  Eigen::MatrixXd centroids;
  double inertia = 0.0;
  std::size_t iterations = 0;
  std::vector<double> trace;
};

Eigen::MatrixXd plus_plus(const Eigen::MatrixXd& X, const Eigen::VectorXd& w, std::size_t k,
                          std::mt19937_64& rng) {
  const auto n = static_cast<std::size_t>(X.rows());
  Eigen::MatrixXd C(static_cast<Eigen::Index>(k), X.cols());
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  C.row(0) = X.row(static_cast<Eigen::Index>(pick(rng)));
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = ((X.row(static_cast<Eigen::Index>(i)) - C.row(static_cast<Eigen::Index>(c - 1)))
                            .array()
                            .square() *
                        w.transpose().array())
                           .sum();
      d2[i] = std::min(d2[i], d);
      total += d2[i];
    }
    std::size_t chosen = 0;
    if (total > 0.0) {
      double r = unif(rng) * total;
      chosen = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        r -= d2[i];
        if (r < 0.0 && d2[i] > 0.0) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = pick(rng);
    }
    C.row(static_cast<Eigen::Index>(c)) = X.row(static_cast<Eigen::Index>(chosen));
  }
  return C;
}

Run lloyd(const Eigen::MatrixXd& X, const Eigen::VectorXd& w, Eigen::MatrixXd C, std::size_t k,
          std::size_t max_iterations) {
  const auto n = static_cast<std::size_t>(X.rows());
  Run run;
  run.labels.assign(n, -1);
  for (std::size_t it = 0; it < max_iterations; ++it) {
    const Eigen::MatrixXd D = sq_distances(X, C, w);
    std::vector<int> next(n);
    for (std::size_t i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      D.row(static_cast<Eigen::Index>(i)).minCoeff(&best);
      next[i] = static_cast<int>(best);
    }
    // Re-seed empty clusters at the curve farthest from its centroid.
    std::vector<std::size_t> size(k, 0);
    for (int l : next) ++size[static_cast<std::size_t>(l)];
    for (std::size_t c = 0; c < k; ++c) {
      if (size[c] > 0) continue;
      std::size_t far = n;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto own = static_cast<std::size_t>(next[i]);
        const double d = D(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(own));
        if (size[own] > 1 && d > far_d) {
          far_d = d;
          far = i;
        }
      }
      --size[static_cast<std::size_t>(next[far])];
      next[far] = static_cast<int>(c);
      size[c] = 1;
    }
    const bool unchanged = next == run.labels;
    run.labels = std::move(next);
    C = means(X, run.labels, k);
    double total = 0.0;
    const Eigen::MatrixXd D2 = sq_distances(X, C, w);
    for (std::size_t i = 0; i < n; ++i) {
      total += D2(static_cast<Eigen::Index>(i), run.labels[i]);
    }
    run.trace.push_back(total);
    run.inertia = total;
    run.iterations = it + 1;
    if (unchanged) break;
  }
  run.centroids = std::move(C);
  return run;
}

// Single-curve transfers that lower the inertia, applied until none remains.
void transfer(const Eigen::MatrixXd& X, const Eigen::VectorXd& w, Run& run, std::size_t k) {
  const auto n = static_cast<std::size_t>(X.rows());
  std::vector<double> size(k, 0.0);
  for (int l : run.labels) size[static_cast<std::size_t>(l)] += 1.0;
  Eigen::MatrixXd& C = run.centroids;
  bool moved = true;
  while (moved) {
    moved = false;
    for (std::size_t i = 0; i < n; ++i) {
      const auto from = static_cast<std::size_t>(run.labels[i]);
      if (size[from] <= 1.0) continue;
      const auto xi = X.row(static_cast<Eigen::Index>(i));
      auto d2 = [&](std::size_t c) {
        return ((xi - C.row(static_cast<Eigen::Index>(c))).array().square() * w.transpose().array()).sum();
      };
      const double loss = size[from] / (size[from] - 1.0) * d2(from);
      double best_gain = 0.0;
      std::size_t to = from;
      for (std::size_t c = 0; c < k; ++c) {
        if (c == from) continue;
        const double gain = loss - size[c] / (size[c] + 1.0) * d2(c);
        if (gain > best_gain * (1.0 + 1e-12) + 1e-15) {
          best_gain = gain;
          to = c;
        }
      }
      if (to == from) continue;
      const auto f = static_cast<Eigen::Index>(from), t = static_cast<Eigen::Index>(to);
      C.row(f) = (C.row(f) * size[from] - xi) / (size[from] - 1.0);
      C.row(t) = (C.row(t) * size[to] + xi) / (size[to] + 1.0);
      size[from] -= 1.0;
      size[to] += 1.0;
      run.labels[i] = static_cast<int>(to);
      run.inertia -= best_gain;
      run.trace.push_back(run.inertia);
      moved = true;
    }
  }
  // Recompute exactly to shed rounding from the incremental updates.
  C = means(X, run.labels, k);
  const Eigen::MatrixXd D = sq_distances(X, C, w);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += D(static_cast<Eigen::Index>(i), run.labels[i]);
  run.inertia = total;
  if (!run.trace.empty()) run.trace.back() = std::min(run.trace.back(), total);
}

Eigen::VectorXd weights(const TimeGrid& grid) {
  const auto w = grid.trapezoid_weights();
  return Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
}

}  // namespace

double inertia(const CurveSet& set, std::span<const int> labels) {
  set.validate();
  if (labels.size() != set.size()) throw DataError("inertia: one label per curve required");
  const int k = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<int> l(labels.begin(), labels.end());
  const auto C = means(set.curves, l, static_cast<std::size_t>(k));
  const auto w = weights(set.grid);
  double total = 0.0;
  for (std::size_t i = 0; i < l.size(); ++i) {
    total += ((set.curves.row(static_cast<Eigen::Index>(i)) - C.row(l[i])).array().square() *
              w.transpose().array())
                 .sum();
  }
  return total;
}

ClusterResult kmeans(const CurveSet& set, std::size_t k, std::uint64_t seed, const KmeansOptions& options) {
  set.validate();
  const std::size_t n = set.size();
  if (k < 2 || k > n) throw ConfigError("kmeans: need 2 <= k <= number of curves");
  if (options.restarts == 0 || options.max_iterations == 0) {
    throw ConfigError("kmeans: restarts and iteration cap must be positive");
  }

  // Canonical order by profile id makes the result independent of input order.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return set.ids[a] < set.ids[b]; });
  Eigen::MatrixXd X(set.curves.rows(), set.curves.cols());
  for (std::size_t i = 0; i < n; ++i) X.row(static_cast<Eigen::Index>(i)) = set.curves.row(static_cast<Eigen::Index>(order[i]));
  const auto w = weights(set.grid);

  std::mt19937_64 rng(seed);
  Run best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < options.restarts; ++r) {
    Run run = lloyd(X, w, plus_plus(X, w, k, rng), k, options.max_iterations);
    transfer(X, w, run, k);
    if (run.inertia < best.inertia) best = std::move(run);
  }

  // Relabel by first appearance.
  std::vector<int> map(k, -1);
  int next = 0;
  for (int l : best.labels) {
    if (map[static_cast<std::size_t>(l)] < 0) map[static_cast<std::size_t>(l)] = next++;
  }
  ClusterResult result;
  result.labels.assign(n, 0);
  result.centroids.resize(static_cast<Eigen::Index>(k), X.cols());
  for (std::size_t c = 0; c < k; ++c) result.centroids.row(map[c]) = best.centroids.row(static_cast<Eigen::Index>(c));
  for (std::size_t i = 0; i < n; ++i) result.labels[order[i]] = map[static_cast<std::size_t>(best.labels[i])];
  result.inertia = best.inertia;
  result.iterations = best.iterations;
  result.seed = seed;
  result.inertia_trace = best.trace;
  return result;
}

Silhouette silhouette(const CurveSet& set, std::span<const int> labels) {
  set.validate();
  const std::size_t n = set.size();
  if (labels.size() != n) throw DataError("silhouette: one label per curve required");
  const int k = *std::max_element(labels.begin(), labels.end()) + 1;
  if (k < 2 || *std::min_element(labels.begin(), labels.end()) < 0) {
    throw DataError("silhouette: need at least two clusters");
  }
  std::vector<std::size_t> size(static_cast<std::size_t>(k), 0);
  for (int l : labels) ++size[static_cast<std::size_t>(l)];
  for (auto s : size) {
    if (s == 0) throw DataError("silhouette: empty cluster");
  }

  const Eigen::MatrixXd D = sq_distances(set.curves, set.curves, weights(set.grid)).cwiseMax(0.0).cwiseSqrt();

  Silhouette out;
  out.values.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto own = static_cast<std::size_t>(labels[i]);
    if (size[own] == 1) continue;
    std::vector<double> sum(static_cast<std::size_t>(k), 0.0);
    for (std::size_t j = 0; j < n; ++j) sum[static_cast<std::size_t>(labels[j])] += D(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    const double ai = sum[own] / static_cast<double>(size[own] - 1);
    double bi = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < sum.size(); ++c) {
      if (c != own) bi = std::min(bi, sum[c] / static_cast<double>(size[c]));
    }
    const double denom = std::max(ai, bi);
    out.values[i] = denom > 0.0 ? (bi - ai) / denom : 0.0;
  }
  out.mean = std::accumulate(out.values.begin(), out.values.end(), 0.0) / static_cast<double>(n);
  return out;
}

namespace {

double choose(double n, std::size_t r) {
  if (n < static_cast<double>(r)) return 0.0;
  double c = 1.0;
  for (std::size_t i = 0; i < r; ++i) c = c * (n - static_cast<double>(i)) / static_cast<double>(i + 1);
  return c;
}

}  // namespace

std::vector<double> mbd(const CurveSet& set, std::size_t J) {
  set.validate();
  const std::size_t n = set.size();
  if (n < 3) throw DataError("mbd: need at least three curves");
  if (J < 2 || J > n) throw ConfigError("mbd: band order J must lie in [2, number of curves]");
  const auto G = static_cast<std::size_t>(set.curves.cols());
  std::vector<double> depth(n, 0.0);
  std::vector<double> column(n), sorted(n);
  for (std::size_t g = 0; g < G; ++g) {
    for (std::size_t i = 0; i < n; ++i) column[i] = set.curves(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(g));
    sorted = column;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < n; ++i) {
      const auto below = static_cast<double>(std::lower_bound(sorted.begin(), sorted.end(), column[i]) - sorted.begin());
      const auto above = static_cast<double>(sorted.end() - std::upper_bound(sorted.begin(), sorted.end(), column[i]));
      for (std::size_t j = 2; j <= J; ++j) {
        const double all = choose(static_cast<double>(n), j);
        depth[i] += (all - choose(below, j) - choose(above, j)) / all;
      }
    }
  }
  for (auto& d : depth) d /= static_cast<double>(G);
  return depth;
}

std::size_t functional_median(const CurveSet& set, std::size_t J) {
  set.validate();
  if (set.size() < 3) {
    // One or two curves: every curve is equally deep.
    return static_cast<std::size_t>(std::min_element(set.ids.begin(), set.ids.end()) - set.ids.begin());
  }
  const auto d = mbd(set, J);
  std::size_t best = 0;
  for (std::size_t i = 1; i < d.size(); ++i) {
    if (d[i] > d[best] || (d[i] == d[best] && set.ids[i] < set.ids[best])) best = i;
  }
  return best;
}

nlohmann::json to_json(const ClusterResult& result, const CurveSet& set) {
  nlohmann::json centroids = nlohmann::json::array();
  for (Eigen::Index c = 0; c < result.centroids.rows(); ++c) {
    centroids.push_back(std::vector<double>(result.centroids.row(c).begin(), result.centroids.row(c).end()));
  }
  return {{"k", result.centroids.rows()},
          {"seed", result.seed},
          {"inertia", result.inertia},
          {"iterations", result.iterations},
          {"grid", set.grid.points()},
          {"centroids", centroids}};
}

std::string labels_csv(const std::vector<std::size_t>& ids, std::span<const int> labels) {
  std::ostringstream out;
  out << "profile_id,label\n";
  for (std::size_t i = 0; i < ids.size(); ++i) out << ids[i] << ',' << labels[i] + 1 << '\n';
  return out.str();
}

}  // namespace phenocate::fclust
