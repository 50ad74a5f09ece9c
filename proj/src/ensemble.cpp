#include "phenocate/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "phenocate/error.hpp"

namespace phenocate::ensemble {

namespace {

std::size_t cluster_count(std::span<const int> labels) {
  int k = 0;
  for (int l : labels) {
    if (l < 0) throw DataError("partition labels must be nonnegative");
    k = std::max(k, l + 1);
  }
  return static_cast<std::size_t>(k);
}

struct PairCounts {
  double same_both = 0, same_p = 0, same_q = 0, total = 0;
};

double c2(double x) { return x * (x - 1.0) / 2.0; }

PairCounts pair_counts(std::span<const int> p, std::span<const int> q) {
  if (p.size() != q.size()) throw DataError("partitions differ in item count");
  if (p.size() < 2) throw DataError("partition comparison needs at least two items");
  const std::size_t kp = cluster_count(p), kq = cluster_count(q);
  Eigen::MatrixXd table = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(kp), static_cast<Eigen::Index>(kq));
  for (std::size_t i = 0; i < p.size(); ++i) table(p[i], q[i]) += 1.0;
  PairCounts c;
  c.same_both = table.unaryExpr([](double v) { return c2(v); }).sum();
  c.same_p = table.rowwise().sum().unaryExpr([](double v) { return c2(v); }).sum();
  c.same_q = table.colwise().sum().unaryExpr([](double v) { return c2(v); }).sum();
  c.total = c2(static_cast<double>(p.size()));
  return c;
}

Eigen::MatrixXd overlap(std::span<const int> p, std::span<const int> q, std::size_t k) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < p.size(); ++i) m(p[i], q[i]) += 1.0;
  return m;
}

void check_ensemble(const std::vector<Labels>& partitions) {
  if (partitions.empty()) throw DataError("consensus needs at least one partition");
  for (const auto& p : partitions) {
    if (p.size() != partitions.front().size()) throw DataError("partitions differ in item count");
    cluster_count(p);
  }
}

std::size_t common_k(const std::vector<Labels>& partitions) {
  std::size_t k = 0;
  for (const auto& p : partitions) k = std::max(k, cluster_count(p));
  return k;
}

// Columns of `m` permuted so that column a holds base column perm[a].
Eigen::MatrixXd permute_columns(const Eigen::MatrixXd& m, const std::vector<int>& perm) {
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (std::size_t a = 0; a < perm.size(); ++a) out.col(static_cast<Eigen::Index>(a)) = m.col(perm[a]);
  return out;
}

double distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, Dissimilarity d) {
  if (d == Dissimilarity::manhattan) return (a - b).cwiseAbs().sum();
  return (a - b).squaredNorm();
}

// Best column permutation of `base` against `target` under `d`.
std::vector<int> best_permutation(const Eigen::MatrixXd& target, const Eigen::MatrixXd& base, Dissimilarity d) {
  const Eigen::Index k = target.cols();
  Eigen::MatrixXd cost(k, k);
  for (Eigen::Index a = 0; a < k; ++a) {
    for (Eigen::Index c = 0; c < k; ++c) {
      const auto diff = target.col(a) - base.col(c);
      cost(a, c) = d == Dissimilarity::manhattan ? diff.cwiseAbs().sum() : diff.squaredNorm();
    }
  }
  return hungarian(cost);
}

}  // namespace

double rand_index(std::span<const int> p, std::span<const int> q) {
  const auto c = pair_counts(p, q);
  // agreements = same in both + different in both
  return (c.total + 2.0 * c.same_both - c.same_p - c.same_q) / c.total;
}

double crand(std::span<const int> p, std::span<const int> q) {
  const auto c = pair_counts(p, q);
  const double expected = c.same_p * c.same_q / c.total;
  const double max_index = 0.5 * (c.same_p + c.same_q);
  const double denom = max_index - expected;
  if (denom == 0.0) return c.same_both == expected ? 1.0 : 0.0;
  return (c.same_both - expected) / denom;
}

double jaccard(std::span<const int> p, std::span<const int> q) {
  const auto c = pair_counts(p, q);
  const double either = c.same_p + c.same_q - c.same_both;
  if (either == 0.0) return 1.0;
  return c.same_both / either;
}

std::vector<int> hungarian(const Eigen::MatrixXd& cost) {
  const auto n = static_cast<std::size_t>(cost.rows());
  if (cost.cols() != cost.rows()) throw DataError("hungarian: cost matrix must be square");
  if (n == 0) return {};
  const double inf = std::numeric_limits<double>::infinity();
  // Potentials formulation with 1-based rows/columns; column 0 is a sentinel.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = match[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> result(n, 0);
  for (std::size_t j = 1; j <= n; ++j) result[match[j] - 1] = static_cast<int>(j - 1);
  return result;
}

Labels align(std::span<const int> p, std::span<const int> q) {
  if (p.size() != q.size()) throw DataError("align: partitions differ in item count");
  const std::size_t k = std::max(cluster_count(p), cluster_count(q));
  if (k == 0) return {};
  // assignment[a] = q label mapped to p label a
  const auto assignment = hungarian(-overlap(p, q, k));
  std::vector<int> relabel(k, 0);
  for (std::size_t a = 0; a < k; ++a) relabel[static_cast<std::size_t>(assignment[a])] = static_cast<int>(a);
  Labels out(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) out[i] = relabel[static_cast<std::size_t>(q[i])];
  return out;
}

Eigen::MatrixXd membership(std::span<const int> labels, std::size_t k) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()), static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) throw DataError("membership: label out of range");
    m(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return m;
}

Labels harden(const Eigen::MatrixXd& m) {
  Labels out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < m.cols(); ++c) {
      if (m(i, c) > m(i, best)) best = c;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

Labels majority_vote(const std::vector<Labels>& partitions) {
  check_ensemble(partitions);
  const std::size_t k = common_k(partitions);
  const std::size_t n = partitions.front().size();
  Eigen::MatrixXd tally = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  for (const auto& p : partitions) {
    const auto a = align(partitions.front(), p);
    for (std::size_t i = 0; i < n; ++i) tally(static_cast<Eigen::Index>(i), a[i]) += 1.0;
  }
  return harden(tally);
}

Dissimilarity dissimilarity_from_string(const std::string& s) {
  if (s == "euclidean") return Dissimilarity::euclidean;
  if (s == "manhattan") return Dissimilarity::manhattan;
  if (s == "rand") return Dissimilarity::rand;
  throw ConfigError("unknown dissimilarity '" + s + "'");
}

const char* to_string(Dissimilarity d) {
  switch (d) {
    case Dissimilarity::euclidean: return "euclidean";
    case Dissimilarity::manhattan: return "manhattan";
    case Dissimilarity::rand: return "rand";
  }
  return "";
}

MedoidResult medoid_consensus(const std::vector<Labels>& partitions, Dissimilarity d) {
  check_ensemble(partitions);
  const std::size_t k = common_k(partitions);
  const std::size_t B = partitions.size();
  MedoidResult result;
  result.objective.assign(B, 0.0);
  for (std::size_t a = 0; a < B; ++a) {
    for (std::size_t b = 0; b < B; ++b) {
      if (a == b) continue;
      double v = 0.0;
      if (d == Dissimilarity::rand) {
        v = 1.0 - rand_index(partitions[a], partitions[b]);
      } else {
        const auto aligned = align(partitions[a], partitions[b]);
        const Eigen::MatrixXd diff = membership(partitions[a], k) - membership(aligned, k);
        v = d == Dissimilarity::euclidean ? diff.norm() : diff.cwiseAbs().sum();
      }
      result.objective[a] += v;
    }
  }
  result.index = static_cast<std::size_t>(std::min_element(result.objective.begin(), result.objective.end()) -
                                          result.objective.begin());
  result.labels = partitions[result.index];
  return result;
}

SoftResult soft_consensus(const std::vector<Labels>& partitions, Dissimilarity d, std::size_t max_rounds) {
  check_ensemble(partitions);
  if (d == Dissimilarity::rand) throw ConfigError("soft consensus supports euclidean or manhattan only");
  const std::size_t k = common_k(partitions);
  const auto n = static_cast<Eigen::Index>(partitions.front().size());
  std::vector<Eigen::MatrixXd> base;
  for (const auto& p : partitions) base.push_back(membership(p, k));

  SoftResult result;
  Eigen::MatrixXd M = base.front();
  std::vector<Eigen::MatrixXd> aligned(base.size());
  for (std::size_t round = 0; round < max_rounds; ++round) {
    double objective = 0.0;
    for (std::size_t b = 0; b < base.size(); ++b) {
      aligned[b] = permute_columns(base[b], best_permutation(M, base[b], d));
      objective += distance(M, aligned[b], d);
    }
    result.objective.push_back(objective);

    Eigen::MatrixXd next = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(k));
    for (const auto& a : aligned) next += a;
    if (d == Dissimilarity::euclidean) {
      next /= static_cast<double>(aligned.size());
    } else {
      // With 0/1 inputs the absolute deviation of each row is linear in M on
      // the simplex; mass goes to the most frequent labels, split evenly on ties.
      for (Eigen::Index i = 0; i < n; ++i) {
        const double top = next.row(i).maxCoeff();
        Eigen::RowVectorXd row = (next.row(i).array() == top).cast<double>().matrix();
        next.row(i) = row / row.sum();
      }
    }
    result.rounds = round + 1;
    const bool fixed = (next - M).cwiseAbs().maxCoeff() < 1e-12;
    M = std::move(next);
    if (fixed) {
      result.converged = true;
      break;
    }
  }
  result.membership = M;
  result.labels = harden(M);
  return result;
}

double mean_pairwise_agreement(const std::vector<Labels>& partitions, Index index) {
  if (partitions.size() < 2) throw DataError("internal agreement needs at least two partitions");
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < partitions.size(); ++a) {
    for (std::size_t b = a + 1; b < partitions.size(); ++b) {
      total += index == Index::crand ? crand(partitions[a], partitions[b]) : jaccard(partitions[a], partitions[b]);
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

}  // namespace phenocate::ensemble
