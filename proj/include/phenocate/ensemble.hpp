#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace phenocate::ensemble {

// Hard partitions are 0-based label vectors; k is max label + 1.
using Labels = std::vector<int>;

double rand_index(std::span<const int> p, std::span<const int> q);
double crand(std::span<const int> p, std::span<const int> q);
double jaccard(std::span<const int> p, std::span<const int> q);

// Minimum-cost assignment for a square cost matrix; result[row] = column.
std::vector<int> hungarian(const Eigen::MatrixXd& cost);

// q relabelled to maximise label overlap with p.
Labels align(std::span<const int> p, std::span<const int> q);

// 0/1 membership matrix with k columns.
Eigen::MatrixXd membership(std::span<const int> labels, std::size_t k);

// Row argmax, ties to the lowest column.
Labels harden(const Eigen::MatrixXd& m);

Labels majority_vote(const std::vector<Labels>& partitions);

enum class Dissimilarity { euclidean, manhattan, rand };

Dissimilarity dissimilarity_from_string(const std::string& s);
const char* to_string(Dissimilarity d);

struct MedoidResult {
  std::size_t index = 0;       // position of the medoid in the input
  Labels labels;
  std::vector<double> objective;  // sum of dissimilarities for every candidate
};

MedoidResult medoid_consensus(const std::vector<Labels>& partitions, Dissimilarity d);

struct SoftResult {
  Eigen::MatrixXd membership;  // n x k, rows sum to 1
  Labels labels;
  std::vector<double> objective;  // per round
  std::size_t rounds = 0;
  bool converged = false;
};

// Alternates optimal alignment of each base membership with a membership
// update: the elementwise mean (euclidean) or the row-stochastic minimiser
// of the summed absolute deviation (manhattan).
SoftResult soft_consensus(const std::vector<Labels>& partitions, Dissimilarity d,
                          std::size_t max_rounds = 100);

enum class Index { crand, jaccard };

double mean_pairwise_agreement(const std::vector<Labels>& partitions, Index index);

}  // namespace phenocate::ensemble
