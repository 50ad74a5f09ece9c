#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <numeric>
#include <random>

#include "phenocate/error.hpp"
#include "phenocate/ensemble.hpp"

using namespace phenocate;
using namespace phenocate::ensemble;

namespace {

Labels random_labels(std::size_t n, int k, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, k - 1);
  Labels l(n);
  for (auto& v : l) v = pick(rng);
  return l;
}

Labels relabel(const Labels& l, std::mt19937_64& rng) {
  const int k = *std::max_element(l.begin(), l.end()) + 1;
  std::vector<int> perm(static_cast<std::size_t>(k));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Labels out;
  for (int v : l) out.push_back(perm[static_cast<std::size_t>(v)]);
  return out;
}

struct Pairs {
  double n11 = 0, n10 = 0, n01 = 0, n00 = 0;
};

Pairs count_pairs(const Labels& p, const Labels& q) {
  Pairs c;
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t j = i + 1; j < p.size(); ++j) {
      const bool a = p[i] == p[j], b = q[i] == q[j];
      (a && b ? c.n11 : a ? c.n10 : b ? c.n01 : c.n00) += 1;
    }
  }
  return c;
}

// Adjusted Rand from pair counts alone.
double crand_pairs(const Labels& p, const Labels& q) {
  const auto c = count_pairs(p, q);
  const double total = c.n11 + c.n10 + c.n01 + c.n00;
  const double sp = c.n11 + c.n10, sq = c.n11 + c.n01;
  const double expected = sp * sq / total;
  const double denom = 0.5 * (sp + sq) - expected;
  if (denom == 0) return c.n11 == expected ? 1.0 : 0.0;
  return (c.n11 - expected) / denom;
}

double jaccard_pairs(const Labels& p, const Labels& q) {
  const auto c = count_pairs(p, q);
  const double d = c.n11 + c.n10 + c.n01;
  return d == 0 ? 1.0 : c.n11 / d;
}

double overlap(const Labels& p, const Labels& q) {
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p[i] == q[i];
  return s;
}

}  // namespace

TEST_CASE("index examples") {
  const Labels p{0, 0, 1, 1}, q{0, 1, 0, 1};
  CHECK(crand(p, p) == doctest::Approx(1.0));
  CHECK(crand(p, q) == doctest::Approx(-0.5));
  CHECK(jaccard(p, p) == doctest::Approx(1.0));
  CHECK(jaccard(p, q) == doctest::Approx(0.0));
  CHECK(rand_index(p, q) == doctest::Approx(2.0 / 6));
  CHECK_THROWS_AS(crand(p, Labels{0, 1}), DataError);
  CHECK_THROWS_AS(crand(Labels{0}, Labels{0}), DataError);
}

TEST_CASE("indices match pair-counting oracles") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> size(2, 12);
  std::uniform_int_distribution<int> kk(1, 5);
  for (int rep = 0; rep < 1000; ++rep) {
    const std::size_t n = size(rng);
    const auto p = random_labels(n, kk(rng), rng), q = random_labels(n, kk(rng), rng);
    CHECK(crand(p, q) == doctest::Approx(crand_pairs(p, q)).epsilon(1e-12));
    CHECK(jaccard(p, q) == doctest::Approx(jaccard_pairs(p, q)).epsilon(1e-12));
    CHECK(crand(p, q) == doctest::Approx(crand(q, p)).epsilon(1e-12));
    CHECK(jaccard(p, q) == jaccard(q, p));
    CHECK(crand(relabel(p, rng), relabel(q, rng)) == doctest::Approx(crand(p, q)).epsilon(1e-12));
    CHECK(jaccard(relabel(p, rng), q) == doctest::Approx(jaccard(p, q)).epsilon(1e-12));
  }
}

TEST_CASE("self agreement is one for nontrivial partitions") {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 100; ++rep) {
    auto p = random_labels(10, 3, rng);
    p[0] = 0, p[1] = 1;
    CHECK(crand(p, p) == doctest::Approx(1.0));
    CHECK(jaccard(p, p) == doctest::Approx(1.0));
  }
}

TEST_CASE("hungarian solves small assignments exactly") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 10);
  for (int rep = 0; rep < 50; ++rep) {
    const int k = 1 + rep % 5;
    Eigen::MatrixXd c(k, k);
    for (int i = 0; i < k; ++i) for (int j = 0; j < k; ++j) c(i, j) = u(rng);
    const auto a = hungarian(c);
    double got = 0;
    for (int i = 0; i < k; ++i) got += c(i, a[static_cast<std::size_t>(i)]);
    std::vector<int> perm(static_cast<std::size_t>(k));
    std::iota(perm.begin(), perm.end(), 0);
    double best = INFINITY;
    do {
      double s = 0;
      for (int i = 0; i < k; ++i) s += c(i, perm[static_cast<std::size_t>(i)]);
      best = std::min(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(got == doctest::Approx(best).epsilon(1e-12));
  }
}

TEST_CASE("alignment") {
  std::mt19937_64 rng(4);
  CHECK(align(Labels{0, 0, 1}, Labels{1, 1, 0}) == Labels{0, 0, 1});
  for (int rep = 0; rep < 50; ++rep) {
    const auto p = random_labels(15, 4, rng);
    CHECK(align(p, relabel(p, rng)) == p);
    const auto q = random_labels(15, 4, rng);
    const auto a = align(p, q);
    CHECK(crand(a, q) == doctest::Approx(1.0));
    for (int t = 0; t < 100; ++t) CHECK(overlap(p, a) >= overlap(p, relabel(q, rng)));
  }
}

TEST_CASE("majority vote") {
  const Labels p{0, 0, 1, 1, 2}, q{1, 1, 0, 0, 0};
  CHECK(majority_vote({p, p, p}) == p);
  CHECK(majority_vote({p, p, p, q}) == p);
  // q relabelled is (0,0,1,1,1): item 4 ties 1:1 between p's 2 and q's 1.
  CHECK(majority_vote({p, q}) == Labels{0, 0, 1, 1, 1});

  // 3 partitions on 5 items, tallied by hand after alignment to the first.
  const Labels a{0, 0, 1, 1, 1}, b{1, 1, 0, 0, 1}, c{0, 1, 1, 1, 0};
  CHECK(majority_vote({a, b, c}) == Labels{0, 0, 1, 1, 0});

  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<Labels> s;
    for (int i = 0; i < 5; ++i) s.push_back(random_labels(9, 3, rng));
    const auto v = majority_vote(s);
    CHECK(majority_vote({v}) == v);
  }
}

TEST_CASE("medoid consensus") {
  const Labels p{0, 0, 1, 1, 1, 0}, q{0, 1, 0, 1, 0, 1};
  for (auto d : {Dissimilarity::euclidean, Dissimilarity::manhattan, Dissimilarity::rand}) {
    const auto r = medoid_consensus({p, p, q}, d);
    CHECK(r.labels == p);
    CHECK(r.index == 0);
    CHECK(medoid_consensus({q}, d).labels == q);
  }
  std::mt19937_64 rng(6);
  for (int rep = 0; rep < 30; ++rep) {
    std::vector<Labels> s;
    for (int i = 0; i < 6; ++i) s.push_back(random_labels(10, 3, rng));
    for (auto d : {Dissimilarity::euclidean, Dissimilarity::manhattan, Dissimilarity::rand}) {
      const auto r = medoid_consensus(s, d);
      CHECK(std::find(s.begin(), s.end(), r.labels) != s.end());
      for (double v : r.objective) CHECK(r.objective[r.index] <= v);
    }
  }
}

TEST_CASE("soft consensus") {
  const Labels p{0, 0, 1, 1};
  for (auto d : {Dissimilarity::euclidean, Dissimilarity::manhattan}) {
    const auto r = soft_consensus({p, p, p}, d);
    CHECK(r.labels == p);
    CHECK(r.converged);
    CHECK((r.membership - membership(p, 2)).cwiseAbs().maxCoeff() == 0.0);
  }
  const Labels q{1, 1, 1, 0};  // differs from p on item 2 after alignment
  const auto r = soft_consensus({p, q}, Dissimilarity::euclidean);
  CHECK(r.membership(2, 0) == doctest::Approx(0.5));
  CHECK(r.membership(2, 1) == doctest::Approx(0.5));
  CHECK(r.membership(0, 0) == 1.0);
  CHECK(r.membership(3, 1) == 1.0);
  CHECK_THROWS_AS(soft_consensus({p}, Dissimilarity::rand), ConfigError);

  std::mt19937_64 rng(7);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<Labels> s;
    for (int i = 0; i < 8; ++i) s.push_back(random_labels(12, 3, rng));
    for (auto d : {Dissimilarity::euclidean, Dissimilarity::manhattan}) {
      const auto sr = soft_consensus(s, d);
      for (std::size_t i = 1; i < sr.objective.size(); ++i) CHECK(sr.objective[i] <= sr.objective[i - 1] + 1e-9);
      for (Eigen::Index i = 0; i < sr.membership.rows(); ++i) {
        CHECK(sr.membership.row(i).sum() == doctest::Approx(1.0));
        CHECK(sr.membership.row(i).minCoeff() >= 0.0);
      }
    }
  }
}

TEST_CASE("mean pairwise agreement") {
  const Labels p{0, 0, 1, 1, 2}, q{0, 1, 1, 2, 2};
  CHECK(mean_pairwise_agreement({p, p, p}, Index::crand) == doctest::Approx(1.0));
  CHECK(mean_pairwise_agreement({p, q}, Index::jaccard) == doctest::Approx(jaccard(p, q)));
  CHECK_THROWS_AS(mean_pairwise_agreement({p}, Index::crand), DataError);
  std::mt19937_64 rng(9);
  std::vector<Labels> s;
  for (int i = 0; i < 5; ++i) s.push_back(random_labels(10, 3, rng));
  double sum = 0;
  int pairs = 0;
  for (int a = 0; a < 5; ++a) {
    for (int b = 0; b < 5; ++b) {
      if (a < b) sum += crand(s[static_cast<std::size_t>(a)], s[static_cast<std::size_t>(b)]), ++pairs;
    }
  }
  CHECK(mean_pairwise_agreement(s, Index::crand) == doctest::Approx(sum / pairs).epsilon(1e-14));
}
