#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "divens/diversity.hpp"
#include "divens/error.hpp"
#include "support.hpp"

using namespace divens;
using divens::testing::random_labels;
using divens::testing::random_simplex;
using divens::testing::random_tensor;
using divens::testing::small_ensemble;

namespace {

PredictionSet random_predictions(std::size_t k, std::size_t l, std::uint64_t seed) {
  Rng rng(seed, "preds");
  PredictionSet s;
  s.probs = Tensor(Shape{k, l});
  for (std::size_t i = 0; i < k; ++i) {
    const auto p = random_simplex(l, rng);
    std::copy(p.begin(), p.end(), s.probs.row(i).begin());
  }
  s.label = rng.below(l);
  return s;
}

// Squared volume of the parallelotope spanned by the columns: product of
// squared residual norms under classical Gram-Schmidt.
double gram_schmidt_volume(std::vector<std::vector<double>> cols) {
  double volume = 1.0;
  for (std::size_t k = 0; k < cols.size(); ++k) {
    for (std::size_t j = 0; j < k; ++j) {
      const double nj = std::inner_product(cols[j].begin(), cols[j].end(), cols[j].begin(), 0.0);
      const double proj = std::inner_product(cols[k].begin(), cols[k].end(), cols[j].begin(), 0.0) / nj;
      for (std::size_t i = 0; i < cols[k].size(); ++i) cols[k][i] -= proj * cols[j][i];
    }
    volume *= std::inner_product(cols[k].begin(), cols[k].end(), cols[k].begin(), 0.0);
  }
  return volume;
}

// Normalized non-label columns built straight from the probabilities.
std::vector<std::vector<double>> normalized_columns(const PredictionSet& s) {
  std::vector<std::vector<double>> cols;
  for (std::size_t k = 0; k < s.members(); ++k) {
    std::vector<double> c;
    for (std::size_t j = 0; j < s.classes(); ++j)
      if (j != s.label) c.push_back(s.probs(k, j));
    const double n = std::sqrt(std::inner_product(c.begin(), c.end(), c.begin(), 0.0));
    for (double& v : c) v /= n;
    cols.push_back(c);
  }
  return cols;
}

}  // namespace

TEST(Entropy, KnownValues) {
  const std::vector<double> uniform(4, 0.25);
  EXPECT_NEAR(shannon_entropy(uniform), std::log(4.0), 1e-15);
  const std::vector<double> one_hot = {0.0, 1.0, 0.0};
  EXPECT_EQ(shannon_entropy(one_hot), 0.0);
}

TEST(NonMax, ColumnsAreUnitNormWithLabelRemoved) {
  const PredictionSet s = random_predictions(3, 10, 1);
  const NonMaxMatrix m = nonmax_matrix(s);
  ASSERT_EQ(m.columns.rows(), 9u);
  ASSERT_EQ(m.columns.cols(), 3u);
  EXPECT_EQ(m.removed, s.label);
  const auto oracle = normalized_columns(s);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_FALSE(m.degenerate[k]);
    for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(m.columns(i, k), oracle[k][i], 1e-15);
  }
}

TEST(NonMax, ZeroColumnIsFlaggedAndUniform) {
  PredictionSet s;
  s.probs = Tensor::matrix({{1, 0, 0, 0}, {0.4, 0.3, 0.2, 0.1}});
  s.label = 0;
  const NonMaxMatrix m = nonmax_matrix(s);
  EXPECT_TRUE(m.degenerate[0]);
  EXPECT_FALSE(m.degenerate[1]);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(m.columns(i, 0), 1.0 / std::sqrt(3.0));
}

// Property: det of the Gram matrix equals the Gram-Schmidt squared volume.
TEST(EnsembleDiversity, MatchesGramSchmidtVolume) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng rng(s, "shape");
    const std::size_t l = 3 + rng.below(18);
    const std::size_t k = 1 + rng.below(std::min<std::size_t>(5, l - 1));
    const PredictionSet p = random_predictions(k, l, s);
    const double ed = ensemble_diversity(nonmax_matrix(p), 0.0);
    EXPECT_NEAR(ed, gram_schmidt_volume(normalized_columns(p)), 1e-8) << "K=" << k << " L=" << l;
    EXPECT_GE(ed, -1e-12);
    EXPECT_LE(ed, 1.0 + 1e-12);
  }
}

TEST(EnsembleDiversity, OrthogonalAndParallelExtremes) {
  PredictionSet ortho;
  ortho.probs = Tensor::matrix({{0.5, 0.5, 0, 0, 0}, {0.5, 0, 0.5, 0, 0}, {0.5, 0, 0, 0.25, 0.25}});
  ortho.label = 0;
  EXPECT_NEAR(ensemble_diversity(nonmax_matrix(ortho)), 1.0, 1e-10);
  EXPECT_NEAR(log_ensemble_diversity(nonmax_matrix(ortho)), 0.0, 1e-10);

  PredictionSet same;
  same.probs = Tensor::matrix({{0.7, 0.2, 0.1}, {0.7, 0.2, 0.1}});
  same.label = 0;
  EXPECT_LT(ensemble_diversity(nonmax_matrix(same)), 1e-10);
  EXPECT_TRUE(std::isfinite(log_ensemble_diversity(nonmax_matrix(same))));
}

TEST(EnsembleDiversity, TooManyMembersIsRejected) {
  const PredictionSet p = random_predictions(4, 4, 3);
  EXPECT_THROW(ensemble_diversity(nonmax_matrix(p)), Error);
}

TEST(Regularizer, CombinesEntropyAndLogDiversity) {
  const PredictionSet p = random_predictions(3, 10, 5);
  std::vector<double> mean(10, 0.0);
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t j = 0; j < 10; ++j) mean[j] += p.probs(k, j) / 3.0;
  double h = 0.0;
  for (double v : mean) h -= v * std::log(v);
  const double led = std::log(gram_schmidt_volume(normalized_columns(p)));
  AdpConfig cfg;
  cfg.alpha = 1.5;
  cfg.beta = 0.25;
  EXPECT_NEAR(adp_regularizer(p, cfg), 1.5 * h + 0.25 * led, 1e-9);
}

TEST(Jsd, NonNegativeAndZeroForIdenticalMembers) {
  for (std::uint64_t s = 0; s < 20; ++s) EXPECT_GE(jsd_diversity(random_predictions(3, 6, s)), -1e-15);
  PredictionSet same;
  same.probs = Tensor::matrix({{0.6, 0.3, 0.1}, {0.6, 0.3, 0.1}});
  EXPECT_NEAR(jsd_diversity(same), 0.0, 1e-15);
}

TEST(Objective, ZeroCoefficientsGiveSumOfCrossEntropies) {
  const Ensemble ens = small_ensemble(3, 11);
  const Tensor x = random_tensor({7, 8}, 12, 0.0, 1.0);
  const auto y = random_labels(7, 10, 13);
  AdpConfig cfg;
  cfg.alpha = 0.0;
  cfg.beta = 0.0;
  double oracle = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    const Tensor p = ens.predict_member(k, x);
    for (std::size_t i = 0; i < 7; ++i) oracle -= std::log(p(i, y[i])) / 7.0;
  }
  EXPECT_NEAR(adp_objective(ens, x, y, cfg), oracle, 1e-12);
}

TEST(Objective, MatchesPerExampleRegularizer) {
  const Ensemble ens = small_ensemble(3, 14);
  const Tensor x = random_tensor({5, 8}, 15, 0.0, 1.0);
  const auto y = random_labels(5, 10, 16);
  AdpConfig cfg;
  const auto member = ens.predict_members(x);
  double oracle = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    PredictionSet s;
    s.probs = Tensor(Shape{3, 10});
    s.label = y[i];
    for (std::size_t k = 0; k < 3; ++k) {
      std::copy(member[k].row(i).begin(), member[k].row(i).end(), s.probs.row(k).begin());
      oracle -= std::log(member[k](i, y[i]));
    }
    oracle -= adp_regularizer(s, cfg);
  }
  EXPECT_NEAR(adp_objective(ens, x, y, cfg), oracle / 5.0, 1e-9);
}

TEST(Objective, GradientPassesFiniteDifferences) {
  const Ensemble ens = small_ensemble(3, 17);
  const Tensor x = random_tensor({6, 8}, 18, 0.0, 1.0);
  const auto y = random_labels(6, 10, 19);
  const AdpConfig cfg;
  auto f = [&](ng::Graph& g, ng::Var w) {
    std::vector<ng::Var> logits;
    for (std::size_t k = 0; k < 3; ++k) {
      std::vector<ng::Var> params;
      const auto p = ens.member(k).parameters();
      for (std::size_t q = 0; q < p.size(); ++q) params.push_back(k == 1 && q == 0 ? w : g.constant(*p[q]));
      logits.push_back(ens.member(k).logits(g, g.constant(x), params));
    }
    return adp_objective_terms(g, logits, y, cfg).objective;
  };
  EXPECT_LT(ng::finite_diff_check(f, *ens.member(1).parameters()[0]), 1e-4);
}

TEST(ConfidenceEquation, SolveAlphaRoundTrips) {
  EXPECT_NEAR(solve_alpha(5, 1000, 0.9), 0.61, 0.01);
  for (double f : {0.3, 0.5, 0.9, 0.99}) {
    const double a = solve_alpha(3, 10, f);
    EXPECT_NEAR(confidence_residual(3, 10, a, f), 0.0, 1e-12);
    EXPECT_NEAR(solve_ensemble_confidence(3, 10, a), f, 1e-8);
  }
  EXPECT_THROW(solve_alpha(3, 10, 0.05), Error);
  EXPECT_THROW(solve_alpha(3, 10, 1.0), Error);
}

TEST(Partition, CoversNonLabelIndicesInEqualBlocks) {
  const auto parts = contiguous_partition(3, 10, 4);
  ASSERT_EQ(parts.size(), 3u);
  std::set<std::size_t> seen;
  for (const auto& block : parts) {
    EXPECT_EQ(block.size(), 3u);
    for (std::size_t j : block) {
      EXPECT_NE(j, 4u);
      EXPECT_TRUE(seen.insert(j).second);
    }
  }
  EXPECT_EQ(seen.size(), 9u);
  EXPECT_THROW(contiguous_partition(4, 10, 0), Error);
}

TEST(Partition, DisjointSupportSolutionIsOrthogonal) {
  const auto parts = contiguous_partition(3, 10, 0);
  const PredictionSet s = disjoint_support_solution(3, 10, 0, 0.6, parts);
  EXPECT_NO_THROW(s.validate());
  for (std::size_t k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(s.probs(k, 0), 0.6);
  EXPECT_NEAR(s.probs(0, parts[0][0]), 3.0 * 0.4 / 9.0, 1e-15);
  EXPECT_NEAR(ensemble_diversity(nonmax_matrix(s), 0.0), 1.0, 1e-12);
}

// Property: the projection satisfies p_i = max(v_i - tau, 0) for one tau and is idempotent.
TEST(Simplex, ProjectionSatisfiesOptimalityConditions) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    Tensor v = random_tensor({7}, s, -2.0, 2.0);
    std::vector<double> p(v.data().begin(), v.data().end());
    project_to_simplex(p);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
    double tau = 0.0;
    std::size_t support = 0;
    for (std::size_t i = 0; i < 7; ++i) {
      EXPECT_GE(p[i], 0.0);
      if (p[i] > 0.0) tau += v[i] - p[i], ++support;
    }
    tau /= static_cast<double>(support);
    for (std::size_t i = 0; i < 7; ++i) EXPECT_NEAR(p[i], std::max(v[i] - tau, 0.0), 1e-12);
    auto again = p;
    project_to_simplex(again);
    for (std::size_t i = 0; i < 7; ++i) EXPECT_NEAR(again[i], p[i], 1e-15);
  }
}

TEST(PredictionSpace, GraphObjectiveMatchesDirectValue) {
  PredictionSpaceProblem problem;
  const PredictionSet s = random_predictions(3, 10, 21);
  problem.label = s.label;
  ng::Graph g;
  const double via_graph = prediction_space_objective(g, g.constant(s.probs), problem).value().item();
  EXPECT_NEAR(via_graph, prediction_space_objective(s, problem), 1e-12);
}

TEST(PredictionSpace, IteratesStayOnTheSimplexAndObjectiveDecreases) {
  PredictionSpaceProblem problem;
  problem.steps = 500;
  problem.trace_every = 50;
  problem.seed = 3;
  const PredictionTrace t = optimize_prediction_space(problem);
  ASSERT_GE(t.objective.size(), 2u);
  for (const auto& it : t.iterates) EXPECT_NO_THROW(it.validate());
  EXPECT_LT(t.objective.back(), t.objective.front());
  for (std::size_t i = 1; i < t.objective.size(); ++i) EXPECT_LE(t.objective[i], t.objective[i - 1] + 1e-12);
}
