#include <gtest/gtest.h>

#include <cmath>

#include "divens/error.hpp"
#include "divens/theory.hpp"

using namespace divens;

namespace {

// Objective of the symmetric candidate where every member puts p on the label
// and spreads the rest evenly: -K ln p - alpha H(F).
double symmetric_objective(double p, std::size_t k, std::size_t l, double alpha) {
  const double q = (1.0 - p) / static_cast<double>(l - 1);
  const double h = -p * std::log(p) - (1.0 - p) * std::log(q);
  return -static_cast<double>(k) * std::log(p) - alpha * h;
}

// Golden-section minimum over (1/L, 1).
double symmetric_minimizer(std::size_t k, std::size_t l, double alpha) {
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = 1.0 / static_cast<double>(l) + 1e-9, b = 1.0 - 1e-12;
  for (int i = 0; i < 200; ++i) {
    const double c = b - phi * (b - a), d = a + phi * (b - a);
    if (symmetric_objective(c, k, l, alpha) < symmetric_objective(d, k, l, alpha)) {
      b = d;
    } else {
      a = c;
    }
  }
  return 0.5 * (a + b);
}

}  // namespace

TEST(Theory, SuitePasses) {
  const auto checks = run_theory_suite(TheoryOptions{});
  ASSERT_EQ(checks.size(), 4u);
  for (const auto& c : checks) EXPECT_TRUE(c.passed) << c.name << ": " << c.detail;
}

TEST(Theory, EachCheckPassesForOtherSeeds) {
  TheoryOptions opt;
  opt.seed = 101;
  opt.seeds = 3;
  EXPECT_TRUE(check_one_hot_optimum(opt).passed);
  EXPECT_TRUE(check_confidence_optimum(opt).passed);
  EXPECT_TRUE(check_jsd_boundary(opt).passed);
}

// The optimizer's confidence must match a 1-D minimisation done independently.
TEST(Theory, ConfidenceMatchesScalarMinimisation) {
  PredictionSpaceProblem p;
  p.members = 3;
  p.classes = 10;
  p.adp.alpha = 2.0;
  p.adp.beta = 0.0;
  p.seed = 3;
  const PredictionSet f = optimize_prediction_space(p).final();
  const double expected = symmetric_minimizer(3, 10, 2.0);
  double mass = 0.0;
  for (std::size_t k = 0; k < 3; ++k) mass += f.probs(k, f.label) / 3.0;
  EXPECT_NEAR(mass, expected, 5e-3);
  EXPECT_NEAR(solve_ensemble_confidence(3, 10, 2.0), expected, 1e-6);
}

TEST(Theory, BestOfRestartsKeepsTheLowestObjective) {
  PredictionSpaceProblem p;
  p.members = 3;
  p.classes = 6;
  p.steps = 400;
  p.seed = 20;
  const PredictionTrace best = best_of_restarts(p, 4);
  double lowest = INFINITY;
  for (std::uint64_t s = 20; s < 24; ++s) {
    p.seed = s;
    lowest = std::min(lowest, optimize_prediction_space(p).objective.back());
  }
  EXPECT_EQ(best.objective.back(), lowest);
  EXPECT_THROW(best_of_restarts(p, 0), Error);
}

TEST(Theory, TraceIsRecordedAndDescends) {
  PredictionSpaceProblem p;
  p.steps = 3000;
  p.trace_every = 500;
  p.tolerance = 0.0;
  const PredictionTrace t = optimize_prediction_space(p);
  ASSERT_GE(t.steps.size(), 2u);
  EXPECT_EQ(t.steps.front(), 0u);
  EXPECT_EQ(t.steps.back(), 3000u);
  EXPECT_EQ(t.iterates.size(), t.steps.size());
  EXPECT_LT(t.objective.back(), t.objective.front());
}
