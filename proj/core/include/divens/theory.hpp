#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "divens/diversity.hpp"

namespace divens {

struct TheoryCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct TheoryOptions {
  std::uint64_t seed = 7;
  /// Independent starts for the all-seeds checks (seed, seed+1, ...).
  std::size_t seeds = 5;
  /// Starts for the structured optimum; the lowest objective is kept.
  std::size_t restarts = 3;
};

/// alpha = 0, beta = 0.5, K = 2, L = 4: every member converges to the label.
TheoryCheck check_one_hot_optimum(const TheoryOptions& opt);
/// alpha = 2, beta = 0, K = 3, L = 10: members agree and F_en_y solves the
/// confidence equation; also the K = 5, L = 1000, F = 0.9 alpha value.
TheoryCheck check_confidence_optimum(const TheoryOptions& opt);
/// alpha = 2, beta = 0.5, K = 3, L = 10: orthogonal non-max columns with
/// equal mass K (1 - F_en_y) / (L - 1) on disjoint supports.
TheoryCheck check_orthogonal_optimum(const TheoryOptions& opt);
/// JSD weight 2, K = 2, L = 3: some coordinate reaches the simplex boundary.
TheoryCheck check_jsd_boundary(const TheoryOptions& opt);

std::vector<TheoryCheck> run_theory_suite(const TheoryOptions& opt);

/// Best (lowest final objective) of `restarts` runs seeded problem.seed + i.
PredictionTrace best_of_restarts(PredictionSpaceProblem problem, std::size_t restarts);

}  // namespace divens
