#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "divens/graph.hpp"
#include "divens/model.hpp"
#include "divens/tensor.hpp"

namespace divens {

/// K member probability vectors (rows of a K x L tensor) and a label.
struct PredictionSet {
  Tensor probs;
  std::size_t label = 0;

  std::size_t members() const { return probs.rows(); }
  std::size_t classes() const { return probs.cols(); }
  /// Each row on the simplex within 1e-9, entries in [0,1], label < L.
  void validate() const;
};

/// (L-1) x K matrix whose column k is member k's prediction without the
/// removed index, L2-normalized.
struct NonMaxMatrix {
  Tensor columns;
  std::size_t removed = 0;
  /// Column k had (near-)zero norm and was replaced by 1/sqrt(L-1).
  std::vector<bool> degenerate;
};

struct AdpConfig {
  double alpha = 2.0;
  double beta = 0.5;
  /// Added to the Gram diagonal so log ED stays finite for parallel columns.
  double det_offset = 1e-12;

  void validate() const;
  friend bool operator==(const AdpConfig&, const AdpConfig&) = default;
};

inline constexpr double kZeroColumnNorm = 1e-12;

/// -sum p ln p with 0 ln 0 = 0.
double shannon_entropy(std::span<const double> probs);

NonMaxMatrix nonmax_matrix(const PredictionSet& preds);

/// det(M^T M + offset I). Throws when K > L-1 (structurally singular).
double ensemble_diversity(const NonMaxMatrix& m, double det_offset = 1e-12);
/// log of ensemble_diversity, computed from the LU factors.
double log_ensemble_diversity(const NonMaxMatrix& m, double det_offset = 1e-12);

/// alpha * H(F_en) + beta * ln ED.
double adp_regularizer(const PredictionSet& preds, const AdpConfig& cfg);

/// H(F_en) - (1/K) sum_k H(F^k).
double jsd_diversity(const PredictionSet& preds);

/// Per-example pieces of the training objective, each a length-B vector.
struct AdpTerms {
  ng::Var ece;            // sum_k -ln F^k_y
  ng::Var entropy;        // H(F_en)
  ng::Var log_diversity;  // ln ED (only when beta > 0)
  ng::Var per_example;    // ece - alpha H - beta ln ED
  ng::Var objective;      // batch mean of per_example
};

/// Builds the objective from member logits (already divided by any
/// temperature). Terms with a zero coefficient are left out of the graph.
AdpTerms adp_objective_terms(ng::Graph& g, std::span<const ng::Var> member_logits, std::span<const std::size_t> labels,
                             const AdpConfig& cfg);

/// Mean over the batch of [sum_k CE^k - ADP] for an ensemble, at the
/// members' training temperature.
double adp_objective(const Ensemble& ens, const Tensor& x, std::span<const std::size_t> labels, const AdpConfig& cfg);

/// Unique alpha making F_en_y the confidence of the beta = 0 optimum:
/// alpha = K / (F ln(F (L-1) / (1 - F))). Requires 1/L < F < 1.
double solve_alpha(std::size_t members, std::size_t classes, double ensemble_confidence);
/// Inverse of solve_alpha by bisection over (1/L + 1e-9, 1 - 1e-9).
double solve_ensemble_confidence(std::size_t members, std::size_t classes, double alpha);
/// 1/F - (alpha/K) ln(F (L-1) / (1 - F)); zero at the beta = 0 optimum.
double confidence_residual(std::size_t members, std::size_t classes, double alpha, double ensemble_confidence);

/// Contiguous partition of [L] \ {label} into K blocks of (L-1)/K indices.
std::vector<std::vector<std::size_t>> contiguous_partition(std::size_t members, std::size_t classes, std::size_t label);

/// The K | (L-1) optimum: member k puts F_en_y on the label and
/// K (1 - F_en_y) / (L-1) on each index of its block.
PredictionSet disjoint_support_solution(std::size_t members, std::size_t classes, std::size_t label, double ensemble_confidence,
                                  const std::vector<std::vector<std::size_t>>& partition);

/// Euclidean projection onto the probability simplex.
void project_to_simplex(std::span<double> v);

enum class TheoryRegularizer { kAdp, kJsd };

struct PredictionSpaceProblem {
  std::size_t members = 3;
  std::size_t classes = 10;
  std::size_t label = 0;
  TheoryRegularizer regularizer = TheoryRegularizer::kAdp;
  AdpConfig adp;
  double jsd_weight = 2.0;
  std::size_t steps = 20000;
  double step_size = 0.05;
  /// Stop once a full sweep moves no coordinate by more than this (0 never stops early).
  double tolerance = 1e-12;
  std::uint64_t seed = 0;
  /// Iterates recorded every `trace_every` steps (plus the first and last).
  std::size_t trace_every = 1000;
};

struct PredictionTrace {
  std::vector<std::size_t> steps;
  std::vector<PredictionSet> iterates;
  std::vector<double> objective;

  const PredictionSet& final() const { return iterates.back(); }
};

/// sum_k -ln F^k_y minus the configured regularizer, at a prediction set.
double prediction_space_objective(const PredictionSet& preds, const PredictionSpaceProblem& problem);
ng::Var prediction_space_objective(ng::Graph& g, ng::Var probs, const PredictionSpaceProblem& problem);

/// Projected gradient descent directly over K simplex vectors.
PredictionTrace optimize_prediction_space(const PredictionSpaceProblem& problem);

}  // namespace divens
