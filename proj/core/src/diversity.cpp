#include "divens/diversity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "divens/error.hpp"
#include "divens/linalg.hpp"
#include "divens/rng.hpp"

namespace divens {

void PredictionSet::validate() const {
  if (probs.rank() != 2 || probs.rows() == 0) {
    fail(ErrorCode::kShapeMismatch, "PredictionSet: probs must be a non-empty K x L matrix", shape_string(probs.shape()));
  }
  require(classes() >= 2, "PredictionSet: need at least 2 classes");
  require(label < classes(), "PredictionSet: label out of range");
  for (std::size_t k = 0; k < members(); ++k) {
    double total = 0.0;
    for (double v : probs.row(k)) {
      if (!(v >= 0.0 && v <= 1.0)) fail(ErrorCode::kInvalidArgument, "PredictionSet: entry outside [0,1]", "member=" + std::to_string(k));
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      fail(ErrorCode::kInvalidArgument, "PredictionSet: member does not sum to 1", "member=" + std::to_string(k) + " sum=" + std::to_string(total));
    }
  }
}

void AdpConfig::validate() const {
  require(alpha >= 0.0 && beta >= 0.0, "AdpConfig: alpha and beta must be non-negative");
  require(det_offset > 0.0 && det_offset <= 1e-6, "AdpConfig: det_offset must lie in (0, 1e-6]");
}

double shannon_entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p < 0.0) fail(ErrorCode::kInvalidArgument, "shannon_entropy: negative probability", "value=" + std::to_string(p));
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

NonMaxMatrix nonmax_matrix(const PredictionSet& preds) {
  require(preds.classes() >= 2, "nonmax_matrix: need at least 2 classes");
  preds.validate();
  const std::size_t k = preds.members(), l = preds.classes();
  NonMaxMatrix out;
  out.removed = preds.label;
  out.columns = Tensor(Shape{l - 1, k});
  out.degenerate.assign(k, false);
  for (std::size_t m = 0; m < k; ++m) {
    auto row = preds.probs.row(m);
    double sq = 0.0;
    for (std::size_t j = 0; j < l; ++j)
      if (j != preds.label) sq += row[j] * row[j];
    const double norm = std::sqrt(sq);
    std::size_t r = 0;
    if (norm < kZeroColumnNorm) {
      out.degenerate[m] = true;
      const double u = 1.0 / std::sqrt(static_cast<double>(l - 1));
      for (std::size_t i = 0; i < l - 1; ++i) out.columns(i, m) = u;
      continue;
    }
    for (std::size_t j = 0; j < l; ++j)
      if (j != preds.label) out.columns(r++, m) = row[j] / norm;
  }
  return out;
}

namespace {

linalg::Lu gram_factor(const NonMaxMatrix& m, double det_offset, Tensor& gram) {
  const std::size_t rows = m.columns.shape()[0], k = m.columns.shape()[1];
  if (k > rows) {
    fail(ErrorCode::kInvalidArgument,
         "ensemble_diversity: K exceeds L-1, so the K columns cannot be independent and the Gram matrix is singular",
         "K=" + std::to_string(k) + " L-1=" + std::to_string(rows));
  }
  require(det_offset >= 0.0, "ensemble_diversity: det_offset must be non-negative");
  gram = kernels::matmul(kernels::transpose(m.columns), m.columns);
  for (std::size_t i = 0; i < k; ++i) gram(i, i) += det_offset;
  return linalg::lu_factor(gram);
}

}  // namespace

double ensemble_diversity(const NonMaxMatrix& m, double det_offset) {
  Tensor gram;
  return gram_factor(m, det_offset, gram).determinant();
}

double log_ensemble_diversity(const NonMaxMatrix& m, double det_offset) {
  Tensor gram;
  const linalg::Lu lu = gram_factor(m, det_offset, gram);
  const double d = lu.determinant();
  if (!(d > 0.0)) fail(ErrorCode::kNumeric, "log_ensemble_diversity: non-positive determinant", "det=" + std::to_string(d));
  return lu.log_abs_determinant();
}

double adp_regularizer(const PredictionSet& preds, const AdpConfig& cfg) {
  cfg.validate();
  preds.validate();
  double value = 0.0;
  if (cfg.alpha != 0.0) {
    std::vector<Tensor> rows;
    for (std::size_t k = 0; k < preds.members(); ++k) {
      auto r = preds.probs.row(k);
      rows.push_back(Tensor::vector(std::vector<double>(r.begin(), r.end())));
    }
    const Tensor fen = average_predictions(rows);
    value += cfg.alpha * shannon_entropy(fen.data());
  }
  if (cfg.beta != 0.0) value += cfg.beta * log_ensemble_diversity(nonmax_matrix(preds), cfg.det_offset);
  return value;
}

double jsd_diversity(const PredictionSet& preds) {
  preds.validate();
  const std::size_t k = preds.members(), l = preds.classes();
  std::vector<double> fen(l, 0.0);
  double mean_member_entropy = 0.0;
  for (std::size_t m = 0; m < k; ++m) {
    auto row = preds.probs.row(m);
    for (std::size_t j = 0; j < l; ++j) fen[j] += row[j];
    mean_member_entropy += shannon_entropy(row);
  }
  for (double& v : fen) v /= static_cast<double>(k);
  mean_member_entropy /= static_cast<double>(k);
  return std::max(0.0, shannon_entropy(fen) - mean_member_entropy);
}

AdpTerms adp_objective_terms(ng::Graph&, std::span<const ng::Var> member_logits, std::span<const std::size_t> labels,
                             const AdpConfig& cfg) {
  cfg.validate();
  require(!member_logits.empty(), "adp_objective: ensemble is empty");
  const Tensor& z0 = member_logits[0].value();
  require(z0.rank() == 2 && z0.shape()[0] > 0, "adp_objective: batch must be non-empty");
  const std::size_t batch = z0.shape()[0], classes = z0.shape()[1];
  require(labels.size() == batch, "adp_objective: label count does not match batch");
  for (auto y : labels) {
    if (y >= classes) fail(ErrorCode::kInvalidArgument, "adp_objective: label out of range", "label=" + std::to_string(y));
  }
  const std::size_t k = member_logits.size();

  AdpTerms terms;
  std::vector<ng::Var> probs;
  std::vector<ng::Var> nonmax;
  for (std::size_t m = 0; m < k; ++m) {
    ng::Var logp = ng::log_softmax(member_logits[m]);
    ng::Var ce = ng::neg(ng::pick_rows(logp, labels));
    terms.ece = m == 0 ? ce : ng::add(terms.ece, ce);
    if (cfg.alpha != 0.0 || cfg.beta != 0.0) probs.push_back(ng::exp(logp));
  }
  terms.per_example = terms.ece;
  if (cfg.alpha != 0.0) {
    ng::Var total = probs[0];
    for (std::size_t m = 1; m < k; ++m) total = ng::add(total, probs[m]);
    terms.entropy = ng::entropy(ng::scale(total, 1.0 / static_cast<double>(k)));
    terms.per_example = ng::sub(terms.per_example, ng::scale(terms.entropy, cfg.alpha));
  }
  if (cfg.beta != 0.0) {
    if (k > classes - 1) {
      fail(ErrorCode::kInvalidArgument, "adp_objective: K exceeds L-1, ensemble diversity is structurally zero",
           "K=" + std::to_string(k) + " L=" + std::to_string(classes));
    }
    for (const ng::Var& p : probs) nonmax.push_back(ng::l2_normalize_rows(ng::remove_index_rows(p, labels), kZeroColumnNorm));
    terms.log_diversity = ng::gram_logdet(nonmax, cfg.det_offset);
    terms.per_example = ng::sub(terms.per_example, ng::scale(terms.log_diversity, cfg.beta));
  }
  terms.objective = ng::mean(terms.per_example);
  return terms;
}

double adp_objective(const Ensemble& ens, const Tensor& x, std::span<const std::size_t> labels, const AdpConfig& cfg) {
  require(!ens.empty(), "adp_objective: ensemble is empty");
  ng::Graph g;
  ng::Var input = g.constant(x);
  std::vector<ng::Var> logits;
  for (const Mlp& m : ens.members()) {
    std::vector<ng::Var> params;
    for (const Tensor* p : m.parameters()) params.push_back(g.constant(*p));
    ng::Var z = m.logits(g, input, params);
    if (m.config().temperature != 1.0) z = ng::scale(z, 1.0 / m.config().temperature);
    logits.push_back(z);
  }
  return adp_objective_terms(g, logits, labels, cfg).objective.value().item();
}

double confidence_residual(std::size_t members, std::size_t classes, double alpha, double f) {
  const double l = static_cast<double>(classes);
  return 1.0 / f - alpha / static_cast<double>(members) * std::log(f * (l - 1.0) / (1.0 - f));
}

double solve_alpha(std::size_t members, std::size_t classes, double f) {
  require(members >= 1 && classes >= 2, "solve_alpha: need K >= 1 and L >= 2");
  const double l = static_cast<double>(classes);
  if (!(f > 1.0 / l && f < 1.0)) {
    fail(ErrorCode::kInvalidArgument, "solve_alpha: ensemble confidence must lie in (1/L, 1)", "F_en_y=" + std::to_string(f));
  }
  return static_cast<double>(members) / (f * std::log(f * (l - 1.0) / (1.0 - f)));
}

double solve_ensemble_confidence(std::size_t members, std::size_t classes, double alpha) {
  require(members >= 1 && classes >= 2, "solve_ensemble_confidence: need K >= 1 and L >= 2");
  require(alpha > 0.0, "solve_ensemble_confidence: alpha must be positive");
  double lo = 1.0 / static_cast<double>(classes) + 1e-9;
  double hi = 1.0 - 1e-9;
  // The residual decreases monotonically on this interval.
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (confidence_residual(members, classes, alpha, mid) > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

std::vector<std::vector<std::size_t>> contiguous_partition(std::size_t members, std::size_t classes, std::size_t label) {
  require(members >= 1 && classes >= 2 && label < classes, "contiguous_partition: invalid K, L or label");
  if ((classes - 1) % members != 0) {
    fail(ErrorCode::kInvalidArgument, "contiguous_partition: K must divide L-1",
         "K=" + std::to_string(members) + " L=" + std::to_string(classes));
  }
  const std::size_t block = (classes - 1) / members;
  std::vector<std::vector<std::size_t>> parts(members);
  std::size_t next = 0;
  for (std::size_t j = 0; j < classes; ++j) {
    if (j == label) continue;
    parts[next / block].push_back(j);
    ++next;
  }
  return parts;
}

PredictionSet disjoint_support_solution(std::size_t members, std::size_t classes, std::size_t label, double f,
                                  const std::vector<std::vector<std::size_t>>& partition) {
  require(members >= 1 && classes >= 2 && label < classes, "disjoint_support_solution: invalid K, L or label");
  require(f >= 0.0 && f <= 1.0, "disjoint_support_solution: confidence must lie in [0,1]");
  if ((classes - 1) % members != 0) {
    fail(ErrorCode::kInvalidArgument, "disjoint_support_solution: K must divide L-1",
         "K=" + std::to_string(members) + " L=" + std::to_string(classes));
  }
  require(partition.size() == members, "disjoint_support_solution: partition must have K blocks");
  const std::size_t block = (classes - 1) / members;
  std::vector<bool> seen(classes, false);
  for (const auto& part : partition) {
    require(part.size() == block, "disjoint_support_solution: every block must hold (L-1)/K indices");
    for (auto j : part) {
      require(j < classes && j != label && !seen[j], "disjoint_support_solution: blocks must partition [L] without the label");
      seen[j] = true;
    }
  }
  PredictionSet out;
  out.label = label;
  out.probs = Tensor(Shape{members, classes});
  const double share = static_cast<double>(members) * (1.0 - f) / static_cast<double>(classes - 1);
  for (std::size_t k = 0; k < members; ++k) {
    out.probs(k, label) = f;
    for (auto j : partition[k]) out.probs(k, j) = share;
  }
  return out;
}

void project_to_simplex(std::span<double> v) {
  require(!v.empty(), "project_to_simplex: empty vector");
  for (double x : v) {
    if (!std::isfinite(x)) fail(ErrorCode::kNumeric, "project_to_simplex: non-finite input");
  }
  std::vector<double> sorted(v.begin(), v.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumulative = 0.0;
  double tau = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    cumulative += sorted[i];
    const double candidate = (cumulative - 1.0) / static_cast<double>(i + 1);
    if (sorted[i] - candidate > 0.0) tau = candidate;
  }
  for (double& x : v) x = std::max(x - tau, 0.0);
}

ng::Var prediction_space_objective(ng::Graph& g, ng::Var probs, const PredictionSpaceProblem& problem) {
  const Tensor& p = probs.value();
  const std::size_t k = p.rows(), l = p.cols();
  const std::vector<std::size_t> labels(k, problem.label);
  ng::Var objective = ng::neg(ng::sum(ng::log(ng::pick_rows(probs, labels))));
  ng::Var ensemble_entropy = ng::entropy(ng::mean_axis(probs, 0));
  if (problem.regularizer == TheoryRegularizer::kJsd) {
    ng::Var jsd = ng::sub(ensemble_entropy, ng::mean(ng::entropy(probs)));
    return ng::sub(objective, ng::scale(jsd, problem.jsd_weight));
  }
  const AdpConfig& cfg = problem.adp;
  if (cfg.alpha != 0.0) objective = ng::sub(objective, ng::scale(ensemble_entropy, cfg.alpha));
  if (cfg.beta != 0.0) {
    require(k <= l - 1, "prediction_space_objective: K must not exceed L-1");
    ng::Var n = ng::l2_normalize_rows(ng::remove_index_rows(probs, labels), kZeroColumnNorm);
    ng::Var gram = ng::add(ng::matmul(n, ng::transpose(n)), g.constant(kernels::scale(Tensor::identity(k), cfg.det_offset)));
    objective = ng::sub(objective, ng::scale(ng::logdet(gram), cfg.beta));
  }
  return objective;
}

double prediction_space_objective(const PredictionSet& preds, const PredictionSpaceProblem& problem) {
  ng::Graph g;
  return prediction_space_objective(g, g.constant(preds.probs), problem).value().item();
}

PredictionTrace optimize_prediction_space(const PredictionSpaceProblem& problem) {
  require(problem.steps >= 1, "optimize_prediction_space: steps must be at least 1");
  require(problem.step_size > 0.0, "optimize_prediction_space: step size must be positive");
  require(problem.members >= 1 && problem.classes >= 2 && problem.label < problem.classes,
          "optimize_prediction_space: invalid K, L or label");
  if (problem.regularizer == TheoryRegularizer::kAdp) problem.adp.validate();
  const std::size_t k = problem.members, l = problem.classes;

  // Interior starting point: softmax of seeded Gaussian noise per member.
  Tensor probs(Shape{k, l});
  for (std::size_t m = 0; m < k; ++m) {
    Rng rng(problem.seed, "theory-init", m);
    for (double& v : probs.row(m)) v = rng.normal();
  }
  probs = kernels::softmax(probs);

  // Objective at a trial point; +inf where the label probability vanishes.
  auto safe_objective = [&](const Tensor& at) {
    for (std::size_t m = 0; m < k; ++m)
      if (!(at(m, problem.label) > 0.0)) return std::numeric_limits<double>::infinity();
    const double v = prediction_space_objective(PredictionSet{at, problem.label}, problem);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };

  PredictionTrace trace;
  auto record = [&](std::size_t step, double objective) {
    trace.steps.push_back(step);
    trace.iterates.push_back(PredictionSet{probs, problem.label});
    trace.objective.push_back(objective);
  };
  constexpr double kArmijo = 1e-4;
  constexpr int kMaxHalvings = 60;
  Tensor trial(probs.shape());
  std::size_t step = 0;
  for (; step < problem.steps; ++step) {
    const Tensor before = probs;
    // Block-coordinate sweep: each member takes a projected gradient step
    // with its own backtracking, the others held fixed.
    for (std::size_t m = 0; m < k; ++m) {
      ng::Graph g;
      ng::Var p = g.leaf(probs, true);
      ng::Var objective = prediction_space_objective(g, p, problem);
      const double value = objective.value().item();
      if (!std::isfinite(value)) {
        fail(ErrorCode::kNumeric, "optimize_prediction_space: objective is not finite", "step=" + std::to_string(step));
      }
      if (m == 0 && step % problem.trace_every == 0) record(step, value);
      g.backward(objective);
      auto grad = g.grad(p).row(m);
      auto current = probs.row(m);
      trial = probs;
      auto candidate = trial.row(m);
      double t = problem.step_size;
      for (int halving = 0; halving < kMaxHalvings; ++halving, t *= 0.5) {
        double decrease = 0.0;
        for (std::size_t j = 0; j < l; ++j) candidate[j] = current[j] - t * grad[j];
        project_to_simplex(candidate);
        for (std::size_t j = 0; j < l; ++j) decrease += grad[j] * (candidate[j] - current[j]);
        if (safe_objective(trial) <= value + kArmijo * decrease) {
          std::copy(candidate.begin(), candidate.end(), current.begin());
          break;
        }
      }
    }
    double moved = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) moved = std::max(moved, std::abs(probs[i] - before[i]));
    if (problem.tolerance > 0.0 && moved <= problem.tolerance) {
      ++step;
      break;
    }
  }
  record(step, prediction_space_objective(PredictionSet{probs, problem.label}, problem));
  return trace;
}

}  // namespace divens
