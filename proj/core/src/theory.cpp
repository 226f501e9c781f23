#include "divens/theory.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "divens/error.hpp"

namespace divens {

namespace {

std::string fixed(double v, int digits = 6) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

double ensemble_label_mass(const PredictionSet& s) {
  double total = 0.0;
  for (std::size_t k = 0; k < s.members(); ++k) total += s.probs(k, s.label);
  return total / static_cast<double>(s.members());
}

}  // namespace

PredictionTrace best_of_restarts(PredictionSpaceProblem problem, std::size_t restarts) {
  require(restarts >= 1, "best_of_restarts: need at least one start");
  const std::uint64_t base = problem.seed;
  PredictionTrace best;
  for (std::size_t r = 0; r < restarts; ++r) {
    problem.seed = base + r;
    PredictionTrace t = optimize_prediction_space(problem);
    if (best.objective.empty() || t.objective.back() < best.objective.back()) best = std::move(t);
  }
  return best;
}

TheoryCheck check_one_hot_optimum(const TheoryOptions& opt) {
  TheoryCheck c{"one-hot optimum (alpha=0, beta=0.5, K=2, L=4)", true, ""};
  double worst = 1.0;
  for (std::size_t s = 0; s < opt.seeds; ++s) {
    PredictionSpaceProblem p;
    p.members = 2;
    p.classes = 4;
    p.adp.alpha = 0.0;
    p.adp.beta = 0.5;
    p.seed = opt.seed + s;
    const PredictionSet f = optimize_prediction_space(p).final();
    for (std::size_t k = 0; k < f.members(); ++k) {
      const auto row = f.probs.row(k);
      const auto top = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      worst = std::min(worst, row[f.label]);
      if (top != f.label || !(row[f.label] > 0.99)) c.passed = false;
    }
  }
  c.detail = "min F_y^k over " + std::to_string(opt.seeds) + " seeds = " + fixed(worst);
  return c;
}

TheoryCheck check_confidence_optimum(const TheoryOptions& opt) {
  TheoryCheck c{"confidence optimum (alpha=2, beta=0, K=3, L=10)", true, ""};
  PredictionSpaceProblem p;
  p.members = 3;
  p.classes = 10;
  p.adp.alpha = 2.0;
  p.adp.beta = 0.0;
  p.seed = opt.seed;
  const PredictionSet f = optimize_prediction_space(p).final();
  double lo = 1.0, hi = 0.0;
  for (std::size_t k = 0; k < f.members(); ++k) {
    lo = std::min(lo, f.probs(k, f.label));
    hi = std::max(hi, f.probs(k, f.label));
  }
  const double fen = ensemble_label_mass(f);
  const double residual = std::abs(confidence_residual(p.members, p.classes, p.adp.alpha, fen));
  const double alpha_example = solve_alpha(5, 1000, 0.9);
  c.passed = hi - lo < 1e-2 && residual < 0.05 && std::abs(alpha_example - 0.61) <= 0.01;
  c.detail = "F_en_y = " + fixed(fen) + ", spread = " + fixed(hi - lo, 8) + ", residual = " + fixed(residual, 8) +
             ", alpha(K=5, L=1000, 0.9) = " + fixed(alpha_example, 4);
  return c;
}

TheoryCheck check_orthogonal_optimum(const TheoryOptions& opt) {
  TheoryCheck c{"orthogonal optimum (alpha=2, beta=0.5, K=3, L=10)", true, ""};
  PredictionSpaceProblem p;
  p.members = 3;
  p.classes = 10;
  p.adp.alpha = 2.0;
  p.adp.beta = 0.5;
  p.seed = opt.seed;
  const PredictionSet f = best_of_restarts(p, opt.restarts).final();
  const NonMaxMatrix m = nonmax_matrix(f);
  double max_dot = 0.0;
  for (std::size_t a = 0; a < p.members; ++a) {
    for (std::size_t b = a + 1; b < p.members; ++b) {
      double dot = 0.0;
      for (std::size_t i = 0; i + 1 < p.classes; ++i) dot += m.columns(i, a) * m.columns(i, b);
      max_dot = std::max(max_dot, std::abs(dot));
    }
  }
  const double ed = ensemble_diversity(m, p.adp.det_offset);
  const double fen = ensemble_label_mass(f);
  const double share = static_cast<double>(p.members) * (1.0 - fen) / static_cast<double>(p.classes - 1);
  double worst_share = 0.0;
  for (std::size_t k = 0; k < p.members; ++k) {
    for (std::size_t j = 0; j < p.classes; ++j) {
      if (j == f.label || f.probs(k, j) <= 1e-6) continue;
      worst_share = std::max(worst_share, std::abs(f.probs(k, j) - share));
    }
  }
  c.passed = max_dot < 0.05 && ed > 0.9 && worst_share < 0.02;
  c.detail = "max |dot| = " + fixed(max_dot, 8) + ", ED = " + fixed(ed) + ", share = " + fixed(share) +
             ", max share error = " + fixed(worst_share, 8);
  return c;
}

TheoryCheck check_jsd_boundary(const TheoryOptions& opt) {
  TheoryCheck c{"jsd boundary (lambda=2, K=2, L=3)", true, ""};
  double worst = 0.0;
  for (std::size_t s = 0; s < opt.seeds; ++s) {
    PredictionSpaceProblem p;
    p.members = 2;
    p.classes = 3;
    p.regularizer = TheoryRegularizer::kJsd;
    p.jsd_weight = 2.0;
    p.seed = opt.seed + s;
    const PredictionSet f = optimize_prediction_space(p).final();
    const double smallest = *std::min_element(f.probs.data().begin(), f.probs.data().end());
    worst = std::max(worst, smallest);
    if (!(smallest < 1e-4)) c.passed = false;
  }
  c.detail = "largest per-seed min coordinate = " + fixed(worst, 8);
  return c;
}

std::vector<TheoryCheck> run_theory_suite(const TheoryOptions& opt) {
  return {check_one_hot_optimum(opt), check_confidence_optimum(opt), check_orthogonal_optimum(opt),
          check_jsd_boundary(opt)};
}

}  // namespace divens
