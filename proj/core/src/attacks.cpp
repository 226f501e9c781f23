#include "divens/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>

#include "divens/error.hpp"
#include "divens/graph.hpp"
#include "divens/rng.hpp"

namespace divens {

namespace {

constexpr std::string_view kMethodNames[] = {"fgsm", "bim", "pgd", "mim", "jsma", "cw", "ead"};
constexpr double kEnsembleLogitFloor = 1e-12;
constexpr double kTanhLimit = 1.0 - 1e-6;
/// The tanh box cannot reach 0 or 1 exactly, so l0 ignores changes at that scale.
constexpr double kL0Tolerance = 1e-6;

std::vector<std::size_t> default_ids(std::size_t n, std::span<const std::size_t> ids) {
  if (!ids.empty()) {
    require(ids.size() == n, "attack: ids must match the batch size");
    return {ids.begin(), ids.end()};
  }
  std::vector<std::size_t> out(n);
  std::iota(out.begin(), out.end(), std::size_t{0});
  return out;
}

void check_batch(const Ensemble& ens, const Tensor& x, std::span<const std::size_t> labels) {
  require(!ens.empty(), "attack: empty ensemble");
  kernels::require_shape(x.rank() == 2 && x.shape()[1] == ens.input_dim(), "attack", "input " + shape_string(x.shape()));
  kernels::require_shape(labels.size() == x.rows(), "attack",
                         "labels=" + std::to_string(labels.size()) + " rows=" + std::to_string(x.rows()));
  for (std::size_t y : labels) {
    if (y >= ens.num_classes()) fail(ErrorCode::kInvalidArgument, "attack: label out of range", std::to_string(y));
  }
}

std::vector<std::size_t> victim_members(const Ensemble& ens, const Victim& victim) {
  if (victim.is_ensemble()) {
    std::vector<std::size_t> all(ens.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }
  if (*victim.member >= ens.size()) {
    fail(ErrorCode::kInvalidArgument, "victim member out of range",
         "member=" + std::to_string(*victim.member) + " K=" + std::to_string(ens.size()));
  }
  return {*victim.member};
}

ng::Var member_logits(ng::Graph& g, const Mlp& mlp, ng::Var x) {
  std::vector<ng::Var> params;
  for (const Tensor* p : mlp.parameters()) params.push_back(g.constant(*p));
  return mlp.logits(g, x, params);
}

/// Victim probabilities as a graph node: F^k, or the plain mean over members.
ng::Var victim_probs(ng::Graph& g, const Ensemble& ens, const Victim& victim, ng::Var x) {
  const auto members = victim_members(ens, victim);
  ng::Var total = ng::softmax(member_logits(g, ens.member(members[0]), x));
  for (std::size_t i = 1; i < members.size(); ++i) total = total + ng::softmax(member_logits(g, ens.member(members[i]), x));
  if (members.size() == 1) return total;
  return ng::scale(total, 1.0 / static_cast<double>(members.size()));
}

/// Pre-softmax scores for the margin loss: member logits, or ln(F_en + 1e-12).
ng::Var victim_scores(ng::Graph& g, const Ensemble& ens, const Victim& victim, ng::Var x) {
  if (!victim.is_ensemble()) return member_logits(g, ens.member(*victim.member), x);
  return ng::log(ng::add_scalar(victim_probs(g, ens, victim, x), kEnsembleLogitFloor));
}

std::size_t best_other(std::span<const double> z, std::size_t cls) {
  std::size_t best = cls == 0 ? 1 : 0;
  for (std::size_t i = 0; i < z.size(); ++i)
    if (i != cls && z[i] > z[best]) best = i;
  return best;
}

/// Row-wise margin loss: targeted max(max_{i!=t} z_i - z_t, -kappa),
/// untargeted max(z_y - max_{i!=y} z_i, -kappa).
ng::Var margin_loss(ng::Var z, std::span<const std::size_t> goals, double kappa, bool targeted) {
  ng::Graph& g = *z.graph;
  const Tensor& zv = z.value();
  const std::size_t n = zv.rows();
  Tensor out(Shape{n});
  std::vector<std::size_t> other(n);
  std::vector<bool> active(n);
  for (std::size_t i = 0; i < n; ++i) {
    other[i] = best_other(zv.row(i), goals[i]);
    const double gap = zv(i, other[i]) - zv(i, goals[i]);
    const double raw = targeted ? gap : -gap;
    active[i] = raw > -kappa;
    out[i] = std::max(raw, -kappa);
  }
  std::vector<std::size_t> cls(goals.begin(), goals.end());
  return g.record("margin_loss", std::move(out), {z.id}, [cls, other, active, targeted](ng::Graph& g, std::size_t self) {
    const std::size_t in = g.inputs(self)[0];
    if (!g.needs_grad(in)) return;
    const Tensor& up = g.upstream(self);
    Tensor& dz = g.grad_buffer(in);
    const double sign = targeted ? 1.0 : -1.0;
    for (std::size_t i = 0; i < cls.size(); ++i) {
      if (!active[i]) continue;
      dz(i, other[i]) += sign * up[i];
      dz(i, cls[i]) -= sign * up[i];
    }
  });
}

bool is_success(std::span<const double> scores, std::size_t label, std::size_t goal, bool targeted) {
  const std::size_t pred = static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
  return targeted ? pred == goal : pred != label;
}

/// Rows that cannot be attacked: a fixed target equal to the label.
std::vector<bool> skipped_rows(std::span<const std::size_t> labels, std::span<const std::size_t> goals, bool targeted) {
  std::vector<bool> skip(labels.size(), false);
  if (targeted)
    for (std::size_t i = 0; i < labels.size(); ++i) skip[i] = labels[i] == goals[i];
  return skip;
}

AdvBatch start_batch(const Tensor& x, std::span<const std::size_t> labels, std::vector<std::size_t> goals,
                     const AttackConfig& cfg) {
  AdvBatch b;
  b.originals = x;
  b.labels.assign(labels.begin(), labels.end());
  b.goals = std::move(goals);
  b.victim = cfg.victim;
  b.method = cfg.method;
  b.targeted = cfg.targeted;
  return b;
}

void finalize(const Ensemble& ens, AdvBatch& b, const std::vector<bool>& skip) {
  const std::size_t n = b.size();
  const Tensor probs = victim_probabilities(ens, b.victim, b.adversarials);
  b.predictions = argmax_rows(probs);
  b.success.assign(n, false);
  b.linf.assign(n, 0.0);
  b.l2.assign(n, 0.0);
  b.l1.assign(n, 0.0);
  b.l0.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!skip[i]) b.success[i] = b.targeted ? b.predictions[i] == b.goals[i] : b.predictions[i] != b.labels[i];
    const auto a = b.adversarials.row(i);
    const auto o = b.originals.row(i);
    double sq = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
      const double d = std::abs(a[j] - o[j]);
      b.linf[i] = std::max(b.linf[i], d);
      b.l1[i] += d;
      sq += d * d;
      if (d > kL0Tolerance) ++b.l0[i];
    }
    b.l2[i] = std::sqrt(sq);
  }
}

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// Shared loop of fgsm/bim/pgd/mim.
AdvBatch sign_attack(const Ensemble& ens, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg,
                     std::uint64_t seed, std::span<const std::size_t> ids_in, std::size_t steps, double step,
                     bool random_init, bool use_momentum) {
  cfg.validate();
  check_batch(ens, x, labels);
  const auto ids = default_ids(x.rows(), ids_in);
  AdvBatch b = start_batch(x, labels, attack_goals(cfg, labels, ens.num_classes(), seed, ids), cfg);
  const auto skip = skipped_rows(labels, b.goals, cfg.targeted);
  const std::size_t n = x.rows(), d = x.cols();
  const double eps = cfg.eps;

  Tensor xa = x;
  if (random_init && eps > 0.0) {
    for (std::size_t i = 0; i < n; ++i) {
      if (skip[i]) continue;
      Rng rng(seed, "pgd-init", ids[i]);
      for (std::size_t j = 0; j < d; ++j) xa(i, j) = clip_ball(x(i, j), x(i, j) + rng.uniform(-eps, eps), eps);
    }
  }
  Tensor momentum(x.shape());
  const double direction = cfg.targeted ? -1.0 : 1.0;
  for (std::size_t s = 0; s < steps; ++s) {
    Tensor grad = adversarial_loss(ens, cfg.victim, xa, b.goals, cfg.loss).grad;
    for (std::size_t i = 0; i < n; ++i) {
      if (skip[i]) continue;
      auto gr = grad.row(i);
      if (use_momentum) {
        double l1 = 0.0;
        for (double v : gr) l1 += std::abs(v);
        auto acc = momentum.row(i);
        for (std::size_t j = 0; j < d; ++j) {
          acc[j] = cfg.momentum * acc[j] + (l1 > 0.0 ? gr[j] / l1 : 0.0);
          gr[j] = acc[j];
        }
      }
      for (std::size_t j = 0; j < d; ++j) xa(i, j) = clip_ball(x(i, j), xa(i, j) + direction * step * sign_of(gr[j]), eps);
    }
  }
  b.adversarials = std::move(xa);
  finalize(ens, b, skip);
  return b;
}

/// cw and ead: Adam over w with x* = (tanh w + 1) / 2. With l1_weight > 0 the
/// perturbation is soft-thresholded after each step at l1_weight * opt_lr * dx/dw.
AdvBatch margin_attack(const Ensemble& ens, const Tensor& x, std::span<const std::size_t> labels,
                       const AttackConfig& cfg, std::uint64_t seed, std::span<const std::size_t> ids_in,
                       double l1_weight) {
  cfg.validate();
  check_batch(ens, x, labels);
  const auto ids = default_ids(x.rows(), ids_in);
  AdvBatch b = start_batch(x, labels, attack_goals(cfg, labels, ens.num_classes(), seed, ids), cfg);
  const auto skip = skipped_rows(labels, b.goals, cfg.targeted);
  const std::size_t n = x.rows(), d = x.cols();

  auto to_w = [](double v) { return std::atanh(std::clamp(2.0 * v - 1.0, -kTanhLimit, kTanhLimit)); };
  Tensor w(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) w[i] = to_w(x[i]);
  Tensor m(x.shape()), v(x.shape());
  const double b1 = 0.9, b2 = 0.999, adam_eps = 1e-8;
  const double tau = l1_weight * cfg.opt_lr;

  Tensor best = x;
  std::vector<double> best_obj(n, std::numeric_limits<double>::infinity());
  std::vector<bool> best_success(n, false);
  b.objective_trace.reserve(cfg.opt_steps);

  for (std::size_t step = 0; step < cfg.opt_steps; ++step) {
    ng::Graph g;
    ng::Var wv = g.leaf(w, true);
    ng::Var xs = ng::scale(ng::add_scalar(ng::tanh(wv), 1.0), 0.5);
    ng::Var z = victim_scores(g, ens, cfg.victim, xs);
    ng::Var f = margin_loss(z, b.goals, cfg.cw_kappa, cfg.targeted);
    ng::Var diff = xs - g.constant(x);
    ng::Var obj = ng::sum_axis(diff * diff, 1) + ng::scale(f, cfg.cw_c);
    g.backward(ng::sum(obj));

    const Tensor& xv = xs.value();
    const Tensor& zv = z.value();
    const Tensor& ov = obj.value();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double l1 = 0.0;
      for (std::size_t j = 0; j < d; ++j) l1 += std::abs(xv(i, j) - x(i, j));
      const double o = ov[i] + l1_weight * l1;
      total += o;
      if (skip[i]) continue;
      const bool ok = is_success(zv.row(i), labels[i], b.goals[i], cfg.targeted);
      // Successful iterates always beat failed ones; ties keep the earlier one.
      if ((ok && !best_success[i]) || (ok == best_success[i] && o < best_obj[i])) {
        best_success[i] = ok;
        best_obj[i] = o;
        std::copy(xv.row(i).begin(), xv.row(i).end(), best.row(i).begin());
      }
    }
    b.objective_trace.push_back(total);

    const Tensor& gw = g.grad(wv);
    const double t = static_cast<double>(step + 1);
    const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * gw[i];
      v[i] = b2 * v[i] + (1.0 - b2) * gw[i] * gw[i];
      w[i] -= cfg.opt_lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + adam_eps);
    }
    if (tau > 0.0) {
      for (std::size_t i = 0; i < w.size(); ++i) {
        // Threshold scaled by dx/dw so saturated pixels can still leave 0 or 1.
        const double th = std::tanh(w[i]);
        const double xi = 0.5 * (th + 1.0);
        w[i] = to_w(x[i] + soft_threshold(xi - x[i], tau * 0.5 * (1.0 - th * th)));
      }
    }
  }
  b.adversarials = std::move(best);
  finalize(ens, b, skip);
  return b;
}

}  // namespace

std::string_view to_string(AttackMethod method) { return kMethodNames[static_cast<int>(method)]; }

AttackMethod parse_attack_method(std::string_view name) {
  for (int i = 0; i < 7; ++i)
    if (kMethodNames[i] == name) return static_cast<AttackMethod>(i);
  fail(ErrorCode::kInvalidArgument, "unknown attack method", std::string(name));
}

std::string_view to_string(AttackLoss loss) {
  return loss == AttackLoss::kEnsembleCrossEntropy ? "ensemble_ce" : "member_sum";
}

AttackLoss parse_attack_loss(std::string_view name) {
  if (name == "ensemble_ce") return AttackLoss::kEnsembleCrossEntropy;
  if (name == "member_sum") return AttackLoss::kMemberSum;
  fail(ErrorCode::kInvalidArgument, "unknown attack loss", std::string(name));
}

std::string Victim::name() const { return member ? "member" + std::to_string(*member) : "ensemble"; }

void AttackConfig::validate() const {
  auto bad = [](const std::string& msg) { fail(ErrorCode::kInvalidArgument, "attack config: " + msg); };
  if (!(eps >= 0.0) || !std::isfinite(eps)) bad("eps must be >= 0");
  if (steps < 1) bad("steps must be >= 1");
  if (step_size && !(*step_size >= 0.0)) bad("step_size must be >= 0");
  if (!(momentum >= 0.0)) bad("momentum must be >= 0");
  if (!(jsma_gamma > 0.0 && jsma_gamma <= 1.0)) bad("jsma_gamma must be in (0, 1]");
  if (!(cw_kappa >= 0.0)) bad("cw_kappa must be >= 0");
  if ((method == AttackMethod::kCw || method == AttackMethod::kEad) && !(cw_c > 0.0)) bad("cw_c must be > 0");
  if (!(ead_beta >= 0.0)) bad("ead_beta must be >= 0");
  if (!(opt_lr > 0.0)) bad("opt_lr must be > 0");
  if (opt_steps < 1) bad("opt_steps must be >= 1");
}

double AdvBatch::success_rate() const {
  if (success.empty()) return 0.0;
  return static_cast<double>(std::count(success.begin(), success.end(), true)) / static_cast<double>(success.size());
}

Tensor victim_probabilities(const Ensemble& ens, const Victim& victim, const Tensor& x) {
  if (victim.is_ensemble()) return ens.predict_ensemble(x);
  victim_members(ens, victim);
  return ens.predict_member(*victim.member, x);
}

InputGradient adversarial_loss(const Ensemble& ens, const Victim& victim, const Tensor& x,
                               std::span<const std::size_t> classes, AttackLoss loss) {
  check_batch(ens, x, classes);
  const auto members = victim_members(ens, victim);
  const std::size_t n = x.rows();
  ng::Graph g;
  ng::Var xv = g.leaf(x, true);
  std::vector<ng::Var> picked;
  for (std::size_t k : members) {
    picked.push_back(ng::pick_rows(ng::log_softmax(member_logits(g, ens.member(k), xv)), classes));
  }
  ng::Var per_example;
  if (picked.size() == 1) {
    per_example = ng::neg(picked[0]);
  } else if (loss == AttackLoss::kMemberSum) {
    ng::Var total = picked[0];
    for (std::size_t i = 1; i < picked.size(); ++i) total = total + picked[i];
    per_example = ng::neg(total);
  } else {
    // -ln F_en_y = ln K - logsumexp_k ln F^k_y
    std::vector<ng::Var> columns;
    for (ng::Var p : picked) columns.push_back(ng::reshape(p, Shape{n, 1}));
    ng::Var lse = ng::logsumexp(ng::concat(columns, 1));
    per_example = ng::add_scalar(ng::neg(lse), std::log(static_cast<double>(picked.size())));
  }
  g.backward(ng::sum(per_example));
  InputGradient out;
  out.loss.assign(per_example.value().data().begin(), per_example.value().data().end());
  out.grad = g.grad(xv);
  return out;
}

InputGradient adversarial_loss(const Ensemble& ens, const Victim& victim, const Tensor& x,
                               std::span<const std::size_t> labels, bool targeted, std::span<const std::size_t> targets,
                               AttackLoss loss) {
  if (!targeted) return adversarial_loss(ens, victim, x, labels, loss);
  require(targets.size() == labels.size(), "adversarial_loss: one target per example");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (targets[i] == labels[i]) {
      fail(ErrorCode::kInvalidArgument, "adversarial_loss: target equals the true label",
           "row=" + std::to_string(i) + " class=" + std::to_string(labels[i]));
    }
  }
  return adversarial_loss(ens, victim, x, targets, loss);
}

Tensor clip_ball(const Tensor& x, const Tensor& candidate, double eps) {
  kernels::require_shape(x.shape() == candidate.shape(), "clip_ball",
                         shape_string(x.shape()) + " vs " + shape_string(candidate.shape()));
  Tensor out = candidate;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = clip_ball(x[i], candidate[i], eps);
  return out;
}

double clip_ball(double x, double candidate, double eps) {
  return std::clamp(candidate, std::max(0.0, x - eps), std::min(1.0, x + eps));
}

double cw_margin(std::span<const double> logits, std::size_t cls, double kappa) {
  require(logits.size() >= 2 && cls < logits.size(), "cw_margin: need >= 2 logits and a valid class");
  return std::max(logits[best_other(logits, cls)] - logits[cls], -kappa);
}

double soft_threshold(double v, double tau) {
  if (v > tau) return v - tau;
  if (v < -tau) return v + tau;
  return 0.0;
}

double jsma_saliency(double d_target, double d_others) {
  if (d_target < 0.0 || d_others > 0.0) return 0.0;
  return d_target * std::abs(d_others);
}

std::vector<std::size_t> attack_goals(const AttackConfig& cfg, std::span<const std::size_t> labels,
                                      std::size_t num_classes, std::uint64_t seed, std::span<const std::size_t> ids) {
  if (!cfg.targeted) return {labels.begin(), labels.end()};
  require(num_classes >= 2, "attack_goals: need at least two classes");
  if (cfg.target_label) {
    if (*cfg.target_label >= num_classes) {
      fail(ErrorCode::kInvalidArgument, "target label out of range", std::to_string(*cfg.target_label));
    }
    return std::vector<std::size_t>(labels.size(), *cfg.target_label);
  }
  require(ids.size() == labels.size(), "attack_goals: one id per example");
  std::vector<std::size_t> goals(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    Rng rng(seed, "target", ids[i]);
    goals[i] = (labels[i] + 1 + rng.below(num_classes - 1)) % num_classes;
  }
  return goals;
}

AdvBatch fgsm(const Ensemble& ens, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg,
              std::uint64_t seed, std::span<const std::size_t> ids) {
  return sign_attack(ens, x, labels, cfg, seed, ids, 1, cfg.eps, false, false);
}

AdvBatch bim(const Ensemble& ens, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg,
             std::uint64_t seed, std::span<const std::size_t> ids) {
  return sign_attack(ens, x, labels, cfg, seed, ids, cfg.steps, cfg.effective_step(), false, false);
}

AdvBatch pgd(const Ensemble& ens, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg,
             std::uint64_t seed, std::span<const std::size_t> ids) {
  return sign_attack(ens, x, labels, cfg, seed, ids, cfg.steps, cfg.effective_step(), cfg.random_init, false);
}

AdvBatch mim(const Ensemble& ens, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg,
             std::uint64_t seed, std::span<const std::size_t> ids) {
  return sign_attack(ens, x, labels, cfg, seed, ids, cfg.steps, cfg.effective_step(), false, true);
}

AdvBatch jsma(const Ensemble& ens, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg,
              std::uint64_t seed, std::span<const std::size_t> ids_in) {
  cfg.validate();
  check_batch(ens, x, labels);
  const auto ids = default_ids(x.rows(), ids_in);
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<std::size_t> goals = attack_goals(cfg, labels, ens.num_classes(), seed, ids);
  AdvBatch b = start_batch(x, labels, goals, cfg);
  const auto skip = skipped_rows(labels, goals, cfg.targeted);

  // The class whose probability the attack raises: target, or runner-up.
  std::vector<std::size_t> raise = goals;
  if (!cfg.targeted) {
    const Tensor p = victim_probabilities(ens, cfg.victim, x);
    for (std::size_t i = 0; i < n; ++i) raise[i] = best_other(p.row(i), labels[i]);
  }
  const auto budget = static_cast<std::size_t>(std::ceil(cfg.jsma_gamma * static_cast<double>(d)));
  Tensor xa = x;
  std::vector<std::vector<bool>> modified(n, std::vector<bool>(d, false));
  std::vector<std::size_t> count(n, 0);
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < n; ++i)
    if (!skip[i]) active.push_back(i);

  while (!active.empty()) {
    const std::size_t m = active.size();
    Tensor sub(Shape{m, d});
    std::vector<std::size_t> sub_raise(m);
    for (std::size_t r = 0; r < m; ++r) {
      std::copy(xa.row(active[r]).begin(), xa.row(active[r]).end(), sub.row(r).begin());
      sub_raise[r] = raise[active[r]];
    }
    ng::Graph g;
    ng::Var xv = g.leaf(sub, true);
    ng::Var probs = victim_probs(g, ens, cfg.victim, xv);
    ng::Var target_mass = ng::sum(ng::pick_rows(probs, sub_raise));
    g.backward(target_mass);
    const Tensor d_target = g.grad(xv);
    g.zero_grad();
    g.backward(ng::sum(probs) - target_mass);
    const Tensor& d_others = g.grad(xv);

    std::vector<std::size_t> next;
    for (std::size_t r = 0; r < m; ++r) {
      const std::size_t i = active[r];
      if (is_success(probs.value().row(r), labels[i], goals[i], cfg.targeted) || count[i] >= budget) continue;
      double best_s = 0.0;
      std::size_t best_j = d;
      for (std::size_t j = 0; j < d; ++j) {
        if (modified[i][j]) continue;
        if (cfg.jsma_theta > 0.0 ? xa(i, j) >= 1.0 : xa(i, j) <= 0.0) continue;
        const double s = jsma_saliency(d_target(r, j), d_others(r, j));
        if (s > best_s) {
          best_s = s;
          best_j = j;
        }
      }
      if (best_j == d) continue;  // saliency map is zero everywhere
      xa(i, best_j) = std::clamp(xa(i, best_j) + cfg.jsma_theta, 0.0, 1.0);
      modified[i][best_j] = true;
      ++count[i];
      next.push_back(i);
    }
    active = std::move(next);
  }
  b.adversarials = std::move(xa);
  finalize(ens, b, skip);
  return b;
}

AdvBatch cw(const Ensemble& ens, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg,
            std::uint64_t seed, std::span<const std::size_t> ids) {
  return margin_attack(ens, x, labels, cfg, seed, ids, 0.0);
}

AdvBatch ead(const Ensemble& ens, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg,
             std::uint64_t seed, std::span<const std::size_t> ids) {
  return margin_attack(ens, x, labels, cfg, seed, ids, cfg.ead_beta);
}

AdvBatch run_attack(const Ensemble& ens, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg,
                    std::uint64_t seed, std::span<const std::size_t> ids) {
  switch (cfg.method) {
    case AttackMethod::kFgsm: return fgsm(ens, x, labels, cfg, seed, ids);
    case AttackMethod::kBim: return bim(ens, x, labels, cfg, seed, ids);
    case AttackMethod::kPgd: return pgd(ens, x, labels, cfg, seed, ids);
    case AttackMethod::kMim: return mim(ens, x, labels, cfg, seed, ids);
    case AttackMethod::kJsma: return jsma(ens, x, labels, cfg, seed, ids);
    case AttackMethod::kCw: return cw(ens, x, labels, cfg, seed, ids);
    case AttackMethod::kEad: return ead(ens, x, labels, cfg, seed, ids);
  }
  fail(ErrorCode::kInvalidArgument, "unknown attack method");
}

AdvBatch attack_dataset(const Ensemble& ens, const Dataset& data, const AttackConfig& cfg, std::uint64_t seed,
                        std::size_t chunk, std::size_t workers) {
  cfg.validate();
  require(!data.empty(), "attack_dataset: empty dataset");
  require(chunk >= 1 && workers >= 1, "attack_dataset: chunk and workers must be >= 1");
  const std::size_t n = data.size();
  const std::size_t chunks = (n + chunk - 1) / chunk;
  std::vector<AdvBatch> parts(chunks);
  std::exception_ptr error;
  std::mutex error_mutex;

  auto work = [&](std::size_t w) {
    for (std::size_t c = w; c < chunks; c += workers) {
      try {
        const std::size_t lo = c * chunk, hi = std::min(n, lo + chunk);
        std::vector<std::size_t> ids(hi - lo);
        std::iota(ids.begin(), ids.end(), lo);
        const Dataset part = data.subset(ids);
        parts[c] = run_attack(ens, part.features, part.labels, cfg, seed, ids);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  const std::size_t threads = std::min(workers, chunks);
  if (threads <= 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);

  AdvBatch out = start_batch(data.features, data.labels, {}, cfg);
  out.adversarials = Tensor(data.features.shape());
  std::size_t row = 0;
  for (const AdvBatch& p : parts) {
    std::copy(p.adversarials.data().begin(), p.adversarials.data().end(),
              out.adversarials.data().begin() + static_cast<std::ptrdiff_t>(row * data.dim()));
    row += p.size();
    out.goals.insert(out.goals.end(), p.goals.begin(), p.goals.end());
    out.predictions.insert(out.predictions.end(), p.predictions.begin(), p.predictions.end());
    out.success.insert(out.success.end(), p.success.begin(), p.success.end());
    out.linf.insert(out.linf.end(), p.linf.begin(), p.linf.end());
    out.l2.insert(out.l2.end(), p.l2.begin(), p.l2.end());
    out.l1.insert(out.l1.end(), p.l1.begin(), p.l1.end());
    out.l0.insert(out.l0.end(), p.l0.begin(), p.l0.end());
    if (out.objective_trace.empty()) {
      out.objective_trace = p.objective_trace;
    } else {
      for (std::size_t s = 0; s < p.objective_trace.size(); ++s) out.objective_trace[s] += p.objective_trace[s];
    }
  }
  return out;
}

}  // namespace divens
