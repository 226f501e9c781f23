#include "divens/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "divens/error.hpp"
#include "divens/graph.hpp"
#include "divens/rng.hpp"

namespace divens {

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  Tensor out(Shape{rows.size(), x.cols()});
  for (std::size_t r = 0; r < rows.size(); ++r) std::copy(x.row(rows[r]).begin(), x.row(rows[r]).end(), out.row(r).begin());
  return out;
}

/// Mean CE of each member over a dataset at its training temperature.
std::vector<double> validation_loss(const Ensemble& ens, const Dataset& val) {
  std::vector<double> out;
  for (const Mlp& m : ens.members()) {
    Tensor z = m.logits(val.features);
    if (m.config().temperature != 1.0) z = kernels::scale(z, 1.0 / m.config().temperature);
    const Tensor logp = kernels::log_softmax(z);
    double total = 0.0;
    for (std::size_t i = 0; i < val.size(); ++i) total -= logp(i, val.labels[i]);
    out.push_back(total / static_cast<double>(val.size()));
  }
  return out;
}

}  // namespace

void adam_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads, AdamState& state, double lr,
               const AdamOptions& o) {
  kernels::require_shape(params.size() == grads.size(), "adam_step",
                         "params=" + std::to_string(params.size()) + " grads=" + std::to_string(grads.size()));
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  kernels::require_shape(state.m.size() == params.size(), "adam_step", "state does not match parameter count");
  for (std::size_t i = 0; i < params.size(); ++i) {
    kernels::require_shape(params[i]->shape() == grads[i]->shape() && params[i]->shape() == state.m[i].shape(),
                           "adam_step",
                           "param " + shape_string(params[i]->shape()) + " grad " + shape_string(grads[i]->shape()));
  }
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(o.beta1, t), c2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * g[j];
      v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * g[j] * g[j];
      p[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + o.eps);
    }
  }
}

void AdvTConfig::validate() const {
  if (attack != AttackMethod::kFgsm && attack != AttackMethod::kPgd) {
    fail(ErrorCode::kInvalidArgument, "advt: attack must be fgsm or pgd", std::string(to_string(attack)));
  }
  if (!(eps_lo >= 0.0 && eps_lo <= eps_hi && eps_hi < 1.0)) {
    fail(ErrorCode::kInvalidArgument, "advt: eps range must satisfy 0 <= lo <= hi < 1",
         "lo=" + std::to_string(eps_lo) + " hi=" + std::to_string(eps_hi));
  }
  if (steps < 1) fail(ErrorCode::kInvalidArgument, "advt: steps must be >= 1");
}

void TrainConfig::validate() const {
  auto bad = [](const std::string& msg) { fail(ErrorCode::kInvalidArgument, "train config: " + msg); };
  if (!(learning_rate > 0.0)) bad("learning_rate must be > 0");
  for (double r : member_learning_rates)
    if (!(r > 0.0)) bad("member learning rates must be > 0");
  if (batch_size < 1) bad("batch_size must be >= 1");
  if (epochs < 1) bad("epochs must be >= 1");
  if (!(freeze_tolerance >= 0.0)) bad("freeze_tolerance must be >= 0");
  if (freeze_patience < 1) bad("freeze_patience must be >= 1");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) bad("validation_fraction must be in [0, 1)");
  adp.validate();
  if (advt) advt->validate();
}

double TrainConfig::rate_for(std::size_t member) const {
  if (member_learning_rates.empty()) return learning_rate;
  if (member >= member_learning_rates.size()) {
    fail(ErrorCode::kInvalidArgument, "train config: missing learning rate for member", std::to_string(member));
  }
  return member_learning_rates[member];
}

AugmentedBatch advt_augment(const Tensor& x, std::span<const std::size_t> labels, const Ensemble& ens,
                            const AdvTConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t n = x.rows(), d = x.cols();
  Rng rng(seed, "advt");
  std::vector<double> eps(n);
  for (double& e : eps) e = cfg.eps_lo == cfg.eps_hi ? cfg.eps_lo : rng.uniform(cfg.eps_lo, cfg.eps_hi);

  Tensor adv = x;
  const bool iterative = cfg.attack == AttackMethod::kPgd;
  if (iterative) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) adv(i, j) = clip_ball(x(i, j), x(i, j) + rng.uniform(-eps[i], eps[i]), eps[i]);
  }
  const std::size_t steps = iterative ? cfg.steps : 1;
  for (std::size_t s = 0; s < steps; ++s) {
    const Tensor grad = adversarial_loss(ens, Victim::ensemble(), adv, labels).grad;
    for (std::size_t i = 0; i < n; ++i) {
      const double step = iterative ? eps[i] / static_cast<double>(steps) : eps[i];
      for (std::size_t j = 0; j < d; ++j) {
        const double g = grad(i, j);
        const double sign = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
        adv(i, j) = clip_ball(x(i, j), adv(i, j) + step * sign, eps[i]);
      }
    }
  }

  AugmentedBatch out;
  out.features = Tensor(Shape{2 * n, d});
  out.labels.assign(labels.begin(), labels.end());
  out.labels.insert(out.labels.end(), labels.begin(), labels.end());
  std::copy(x.data().begin(), x.data().end(), out.features.data().begin());
  for (std::size_t i = 0; i < n; ++i) {
    auto row = adv.row(i);
    const bool finite = std::all_of(row.begin(), row.end(), [](double v) { return std::isfinite(v); });
    if (!finite) ++out.fallbacks;
    const auto src = finite ? row : x.row(i);
    std::copy(src.begin(), src.end(), out.features.row(n + i).begin());
  }
  return out;
}

TrainReport adp_train(Ensemble& ens, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) fail(ErrorCode::kInvalidArgument, "adp_train: dataset is empty");
  data.validate();
  require(!ens.empty(), "adp_train: ensemble is empty");
  if (data.dim() != ens.input_dim()) {
    fail(ErrorCode::kShapeMismatch, "adp_train: feature dimension does not match the ensemble",
         "data=" + std::to_string(data.dim()) + " model=" + std::to_string(ens.input_dim()));
  }
  for (std::size_t y : data.labels) {
    if (y >= ens.num_classes()) fail(ErrorCode::kInvalidArgument, "adp_train: label out of range", std::to_string(y));
  }
  const std::size_t k_members = ens.size();
  const std::size_t classes = ens.num_classes();
  for (std::size_t k = 0; k < k_members; ++k) cfg.rate_for(k);

  Dataset train = data;
  Dataset val;
  const bool freezing = cfg.validation_fraction > 0.0;
  if (freezing) {
    auto parts = split_fraction(data, cfg.validation_fraction, derive_seed(cfg.seed, "validation"));
    val = std::move(parts.first);
    train = std::move(parts.second);
    if (val.empty() || train.empty()) fail(ErrorCode::kInvalidArgument, "adp_train: dataset too small to split");
  }

  std::vector<AdamState> adam(k_members);
  std::vector<bool> active(k_members, true);
  std::vector<double> best_val(k_members, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> stall(k_members, 0);
  TrainReport report;
  report.frozen_at.assign(k_members, std::nullopt);
  bool first_batch = true;
  std::uint64_t batch_counter = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (std::none_of(active.begin(), active.end(), [](bool a) { return a; })) break;
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle(cfg.seed, "shuffle", epoch);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    EpochRecord rec;
    rec.epoch = epoch;
    std::vector<std::size_t> member_correct(k_members, 0);
    std::size_t ensemble_correct = 0, seen = 0, batches = 0;
    double objective_sum = 0.0;
    std::vector<double> log_div;

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_counter) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> rows(order.data() + start, stop - start);
      Tensor xb = gather_rows(train.features, rows);
      std::vector<std::size_t> yb;
      for (std::size_t r : rows) yb.push_back(train.labels[r]);
      const std::size_t clean = yb.size();
      if (cfg.advt) {
        AugmentedBatch aug = advt_augment(xb, yb, ens, *cfg.advt, derive_seed(cfg.seed, "advt-batch", batch_counter));
        xb = std::move(aug.features);
        yb = std::move(aug.labels);
        rec.advt_fallbacks += aug.fallbacks;
      }

      ng::Graph g;
      ng::Var input = g.constant(xb);
      std::vector<std::vector<ng::Var>> leaves(k_members);
      std::vector<ng::Var> logits;
      for (std::size_t k = 0; k < k_members; ++k) {
        const Mlp& m = ens.member(k);
        for (const Tensor* p : m.parameters()) leaves[k].push_back(g.leaf(*p, active[k]));
        ng::Var z = m.logits(g, input, leaves[k]);
        if (m.config().temperature != 1.0) z = ng::scale(z, 1.0 / m.config().temperature);
        logits.push_back(z);
      }
      AdpTerms terms = adp_objective_terms(g, logits, yb, cfg.adp);
      const double loss = terms.objective.value().item();
      if (!std::isfinite(loss)) {
        fail(ErrorCode::kNumeric, "adp_train: non-finite loss",
             "epoch=" + std::to_string(epoch) + " batch=" + std::to_string(start / cfg.batch_size));
      }
      if (first_batch) {
        report.initial_objective = loss;
        first_batch = false;
      }
      objective_sum += loss;
      ++batches;

      // Statistics on the clean rows, before this batch's update.
      std::vector<Tensor> probs;
      for (const ng::Var& z : logits) probs.push_back(kernels::softmax(z.value()));
      const Tensor mean = average_predictions(probs);
      const auto ens_pred = argmax_rows(mean);
      for (std::size_t k = 0; k < k_members; ++k) {
        const auto pred = argmax_rows(probs[k]);
        for (std::size_t i = 0; i < clean; ++i) member_correct[k] += pred[i] == yb[i];
      }
      for (std::size_t i = 0; i < clean; ++i) ensemble_correct += ens_pred[i] == yb[i];
      seen += clean;
      if (k_members <= classes - 1) {
        for (std::size_t i = 0; i < clean; ++i) {
          PredictionSet set{Tensor(Shape{k_members, classes}), yb[i]};
          for (std::size_t k = 0; k < k_members; ++k)
            std::copy(probs[k].row(i).begin(), probs[k].row(i).end(), set.probs.row(k).begin());
          log_div.push_back(log_ensemble_diversity(nonmax_matrix(set), cfg.adp.det_offset));
        }
      }

      g.backward(terms.objective);
      for (std::size_t k = 0; k < k_members; ++k) {
        if (!active[k]) continue;
        std::vector<Tensor*> params = ens.member(k).parameters();
        std::vector<const Tensor*> grads;
        for (const ng::Var& leaf : leaves[k]) grads.push_back(&g.grad(leaf));
        adam_step(params, grads, adam[k], cfg.rate_for(k));
      }
    }

    rec.mean_objective = objective_sum / static_cast<double>(batches);
    for (std::size_t k = 0; k < k_members; ++k)
      rec.member_accuracy.push_back(static_cast<double>(member_correct[k]) / static_cast<double>(seen));
    rec.ensemble_accuracy = static_cast<double>(ensemble_correct) / static_cast<double>(seen);
    rec.median_log_diversity = median(std::move(log_div));

    if (freezing) {
      rec.validation_loss = validation_loss(ens, val);
      for (std::size_t k = 0; k < k_members; ++k) {
        if (!active[k]) continue;
        if (rec.validation_loss[k] < best_val[k] - cfg.freeze_tolerance) {
          best_val[k] = rec.validation_loss[k];
          stall[k] = 0;
        } else if (++stall[k] >= cfg.freeze_patience) {
          active[k] = false;
          report.frozen_at[k] = epoch;
        }
      }
    }
    for (std::size_t k = 0; k < k_members; ++k)
      if (active[k]) rec.active.push_back(k);
    report.epochs.push_back(std::move(rec));
  }
  return report;
}

}  // namespace divens
