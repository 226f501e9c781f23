#include "divens/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <ostream>

#include "divens/diversity.hpp"
#include "divens/error.hpp"

namespace divens {

namespace {

void require_nonempty(const Dataset& data, const char* op) {
  if (data.empty()) fail(ErrorCode::kInvalidArgument, std::string(op) + ": dataset is empty");
}

PredictionSet stack_row(const std::vector<Tensor>& members, std::size_t row, std::size_t label) {
  const std::size_t k = members.size(), l = members[0].cols();
  PredictionSet set{Tensor(Shape{k, l}), label};
  for (std::size_t m = 0; m < k; ++m) std::copy(members[m].row(row).begin(), members[m].row(row).end(), set.probs.row(m).begin());
  return set;
}

}  // namespace

double accuracy_of(const Tensor& probs, std::span<const std::size_t> labels) {
  require(probs.rank() == 2 && probs.rows() == labels.size() && !labels.empty(), "accuracy: predictions and labels disagree");
  const auto pred = argmax_rows(probs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += pred[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

AccuracyReport accuracy(const Ensemble& ens, const Dataset& data) {
  require_nonempty(data, "accuracy");
  AccuracyReport r;
  const auto members = ens.predict_members(data.features);
  for (const Tensor& p : members) r.members.push_back(accuracy_of(p, data.labels));
  r.ensemble = accuracy_of(average_predictions(members), data.labels);
  return r;
}

double robust_accuracy(const Ensemble& ens, const Dataset& data, const AttackConfig& attack, std::uint64_t seed,
                       std::size_t workers) {
  require_nonempty(data, "robust_accuracy");
  const AdvBatch adv = attack_dataset(ens, data, attack, seed, 250, workers);
  return accuracy_of(ens.predict_ensemble(adv.adversarials), data.labels);
}

std::string_view to_string(TransferMode mode) {
  return mode == TransferMode::kUntargetedAccuracy ? "untargeted_accuracy" : "targeted_success_rate";
}

TransferMatrix transfer_matrix(const Ensemble& ens, const Dataset& data, const AttackConfig& attack, TransferMode mode,
                               std::uint64_t seed, std::size_t workers) {
  require_nonempty(data, "transfer_matrix");
  if (ens.size() < 2) fail(ErrorCode::kInvalidArgument, "transfer_matrix: needs at least two members");
  TransferMatrix out;
  out.members = ens.size();
  out.mode = mode;
  out.attack = attack;
  out.attack.targeted = mode == TransferMode::kTargetedSuccess;
  out.values.assign(out.members * out.members, 0.0);
  for (std::size_t i = 0; i < out.members; ++i) {
    AttackConfig cfg = out.attack;
    cfg.victim = Victim::single(i);
    const AdvBatch adv = attack_dataset(ens, data, cfg, seed, 250, workers);
    for (std::size_t j = 0; j < out.members; ++j) {
      const auto pred = argmax_rows(ens.predict_member(j, adv.adversarials));
      std::size_t hits = 0, counted = 0;
      for (std::size_t r = 0; r < pred.size(); ++r) {
        if (out.attack.targeted) {
          if (adv.goals[r] == adv.labels[r]) continue;
          hits += pred[r] == adv.goals[r];
        } else {
          hits += pred[r] == adv.labels[r];
        }
        ++counted;
      }
      out.values[i * out.members + j] = counted ? static_cast<double>(hits) / static_cast<double>(counted) : 0.0;
    }
  }
  return out;
}

double detection_score(const Tensor& member_probs, double det_offset) {
  std::vector<Tensor> members;
  for (std::size_t k = 0; k < member_probs.rows(); ++k) {
    members.push_back(Tensor(Shape{1, member_probs.cols()}, {member_probs.row(k).begin(), member_probs.row(k).end()}));
  }
  const std::size_t guess = argmax_rows(average_predictions(members))[0];
  return ensemble_diversity(nonmax_matrix(PredictionSet{member_probs, guess}), det_offset);
}

std::vector<double> detection_scores(const Ensemble& ens, const Tensor& x, double det_offset) {
  const auto members = ens.predict_members(x);
  const auto guess = argmax_rows(average_predictions(members));
  std::vector<double> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    out[i] = ensemble_diversity(nonmax_matrix(stack_row(members, i, guess[i])), det_offset);
  }
  return out;
}

double detection_score(const Ensemble& ens, std::span<const double> x, double det_offset) {
  const Tensor row(Shape{1, x.size()}, std::vector<double>(x.begin(), x.end()));
  return detection_scores(ens, row, det_offset)[0];
}

RocCurve roc_auc(std::span<const double> clean, std::span<const double> adv) {
  if (clean.empty() || adv.empty()) fail(ErrorCode::kInvalidArgument, "roc_auc: both score sets must be non-empty");
  std::vector<double> c(clean.begin(), clean.end()), a(adv.begin(), adv.end());
  std::sort(c.begin(), c.end());
  std::sort(a.begin(), a.end());
  std::vector<double> all = c;
  all.insert(all.end(), a.begin(), a.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());

  RocCurve roc;
  const double inf = std::numeric_limits<double>::infinity();
  roc.thresholds.push_back(-inf);
  roc.thresholds.insert(roc.thresholds.end(), all.begin(), all.end());
  roc.thresholds.push_back(inf);
  const double nc = static_cast<double>(c.size()), na = static_cast<double>(a.size());
  for (double t : roc.thresholds) {
    const auto below_a = std::lower_bound(a.begin(), a.end(), t) - a.begin();
    const auto below_c = std::lower_bound(c.begin(), c.end(), t) - c.begin();
    roc.tpr.push_back(t == inf ? 1.0 : static_cast<double>(below_a) / na);
    roc.fpr.push_back(t == inf ? 1.0 : static_cast<double>(below_c) / nc);
  }
  for (std::size_t i = 1; i < roc.thresholds.size(); ++i) {
    roc.auc += (roc.fpr[i] - roc.fpr[i - 1]) * (roc.tpr[i] + roc.tpr[i - 1]) * 0.5;
  }
  return roc;
}

std::vector<double> log_diversities(const Ensemble& ens, const Tensor& x, std::span<const std::size_t> labels,
                                    double det_offset) {
  require(labels.size() == x.rows(), "log_diversities: one label per row");
  const auto members = ens.predict_members(x);
  std::vector<double> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    out[i] = log_ensemble_diversity(nonmax_matrix(stack_row(members, i, labels[i])), det_offset);
  }
  return out;
}

double median_of(std::span<const double> values) {
  require(!values.empty(), "median: no values");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

DiversityHistogram diversity_histogram(std::span<const double> values, std::size_t bins) {
  require(bins >= 1, "diversity_histogram: bins must be >= 1");
  require(!values.empty(), "diversity_histogram: no values");
  double lo = *std::min_element(values.begin(), values.end());
  double hi = *std::max_element(values.begin(), values.end());
  if (lo == hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  DiversityHistogram h;
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t b = 0; b <= bins; ++b) h.edges.push_back(b == bins ? hi : lo + width * static_cast<double>(b));
  h.counts.assign(bins, 0);
  for (double v : values) {
    auto b = static_cast<std::size_t>((v - lo) / width);
    ++h.counts[std::min(b, bins - 1)];
  }
  h.median = median_of(values);
  return h;
}

DiversityHistogram diversity_histogram(const Ensemble& ens, const Dataset& data, std::size_t bins, double det_offset) {
  require_nonempty(data, "diversity_histogram");
  return diversity_histogram(log_diversities(ens, data.features, data.labels, det_offset), bins);
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_transfer_csv(std::ostream& os, const TransferMatrix& m) {
  os << "source";
  for (std::size_t j = 0; j < m.members; ++j) os << ",member" << j;
  os << '\n';
  for (std::size_t i = 0; i < m.members; ++i) {
    os << "member" << i;
    for (std::size_t j = 0; j < m.members; ++j) os << ',' << format_number(m.at(i, j));
    os << '\n';
  }
}

void write_roc_csv(std::ostream& os, const RocCurve& roc) {
  os << "threshold,fpr,tpr\n";
  for (std::size_t i = 0; i < roc.thresholds.size(); ++i) {
    os << format_number(roc.thresholds[i]) << ',' << format_number(roc.fpr[i]) << ',' << format_number(roc.tpr[i]) << '\n';
  }
}

void write_histogram_csv(std::ostream& os, const DiversityHistogram& h) {
  os << "bin_lo,bin_hi,count\n";
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    os << format_number(h.edges[b]) << ',' << format_number(h.edges[b + 1]) << ',' << h.counts[b] << '\n';
  }
}

}  // namespace divens
