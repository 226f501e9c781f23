#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "divens/attacks.hpp"
#include "divens/dataset.hpp"
#include "divens/model.hpp"
#include "divens/tensor.hpp"

namespace divens {

struct AccuracyReport {
  double ensemble = 0.0;
  std::vector<double> members;
};

/// Fraction of rows whose argmax matches the label.
double accuracy_of(const Tensor& probs, std::span<const std::size_t> labels);
AccuracyReport accuracy(const Ensemble& ens, const Dataset& data);

/// Ensemble accuracy on inputs crafted by `attack` against its victim.
double robust_accuracy(const Ensemble& ens, const Dataset& data, const AttackConfig& attack, std::uint64_t seed,
                       std::size_t workers = 1);

enum class TransferMode { kUntargetedAccuracy, kTargetedSuccess };

std::string_view to_string(TransferMode mode);

/// Entry (i, j): crafted against member i, evaluated on member j.
struct TransferMatrix {
  std::size_t members = 0;
  std::vector<double> values;
  TransferMode mode = TransferMode::kUntargetedAccuracy;
  AttackConfig attack;

  double at(std::size_t i, std::size_t j) const { return values[i * members + j]; }
};

TransferMatrix transfer_matrix(const Ensemble& ens, const Dataset& data, const AttackConfig& attack, TransferMode mode,
                               std::uint64_t seed, std::size_t workers = 1);

/// ED of one input with the removed index set to argmax F_en.
double detection_score(const Ensemble& ens, std::span<const double> x, double det_offset = 1e-12);
std::vector<double> detection_scores(const Ensemble& ens, const Tensor& x, double det_offset = 1e-12);

/// ED of a prediction set with the removed index set to its argmax F_en.
double detection_score(const Tensor& member_probs, double det_offset = 1e-12);

/// Adversarial is the positive class, detected when score < threshold.
/// Thresholds run from -inf through every distinct score to +inf.
struct RocCurve {
  std::vector<double> thresholds;
  std::vector<double> tpr;
  std::vector<double> fpr;
  double auc = 0.0;
};

RocCurve roc_auc(std::span<const double> clean_scores, std::span<const double> adv_scores);

struct DiversityHistogram {
  std::vector<double> edges;  // bins + 1 edges
  std::vector<std::size_t> counts;
  double median = 0.0;
};

/// ln ED per row with the true label removed, at temperature 1.
std::vector<double> log_diversities(const Ensemble& ens, const Tensor& x, std::span<const std::size_t> labels,
                                    double det_offset = 1e-12);
DiversityHistogram diversity_histogram(std::span<const double> values, std::size_t bins);
DiversityHistogram diversity_histogram(const Ensemble& ens, const Dataset& data, std::size_t bins,
                                       double det_offset = 1e-12);

double median_of(std::span<const double> values);

/// Shortest decimal that round-trips to the same double.
std::string format_number(double v);

void write_transfer_csv(std::ostream& os, const TransferMatrix& m);
void write_roc_csv(std::ostream& os, const RocCurve& roc);
void write_histogram_csv(std::ostream& os, const DiversityHistogram& h);

}  // namespace divens
