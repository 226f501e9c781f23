#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "divens/attacks.hpp"
#include "divens/dataset.hpp"
#include "divens/diversity.hpp"
#include "divens/model.hpp"
#include "divens/tensor.hpp"

namespace divens {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates and step count for one parameter list.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t t = 0;
};

/// One bias-corrected Adam update in place. Moments are created on first use.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads, AdamState& state, double lr,
               const AdamOptions& options = {});

struct AdvTConfig {
  AttackMethod attack = AttackMethod::kFgsm;  // fgsm or pgd
  double eps_lo = 0.01;
  double eps_hi = 0.05;
  /// pgd iterations (step size eps / steps).
  std::size_t steps = 10;

  void validate() const;
  friend bool operator==(const AdvTConfig&, const AdvTConfig&) = default;
};

struct TrainConfig {
  double learning_rate = 0.001;
  /// Optional per-member rates; empty means learning_rate for every member.
  std::vector<double> member_learning_rates;
  std::size_t batch_size = 64;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  AdpConfig adp;
  std::size_t freeze_patience = 5;
  double freeze_tolerance = 1e-4;
  /// Held-out share used for the freezing test; 0 disables freezing.
  double validation_fraction = 0.1;
  std::optional<AdvTConfig> advt;

  void validate() const;
  double rate_for(std::size_t member) const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_objective = 0.0;
  /// Running accuracies on the clean part of each batch, before its update.
  std::vector<double> member_accuracy;
  double ensemble_accuracy = 0.0;
  /// NaN when K > L-1.
  double median_log_diversity = 0.0;
  /// Per-member validation cross-entropy (empty without a validation split).
  std::vector<double> validation_loss;
  /// Indicator set I after this epoch's freezing test.
  std::vector<std::size_t> active;
  std::size_t advt_fallbacks = 0;
};

struct TrainReport {
  /// Objective of the first mini-batch before any update.
  double initial_objective = 0.0;
  std::vector<EpochRecord> epochs;
  /// Epoch at which each member was frozen, if it was.
  std::vector<std::optional<std::size_t>> frozen_at;
};

/// Trains all members jointly on mean[sum_k CE^k - ADP] with one shared batch
/// order per epoch. Members whose validation loss stalls are frozen: they
/// keep contributing predictions but receive no further updates.
TrainReport adp_train(Ensemble& ens, const Dataset& data, const TrainConfig& cfg);

struct AugmentedBatch {
  Tensor features;
  std::vector<std::size_t> labels;
  std::size_t fallbacks = 0;
};

/// Clean rows followed by their adversarial counterparts against the current
/// ensemble, with eps ~ U[eps_lo, eps_hi] per example.
AugmentedBatch advt_augment(const Tensor& x, std::span<const std::size_t> labels, const Ensemble& ens,
                            const AdvTConfig& cfg, std::uint64_t seed);

}  // namespace divens
