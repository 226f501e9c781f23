#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "divens/dataset.hpp"
#include "divens/model.hpp"
#include "divens/tensor.hpp"

namespace divens {

enum class AttackMethod { kFgsm, kBim, kPgd, kMim, kJsma, kCw, kEad };

std::string_view to_string(AttackMethod method);
AttackMethod parse_attack_method(std::string_view name);

/// Model under attack: the whole ensemble or a single member.
struct Victim {
  std::optional<std::size_t> member;

  static Victim ensemble() { return {}; }
  static Victim single(std::size_t k) { return Victim{k}; }
  bool is_ensemble() const noexcept { return !member.has_value(); }
  std::string name() const;
  friend bool operator==(const Victim&, const Victim&) = default;
};

/// Loss the gradient attacks follow when the victim is the ensemble.
enum class AttackLoss {
  kEnsembleCrossEntropy,  // -ln F_en_y
  kMemberSum,             // sum_k -ln F^k_y
};

std::string_view to_string(AttackLoss loss);
AttackLoss parse_attack_loss(std::string_view name);

struct AttackConfig {
  AttackMethod method = AttackMethod::kPgd;
  double eps = 0.1;
  std::size_t steps = 10;
  /// Defaults to eps / steps.
  std::optional<double> step_size;
  double momentum = 1.0;
  /// pgd only; false starts from x like bim.
  bool random_init = true;
  double jsma_theta = 0.2;
  double jsma_gamma = 0.1;
  double cw_c = 1.0;
  double cw_kappa = 0.0;
  double ead_beta = 0.01;
  double opt_lr = 0.01;
  std::size_t opt_steps = 1000;
  bool targeted = false;
  /// Fixed target for targeted mode. Without one, each example gets a
  /// seeded random class different from its label.
  std::optional<std::size_t> target_label;
  Victim victim;
  AttackLoss loss = AttackLoss::kEnsembleCrossEntropy;

  void validate() const;
  double effective_step() const { return step_size ? *step_size : eps / static_cast<double>(steps); }
};

struct AdvBatch {
  Tensor originals;
  Tensor adversarials;
  std::vector<std::size_t> labels;
  /// Attack goal per example: the target in targeted mode, else the label.
  std::vector<std::size_t> goals;
  /// Victim argmax on the adversarial input.
  std::vector<std::size_t> predictions;
  std::vector<bool> success;
  std::vector<double> linf, l2, l1;
  /// Coordinates changed by more than 1e-6.
  std::vector<std::size_t> l0;
  /// Optimization attacks only: total objective over the batch per step.
  std::vector<double> objective_trace;
  Victim victim;
  AttackMethod method = AttackMethod::kPgd;
  bool targeted = false;

  std::size_t size() const noexcept { return labels.size(); }
  double success_rate() const;
};

/// Per-example loss and its gradient with respect to the input rows.
struct InputGradient {
  std::vector<double> loss;
  Tensor grad;
};

/// Cross-entropy of the victim at `classes` (labels, or targets when
/// targeted). Gradient attacks ascend it untargeted and descend it targeted.
InputGradient adversarial_loss(const Ensemble& ens, const Victim& victim, const Tensor& x,
                               std::span<const std::size_t> classes, AttackLoss loss = AttackLoss::kEnsembleCrossEntropy);

/// Checked variant used by the attacks: in targeted mode every target must
/// differ from its label.
InputGradient adversarial_loss(const Ensemble& ens, const Victim& victim, const Tensor& x,
                               std::span<const std::size_t> labels, bool targeted, std::span<const std::size_t> targets,
                               AttackLoss loss = AttackLoss::kEnsembleCrossEntropy);

/// Victim probabilities (F_en or F^k) at temperature 1.
Tensor victim_probabilities(const Ensemble& ens, const Victim& victim, const Tensor& x);

/// Clamp to [max(0, x - eps), min(1, x + eps)] elementwise.
Tensor clip_ball(const Tensor& x, const Tensor& candidate, double eps);
double clip_ball(double x, double candidate, double eps);

/// max(max_{i != cls} z_i - z_cls, -kappa).
double cw_margin(std::span<const double> logits, std::size_t cls, double kappa);
double soft_threshold(double v, double tau);

/// JSMA saliency of one feature for increasing class t.
double jsma_saliency(double d_target, double d_others);

/// Goals per example: targets (fixed or seeded) in targeted mode, labels
/// otherwise. `ids` are global example indices keying the random streams.
std::vector<std::size_t> attack_goals(const AttackConfig& cfg, std::span<const std::size_t> labels,
                                      std::size_t num_classes, std::uint64_t seed, std::span<const std::size_t> ids);

/// Single attacks on a batch. `ids` default to 0..n-1 and key the per-example
/// random streams, so a row's result never depends on its batch.
AdvBatch fgsm(const Ensemble& ens, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg,
              std::uint64_t seed = 0, std::span<const std::size_t> ids = {});
AdvBatch bim(const Ensemble& ens, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg,
             std::uint64_t seed = 0, std::span<const std::size_t> ids = {});
AdvBatch pgd(const Ensemble& ens, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg,
             std::uint64_t seed = 0, std::span<const std::size_t> ids = {});
AdvBatch mim(const Ensemble& ens, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg,
             std::uint64_t seed = 0, std::span<const std::size_t> ids = {});
AdvBatch jsma(const Ensemble& ens, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg,
              std::uint64_t seed = 0, std::span<const std::size_t> ids = {});
AdvBatch cw(const Ensemble& ens, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg,
            std::uint64_t seed = 0, std::span<const std::size_t> ids = {});
AdvBatch ead(const Ensemble& ens, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg,
             std::uint64_t seed = 0, std::span<const std::size_t> ids = {});

/// Dispatches on cfg.method.
AdvBatch run_attack(const Ensemble& ens, const Tensor& x, std::span<const std::size_t> labels, const AttackConfig& cfg,
                    std::uint64_t seed = 0, std::span<const std::size_t> ids = {});

/// Attacks a whole dataset in chunks spread over `workers` threads. The
/// result is identical for every chunk size and worker count.
AdvBatch attack_dataset(const Ensemble& ens, const Dataset& data, const AttackConfig& cfg, std::uint64_t seed,
                        std::size_t chunk = 250, std::size_t workers = 1);

}  // namespace divens
