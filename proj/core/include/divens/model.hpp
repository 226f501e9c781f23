#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "divens/graph.hpp"
#include "divens/tensor.hpp"

namespace divens {

struct MlpConfig {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_layers{64, 64};
  std::size_t num_classes = 10;
  /// Softmax temperature used while training. Inference defaults to T = 1.
  double temperature = 1.0;

  void validate() const;
  friend bool operator==(const MlpConfig&, const MlpConfig&) = default;
};

struct Layer {
  Tensor weight;  // fan_in x fan_out
  Tensor bias;    // fan_out
};

struct ModelParams {
  std::vector<Layer> layers;
};

/// Fully connected ReLU network producing logits over num_classes.
class Mlp {
 public:
  Mlp() = default;
  Mlp(MlpConfig config, ModelParams params);

  /// Glorot-uniform weights and zero biases drawn from `seed`.
  static Mlp initialize(const MlpConfig& config, std::uint64_t seed);

  const MlpConfig& config() const noexcept { return config_; }
  const ModelParams& params() const noexcept { return params_; }
  ModelParams& params() noexcept { return params_; }

  /// Flat list of parameter tensors: W0, b0, W1, b1, ...
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;

  /// n x d inputs -> n x L logits.
  Tensor logits(const Tensor& x) const;
  /// n x d inputs -> n x L probabilities softmax(z / T).
  Tensor predict(const Tensor& x, double temperature = 1.0) const;

  /// Differentiable forward pass. `params` holds graph leaves in the order
  /// of parameters().
  ng::Var logits(ng::Graph& g, ng::Var x, std::span<const ng::Var> params) const;

 private:
  void check_shapes() const;

  MlpConfig config_;
  ModelParams params_;
};

/// K members sharing input_dim and num_classes, each with its own storage.
class Ensemble {
 public:
  Ensemble() = default;
  explicit Ensemble(std::vector<Mlp> members);

  /// K independently initialized members; member k draws from the stream
  /// derived from (seed, "init", k).
  static Ensemble initialize(const MlpConfig& config, std::size_t members, std::uint64_t seed);

  std::size_t size() const noexcept { return members_.size(); }
  bool empty() const noexcept { return members_.empty(); }
  std::size_t input_dim() const;
  std::size_t num_classes() const;

  const Mlp& member(std::size_t k) const;
  Mlp& member(std::size_t k);
  const std::vector<Mlp>& members() const noexcept { return members_; }

  /// F^k for every row of x (n x L).
  Tensor predict_member(std::size_t k, const Tensor& x, double temperature = 1.0) const;
  /// F_en = (1/K) sum_k F^k; order-independent summation.
  Tensor predict_ensemble(const Tensor& x, double temperature = 1.0) const;
  /// Member predictions, one n x L tensor per member.
  std::vector<Tensor> predict_members(const Tensor& x, double temperature = 1.0) const;

 private:
  std::vector<Mlp> members_;
};

/// Mean of K probability tensors, summed per entry in sorted order so the
/// result is exactly invariant to member order.
Tensor average_predictions(std::span<const Tensor> predictions);

/// Index of the largest entry of each row; ties go to the lowest index.
std::vector<std::size_t> argmax_rows(const Tensor& t);

}  // namespace divens
