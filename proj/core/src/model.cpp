#include "divens/model.hpp"

#include <algorithm>
#include <cmath>

#include "divens/error.hpp"
#include "divens/rng.hpp"

namespace divens {

void MlpConfig::validate() const {
  require(input_dim > 0, "MlpConfig: input_dim must be positive");
  require(num_classes >= 2, "MlpConfig: num_classes must be at least 2");
  require(temperature > 0.0 && std::isfinite(temperature), "MlpConfig: temperature must be positive");
  for (auto h : hidden_layers) require(h > 0, "MlpConfig: hidden layer sizes must be positive");
}

Mlp::Mlp(MlpConfig config, ModelParams params) : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  check_shapes();
}

void Mlp::check_shapes() const {
  std::vector<std::size_t> dims{config_.input_dim};
  dims.insert(dims.end(), config_.hidden_layers.begin(), config_.hidden_layers.end());
  dims.push_back(config_.num_classes);
  if (params_.layers.size() + 1 != dims.size()) {
    fail(ErrorCode::kShapeMismatch, "Mlp: layer count does not match config",
         "layers=" + std::to_string(params_.layers.size()));
  }
  for (std::size_t l = 0; l < params_.layers.size(); ++l) {
    const Layer& layer = params_.layers[l];
    if (layer.weight.shape() != Shape{dims[l], dims[l + 1]} || layer.bias.shape() != Shape{dims[l + 1]}) {
      fail(ErrorCode::kShapeMismatch, "Mlp: layer shapes do not chain",
           "layer=" + std::to_string(l) + " weight=" + shape_string(layer.weight.shape()) +
               " bias=" + shape_string(layer.bias.shape()));
    }
  }
}

Mlp Mlp::initialize(const MlpConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  std::vector<std::size_t> dims{config.input_dim};
  dims.insert(dims.end(), config.hidden_layers.begin(), config.hidden_layers.end());
  dims.push_back(config.num_classes);
  ModelParams params;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const double limit = std::sqrt(6.0 / static_cast<double>(dims[l] + dims[l + 1]));
    Layer layer{Tensor(Shape{dims[l], dims[l + 1]}), Tensor(Shape{dims[l + 1]})};
    for (double& w : layer.weight.data()) w = rng.uniform(-limit, limit);
    params.layers.push_back(std::move(layer));
  }
  return Mlp(config, std::move(params));
}

std::vector<Tensor*> Mlp::parameters() {
  std::vector<Tensor*> out;
  for (Layer& layer : params_.layers) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
  }
  return out;
}

std::vector<const Tensor*> Mlp::parameters() const {
  std::vector<const Tensor*> out;
  for (const Layer& layer : params_.layers) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
  }
  return out;
}

Tensor Mlp::logits(const Tensor& x) const {
  kernels::require_shape(x.rank() == 2 && x.shape()[1] == config_.input_dim, "Mlp::logits",
                         "input " + shape_string(x.shape()) + " expected [n," + std::to_string(config_.input_dim) + "]");
  Tensor h = x;
  for (std::size_t l = 0; l < params_.layers.size(); ++l) {
    h = kernels::add_row(kernels::matmul(h, params_.layers[l].weight), params_.layers[l].bias);
    if (l + 1 < params_.layers.size()) h = kernels::relu(h);
  }
  return h;
}

Tensor Mlp::predict(const Tensor& x, double temperature) const {
  require(temperature > 0.0, "predict: temperature must be positive");
  Tensor z = logits(x);
  if (temperature != 1.0) z = kernels::scale(z, 1.0 / temperature);
  return kernels::softmax(z);
}

ng::Var Mlp::logits(ng::Graph&, ng::Var x, std::span<const ng::Var> params) const {
  kernels::require_shape(x.value().rank() == 2 && x.value().shape()[1] == config_.input_dim, "Mlp::logits",
                         "input " + shape_string(x.value().shape()));
  kernels::require_shape(params.size() == 2 * params_.layers.size(), "Mlp::logits",
                         "parameter count " + std::to_string(params.size()));
  ng::Var h = x;
  for (std::size_t l = 0; l < params_.layers.size(); ++l) {
    h = ng::add_row(ng::matmul(h, params[2 * l]), params[2 * l + 1]);
    if (l + 1 < params_.layers.size()) h = ng::relu(h);
  }
  return h;
}

Ensemble::Ensemble(std::vector<Mlp> members) : members_(std::move(members)) {
  for (const Mlp& m : members_) {
    if (m.config().input_dim != members_[0].config().input_dim ||
        m.config().num_classes != members_[0].config().num_classes) {
      fail(ErrorCode::kInvalidArgument, "Ensemble: members disagree on input_dim or num_classes");
    }
  }
}

Ensemble Ensemble::initialize(const MlpConfig& config, std::size_t members, std::uint64_t seed) {
  require(members >= 1, "Ensemble: at least one member required");
  std::vector<Mlp> out;
  for (std::size_t k = 0; k < members; ++k) out.push_back(Mlp::initialize(config, derive_seed(seed, "init", k)));
  return Ensemble(std::move(out));
}

std::size_t Ensemble::input_dim() const {
  require(!empty(), "Ensemble is empty");
  return members_[0].config().input_dim;
}

std::size_t Ensemble::num_classes() const {
  require(!empty(), "Ensemble is empty");
  return members_[0].config().num_classes;
}

const Mlp& Ensemble::member(std::size_t k) const {
  require(k < members_.size(), "Ensemble: member index out of range");
  return members_[k];
}

Mlp& Ensemble::member(std::size_t k) {
  require(k < members_.size(), "Ensemble: member index out of range");
  return members_[k];
}

Tensor Ensemble::predict_member(std::size_t k, const Tensor& x, double temperature) const {
  return member(k).predict(x, temperature);
}

std::vector<Tensor> Ensemble::predict_members(const Tensor& x, double temperature) const {
  std::vector<Tensor> out;
  out.reserve(members_.size());
  for (const Mlp& m : members_) out.push_back(m.predict(x, temperature));
  return out;
}

Tensor Ensemble::predict_ensemble(const Tensor& x, double temperature) const {
  require(!empty(), "predict_ensemble: ensemble is empty");
  const auto preds = predict_members(x, temperature);
  return average_predictions(preds);
}

Tensor average_predictions(std::span<const Tensor> predictions) {
  require(!predictions.empty(), "average_predictions: no predictions");
  Tensor out(predictions[0].shape());
  const double k = static_cast<double>(predictions.size());
  std::vector<double> column(predictions.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t m = 0; m < predictions.size(); ++m) column[m] = predictions[m][i];
    std::sort(column.begin(), column.end());
    double total = 0.0;
    for (double v : column) total += v;
    out[i] = total / k;
  }
  return out;
}

std::vector<std::size_t> argmax_rows(const Tensor& t) {
  std::vector<std::size_t> out(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    auto row = t.row(r);
    out[r] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

}  // namespace divens
