#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "divens/error.hpp"
#include "divens/model.hpp"
#include "support.hpp"

using namespace divens;
using divens::testing::random_tensor;
using divens::testing::small_ensemble;

TEST(Mlp, InitializationIsSeeded) {
  MlpConfig c;
  c.input_dim = 5;
  c.hidden_layers = {7};
  const Mlp a = Mlp::initialize(c, 3);
  const Mlp b = Mlp::initialize(c, 3);
  const Mlp d = Mlp::initialize(c, 4);
  EXPECT_EQ(a.params().layers[0].weight, b.params().layers[0].weight);
  EXPECT_FALSE(a.params().layers[0].weight == d.params().layers[0].weight);
  // Glorot-uniform bound sqrt(6 / (fan_in + fan_out)); biases start at zero.
  const double bound = std::sqrt(6.0 / 12.0);
  for (double w : a.params().layers[0].weight.data()) EXPECT_LE(std::abs(w), bound);
  for (double v : a.params().layers[1].bias.data()) EXPECT_EQ(v, 0.0);
}

TEST(Mlp, HandComputedForwardPass) {
  MlpConfig c;
  c.input_dim = 2;
  c.hidden_layers = {2};
  c.num_classes = 2;
  ModelParams p;
  p.layers.push_back({Tensor::matrix({{1, -1}, {2, 1}}), Tensor::vector({0, 0.5})});
  p.layers.push_back({Tensor::matrix({{1, 0}, {0, 1}}), Tensor::vector({0.1, -0.1})});
  const Mlp m(c, p);
  // h = relu([1 + 4, -1 + 2 + 0.5]) = [5, 1.5]
  const Tensor z = m.logits(Tensor::matrix({{1, 2}}));
  EXPECT_DOUBLE_EQ(z(0, 0), 5.1);
  EXPECT_DOUBLE_EQ(z(0, 1), 1.4);
  const Tensor prob = m.predict(Tensor::matrix({{1, 2}}), 2.0);
  EXPECT_NEAR(prob(0, 0), 1.0 / (1.0 + std::exp((1.4 - 5.1) / 2.0)), 1e-15);
}

TEST(Mlp, RejectsInconsistentParameters) {
  MlpConfig c;
  c.input_dim = 2;
  c.hidden_layers = {};
  c.num_classes = 3;
  ModelParams p;
  p.layers.push_back({Tensor(Shape{2, 4}), Tensor(Shape{3})});
  EXPECT_THROW(Mlp(c, p), Error);
  c.temperature = 0.0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Mlp, GraphForwardMatchesInference) {
  const Ensemble ens = small_ensemble(1, 2);
  const Mlp& m = ens.member(0);
  const Tensor x = random_tensor({4, 8}, 3, 0.0, 1.0);
  ng::Graph g;
  std::vector<ng::Var> params;
  for (const Tensor* t : m.parameters()) params.push_back(g.constant(*t));
  EXPECT_EQ(m.logits(g, g.constant(x), params).value(), m.logits(x));
}

TEST(Ensemble, PredictionsAreDistributions) {
  const Ensemble ens = small_ensemble(3, 5);
  const Tensor x = random_tensor({10, 8}, 6, 0.0, 1.0);
  const Tensor p = ens.predict_ensemble(x);
  for (std::size_t i = 0; i < 10; ++i) {
    double s = 0.0;
    for (double v : p.row(i)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Ensemble, AverageIsExactlyMemberOrderInvariant) {
  const Ensemble ens = small_ensemble(4, 7);
  const Tensor x = random_tensor({12, 8}, 8, 0.0, 1.0);
  auto preds = ens.predict_members(x);
  const Tensor forward = average_predictions(preds);
  std::reverse(preds.begin(), preds.end());
  EXPECT_EQ(average_predictions(preds), forward);
  std::rotate(preds.begin(), preds.begin() + 1, preds.end());
  EXPECT_EQ(average_predictions(preds), forward);
  EXPECT_EQ(ens.predict_ensemble(x), forward);
}

TEST(Ensemble, MembersDrawIndependentStreams) {
  const Ensemble ens = small_ensemble(2, 9);
  EXPECT_FALSE(ens.member(0).params().layers[0].weight == ens.member(1).params().layers[0].weight);
  const Ensemble again = small_ensemble(2, 9);
  EXPECT_EQ(ens.member(1).params().layers[0].weight, again.member(1).params().layers[0].weight);
}

TEST(Ensemble, RejectsMismatchedMembers) {
  MlpConfig a;
  a.input_dim = 3;
  MlpConfig b = a;
  b.num_classes = 5;
  std::vector<Mlp> members = {Mlp::initialize(a, 1), Mlp::initialize(b, 2)};
  EXPECT_THROW(Ensemble{members}, Error);
}

TEST(Argmax, TiesGoToLowestIndex) {
  const auto idx = argmax_rows(Tensor::matrix({{0.2, 0.4, 0.4}, {0.5, 0.1, 0.4}}));
  EXPECT_EQ(idx, (std::vector<std::size_t>{1, 0}));
}
