#include <gtest/gtest.h>

#include <cmath>

#include "divens/error.hpp"
#include "divens/evaluation.hpp"
#include "divens/training.hpp"
#include "support.hpp"

using namespace divens;
using divens::testing::small_blobs;
using divens::testing::small_ensemble;

namespace {

TrainConfig quick_config(double alpha, double beta, std::size_t epochs = 3) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 32;
  c.learning_rate = 0.01;
  c.seed = 5;
  c.adp.alpha = alpha;
  c.adp.beta = beta;
  return c;
}

}  // namespace

TEST(Adam, HandComputedTwoSteps) {
  Tensor p = Tensor::vector({1.0});
  Tensor g = Tensor::vector({0.5});
  AdamState state;
  Tensor* params[] = {&p};
  const Tensor* grads[] = {&g};
  adam_step(params, grads, state, 0.1);
  EXPECT_NEAR(p[0], 0.9000000019999999, 1e-15);
  g[0] = -1.0;
  adam_step(params, grads, state, 0.1);
  EXPECT_NEAR(p[0], 0.9366103542405653, 1e-15);
  EXPECT_EQ(state.t, 2u);
}

TEST(Adam, RejectsMismatchedShapes) {
  Tensor p = Tensor::vector({1.0, 2.0});
  Tensor g = Tensor::vector({0.5});
  AdamState state;
  Tensor* params[] = {&p};
  const Tensor* grads[] = {&g};
  EXPECT_THROW(adam_step(params, grads, state, 0.1), Error);
}

TEST(Training, ReducesObjectiveAndLearnsBlobs) {
  Ensemble ens = small_ensemble(3, 1);
  const Dataset d = small_blobs(2, 40);
  const TrainReport r = adp_train(ens, d, quick_config(2.0, 0.5, 8));
  ASSERT_EQ(r.epochs.size(), 8u);
  EXPECT_LT(r.epochs.back().mean_objective, r.initial_objective);
  EXPECT_GT(accuracy(ens, d).ensemble, 0.8);
  for (const auto& e : r.epochs) {
    EXPECT_EQ(e.member_accuracy.size(), 3u);
    EXPECT_EQ(e.validation_loss.size(), 3u);
    EXPECT_TRUE(std::isfinite(e.median_log_diversity));
  }
}

TEST(Training, SameSeedIsBitIdentical) {
  const Dataset d = small_blobs(3, 20);
  Ensemble a = small_ensemble(3, 4);
  Ensemble b = small_ensemble(3, 4);
  adp_train(a, d, quick_config(2.0, 0.5));
  adp_train(b, d, quick_config(2.0, 0.5));
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t l = 0; l < 2; ++l) EXPECT_EQ(a.member(k).params().layers[l].weight, b.member(k).params().layers[l].weight);
}

// With both coefficients zero the members never interact, so joint training
// must reproduce training each member on its own.
TEST(Training, ZeroCoefficientsEqualIndependentTraining) {
  const Dataset d = small_blobs(6, 20);
  const Ensemble init = small_ensemble(3, 7);
  Ensemble joint = init;
  adp_train(joint, d, quick_config(0.0, 0.0));
  for (std::size_t k = 0; k < 3; ++k) {
    Ensemble alone(std::vector<Mlp>{init.member(k)});
    adp_train(alone, d, quick_config(0.0, 0.0));
    for (std::size_t l = 0; l < 2; ++l) {
      EXPECT_EQ(alone.member(0).params().layers[l].weight, joint.member(k).params().layers[l].weight);
      EXPECT_EQ(alone.member(0).params().layers[l].bias, joint.member(k).params().layers[l].bias);
    }
  }
}

TEST(Training, FrozenMembersStopChanging) {
  const Dataset d = small_blobs(8, 20);
  TrainConfig c = quick_config(2.0, 0.5, 2);
  c.freeze_patience = 1;
  c.freeze_tolerance = 1e9;  // no epoch can improve this much
  Ensemble two = small_ensemble(3, 9);
  const TrainReport r = adp_train(two, d, c);
  for (const auto& f : r.frozen_at) EXPECT_EQ(f, std::optional<std::size_t>(2));
  EXPECT_TRUE(r.epochs.back().active.empty());

  c.epochs = 5;
  Ensemble five = small_ensemble(3, 9);
  const TrainReport r5 = adp_train(five, d, c);
  EXPECT_EQ(r5.epochs.size(), 2u);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(two.member(k).params().layers[0].weight, five.member(k).params().layers[0].weight);
}

TEST(Training, PerMemberLearningRates) {
  const Dataset d = small_blobs(10, 10);
  TrainConfig c = quick_config(0.0, 0.0, 1);
  c.member_learning_rates = {0.01, 0.0};
  Ensemble ens = small_ensemble(2, 11);
  EXPECT_THROW(adp_train(ens, d, c), Error);
  c.member_learning_rates = {0.01, 1e-9};
  const Ensemble before = ens;
  adp_train(ens, d, c);
  double moved_fast = 0.0, moved_slow = 0.0;
  const auto& w0 = before.member(0).params().layers[0].weight;
  const auto& w1 = before.member(1).params().layers[0].weight;
  for (std::size_t i = 0; i < w0.size(); ++i) {
    moved_fast += std::abs(ens.member(0).params().layers[0].weight[i] - w0[i]);
    moved_slow += std::abs(ens.member(1).params().layers[0].weight[i] - w1[i]);
  }
  EXPECT_GT(moved_fast, 1000.0 * moved_slow);
}

TEST(Training, TooManyMembersReportsNanDiversity) {
  const Dataset d = small_blobs(12, 10, 3);
  Ensemble ens = small_ensemble(3, 13, 8, 3);
  const TrainReport r = adp_train(ens, d, quick_config(2.0, 0.0, 1));
  EXPECT_TRUE(std::isnan(r.epochs[0].median_log_diversity));
}

TEST(Training, DivergenceIsANumericError) {
  const Dataset d = small_blobs(14, 10);
  Ensemble ens = small_ensemble(2, 15);
  TrainConfig c = quick_config(2.0, 0.5, 3);
  c.learning_rate = 1e300;
  try {
    adp_train(ens, d, c);
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNumeric);
    EXPECT_FALSE(e.context().empty());
  }
}

TEST(Training, RejectsBadInputs) {
  const Dataset d = small_blobs(16, 10);
  Ensemble wrong_dim = small_ensemble(2, 17, 5);
  EXPECT_THROW(adp_train(wrong_dim, d, quick_config(2.0, 0.5)), Error);
  TrainConfig c = quick_config(2.0, 0.5);
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), Error);
  c = quick_config(-1.0, 0.5);
  EXPECT_THROW(c.validate(), Error);
}

TEST(AdversarialTraining, AugmentedBatchLayout) {
  const Dataset d = small_blobs(18, 4);
  const Ensemble ens = small_ensemble(2, 19);
  for (AttackMethod m : {AttackMethod::kFgsm, AttackMethod::kPgd}) {
    AdvTConfig cfg;
    cfg.attack = m;
    const AugmentedBatch b = advt_augment(d.features, d.labels, ens, cfg, 3);
    const std::size_t n = d.size();
    ASSERT_EQ(b.features.rows(), 2 * n);
    ASSERT_EQ(b.labels.size(), 2 * n);
    EXPECT_EQ(b.fallbacks, 0u);
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_EQ(b.labels[i], d.labels[i]);
      EXPECT_EQ(b.labels[n + i], d.labels[i]);
      for (std::size_t j = 0; j < d.dim(); ++j) {
        EXPECT_EQ(b.features(i, j), d.features(i, j));
        EXPECT_LE(std::abs(b.features(n + i, j) - d.features(i, j)), cfg.eps_hi + 1e-12);
        EXPECT_GE(b.features(n + i, j), 0.0);
        EXPECT_LE(b.features(n + i, j), 1.0);
      }
    }
  }
  AdvTConfig bad;
  bad.attack = AttackMethod::kCw;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(AdversarialTraining, RunsInsideTheTrainingLoop) {
  const Dataset d = small_blobs(20, 10);
  Ensemble ens = small_ensemble(2, 21);
  TrainConfig c = quick_config(2.0, 0.5, 2);
  c.advt = AdvTConfig{};
  const TrainReport r = adp_train(ens, d, c);
  EXPECT_EQ(r.epochs.size(), 2u);
  EXPECT_EQ(r.epochs[0].advt_fallbacks, 0u);
}
