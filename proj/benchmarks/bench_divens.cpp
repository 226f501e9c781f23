#include <benchmark/benchmark.h>

#include "divens/attacks.hpp"
#include "divens/diversity.hpp"
#include "divens/evaluation.hpp"
#include "divens/rng.hpp"

using namespace divens;

namespace {

Tensor uniform(Shape shape, std::uint64_t seed) {
  Rng rng(seed, "bench");
  Tensor t(shape);
  for (double& v : t.storage()) v = rng.uniform();
  return t;
}

std::vector<std::size_t> labels(std::size_t n, std::uint64_t seed) {
  Rng rng(seed, "bench-labels");
  std::vector<std::size_t> y(n);
  for (auto& v : y) v = rng.below(10);
  return y;
}

Ensemble mnist_sized(std::size_t members) {
  MlpConfig c;
  c.input_dim = 784;
  c.hidden_layers = {64, 64};
  return Ensemble::initialize(c, members, 1);
}

void BM_Matmul(benchmark::State& state) {
  const Tensor a = uniform({64, 784}, 1), b = uniform({784, 64}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::matmul(a, b));
}
BENCHMARK(BM_Matmul);

// One training step's worth of graph work: objective plus backward.
void BM_AdpObjectiveBackward(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  Ensemble ens = mnist_sized(k);
  const Tensor x = uniform({64, 784}, 3);
  const auto y = labels(64, 4);
  AdpConfig adp;
  for (auto _ : state) {
    ng::Graph g;
    ng::Var in = g.constant(x);
    std::vector<ng::Var> logits;
    for (std::size_t m = 0; m < k; ++m) {
      std::vector<ng::Var> vars;
      for (Tensor* p : ens.member(m).parameters()) vars.push_back(g.leaf(*p, true));
      logits.push_back(ens.member(m).logits(g, in, vars));
    }
    g.backward(adp_objective_terms(g, logits, y, adp).objective);
  }
}
BENCHMARK(BM_AdpObjectiveBackward)->Arg(3)->Arg(5);

void BM_EnsembleDiversity(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  PredictionSet s;
  s.probs = kernels::softmax(uniform({k, 10}, 5));
  s.label = 3;
  for (auto _ : state) benchmark::DoNotOptimize(log_ensemble_diversity(nonmax_matrix(s)));
}
BENCHMARK(BM_EnsembleDiversity)->Arg(3)->Arg(5)->Arg(9);

void BM_Pgd(benchmark::State& state) {
  const Ensemble ens = mnist_sized(3);
  const Tensor x = uniform({64, 784}, 6);
  const auto y = labels(64, 7);
  AttackConfig cfg;
  cfg.steps = 10;
  for (auto _ : state) benchmark::DoNotOptimize(pgd(ens, x, y, cfg, 8));
}
BENCHMARK(BM_Pgd)->Unit(benchmark::kMillisecond);

void BM_RocAuc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(9, "roc");
  std::vector<double> clean(n), adv(n);
  for (double& v : clean) v = rng.uniform();
  for (double& v : adv) v = rng.uniform();
  for (auto _ : state) benchmark::DoNotOptimize(roc_auc(clean, adv));
}
BENCHMARK(BM_RocAuc)->Arg(500)->Arg(10000);

}  // namespace

BENCHMARK_MAIN();
