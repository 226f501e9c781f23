#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "divens/dataset.hpp"
#include "divens/model.hpp"
#include "divens/rng.hpp"
#include "divens/tensor.hpp"

namespace divens::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  Rng rng(seed, "test-tensor");
  for (double& v : t.storage()) v = rng.uniform(lo, hi);
  return t;
}

inline std::vector<std::size_t> random_labels(std::size_t n, std::size_t classes, std::uint64_t seed) {
  Rng rng(seed, "test-labels");
  std::vector<std::size_t> y(n);
  for (auto& v : y) v = rng.below(classes);
  return y;
}

/// Random point on the simplex (normalized exponentials).
inline std::vector<double> random_simplex(std::size_t n, Rng& rng) {
  std::vector<double> p(n);
  double total = 0.0;
  for (double& v : p) total += v = -std::log(1.0 - rng.uniform());
  for (double& v : p) v /= total;
  return p;
}

inline Ensemble small_ensemble(std::size_t members, std::uint64_t seed, std::size_t dim = 8, std::size_t classes = 10,
                               std::vector<std::size_t> hidden = {16}) {
  MlpConfig c;
  c.input_dim = dim;
  c.hidden_layers = std::move(hidden);
  c.num_classes = classes;
  return Ensemble::initialize(c, members, seed);
}

inline Dataset small_blobs(std::uint64_t seed, std::size_t per_class = 30, std::size_t classes = 10, std::size_t dim = 8) {
  BlobSpec spec;
  spec.seed = seed;
  spec.per_class = per_class;
  spec.num_classes = classes;
  spec.dim = dim;
  return synth_blobs(spec);
}

}  // namespace divens::testing
