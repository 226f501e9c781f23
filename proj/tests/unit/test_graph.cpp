#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "divens/error.hpp"
#include "divens/graph.hpp"
#include "divens/linalg.hpp"
#include "support.hpp"

using namespace divens;
using divens::testing::random_tensor;
using ng::Graph;
using ng::Var;

namespace {

struct OpCase {
  std::string name;
  Shape shape;
  std::function<Var(Graph&, Var)> f;
  double lo = -1.0, hi = 1.0;
};

const std::vector<std::size_t> kRowIndex = {2, 0, 3};

std::vector<OpCase> op_cases() {
  const Tensor w = random_tensor({4, 3}, 77);
  const Tensor r = random_tensor({4}, 78);
  return {
      {"matmul", {3, 4}, [w](Graph& g, Var x) { return ng::sum(ng::matmul(x, g.constant(w)) * ng::matmul(x, g.constant(w))); }},
      {"transpose", {3, 4}, [w](Graph& g, Var x) { return ng::sum(ng::matmul(ng::transpose(x), ng::transpose(g.constant(w)))); }},
      {"add_sub_mul", {3, 4}, [](Graph&, Var x) { return ng::sum((x + x * x) - ng::scale(x, 0.3)); }},
      {"add_scalar_neg", {3, 4}, [](Graph&, Var x) { return ng::sum(-ng::add_scalar(x, 2.0) * x); }},
      {"add_row", {3, 4}, [r](Graph& g, Var x) { return ng::sum(ng::exp(ng::add_row(x, g.constant(r)))); }},
      {"row_is_leaf", {4}, [w](Graph& g, Var x) { return ng::sum(ng::exp(ng::add_row(g.constant(kernels::transpose(w)), x))); }},
      {"relu", {3, 4}, [](Graph&, Var x) { return ng::sum(ng::relu(x) * x); }},
      {"tanh", {3, 4}, [](Graph&, Var x) { return ng::sum(ng::tanh(x) * x); }},
      {"exp_log", {3, 4}, [](Graph&, Var x) { return ng::sum(ng::log(ng::exp(x) + ng::exp(ng::scale(x, 2.0)))); }},
      {"mean", {3, 4}, [](Graph&, Var x) { return ng::mean(x * x); }},
      {"sum_axis0", {3, 4}, [](Graph&, Var x) { auto s = ng::sum_axis(x, 0); return ng::sum(s * s); }},
      {"sum_axis1", {3, 4}, [](Graph&, Var x) { auto s = ng::sum_axis(x, 1); return ng::sum(s * s); }},
      {"mean_axis", {3, 4}, [](Graph&, Var x) { auto s = ng::mean_axis(x, 1); return ng::sum(s * s); }},
      {"softmax", {3, 4}, [](Graph&, Var x) { auto p = ng::softmax(x); return ng::sum(p * p * x); }},
      {"log_softmax", {3, 4}, [](Graph&, Var x) { return ng::sum(ng::log_softmax(x) * x); }},
      {"logsumexp", {3, 4}, [](Graph&, Var x) { auto l = ng::logsumexp(x); return ng::sum(l * l); }},
      {"l2norm_axis", {3, 4}, [](Graph&, Var x) { return ng::sum(ng::l2norm_axis(x, 0)); }},
      {"l2_normalize_rows", {3, 4}, [](Graph&, Var x) { auto n = ng::l2_normalize_rows(x); return ng::sum(n * x); }},
      {"reshape", {3, 4}, [](Graph&, Var x) { auto y = ng::reshape(x, {4, 3}); return ng::sum(ng::matmul(y, x) * ng::matmul(y, x)); }},
      {"concat0", {3, 4}, [](Graph&, Var x) { Var parts[] = {x, x * x}; return ng::sum(ng::exp(ng::concat(parts, 0))); }},
      {"concat1", {3, 4}, [](Graph&, Var x) { Var parts[] = {x * x, x}; return ng::sum(ng::exp(ng::concat(parts, 1))); }},
      {"slice_cols", {3, 4}, [](Graph&, Var x) { return ng::sum(ng::exp(ng::slice_cols(x, 1, 2))); }},
      {"remove_index_rows", {3, 4}, [](Graph&, Var x) { auto y = ng::remove_index_rows(x, kRowIndex); return ng::sum(y * y * y); }},
      {"pick_rows", {3, 4}, [](Graph&, Var x) { auto y = ng::pick_rows(x, kRowIndex); return ng::sum(ng::exp(y)); }},
      {"entropy", {3, 4}, [](Graph&, Var x) { return ng::sum(ng::entropy(ng::softmax(x))); }},
      {"det", {4, 4}, [](Graph&, Var x) { return ng::det(x); }},
      {"inverse", {3, 3}, [](Graph& g, Var x) { return ng::sum(ng::inverse(x + g.constant(Tensor::identity(3)))); }},
      {"logdet", {3, 3}, [](Graph& g, Var x) { return ng::logdet(ng::matmul(x, ng::transpose(x)) + g.constant(Tensor::identity(3))); }},
      {"gram_logdet", {5, 6}, [](Graph&, Var x) {
         std::vector<Var> members = {ng::slice_cols(x, 0, 3), ng::slice_cols(x, 3, 3)};
         return ng::sum(ng::gram_logdet(members, 1e-3));
       }},
  };
}

}  // namespace

class OpGradient : public ::testing::TestWithParam<std::size_t> {};

TEST_P(OpGradient, MatchesCentralDifferences) {
  const OpCase c = op_cases()[GetParam()];
  for (std::uint64_t s = 0; s < 3; ++s) {
    const Tensor point = random_tensor(c.shape, 1000 + s, c.lo, c.hi);
    EXPECT_LT(ng::finite_diff_check(c.f, point), 1e-5) << c.name << " seed " << s;
  }
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::Range<std::size_t>(0, op_cases().size()),
                         [](const ::testing::TestParamInfo<std::size_t>& info) { return op_cases()[info.param].name; });

TEST(Graph, ZeroGradAllowsASecondSweep) {
  Graph g;
  Var x = g.leaf(Tensor::vector({1.0, 2.0}), true);
  Var loss = ng::sum(x * x);
  g.backward(loss);
  EXPECT_DOUBLE_EQ(g.grad(x)[1], 4.0);
  g.zero_grad();
  g.backward(loss);
  EXPECT_DOUBLE_EQ(g.grad(x)[1], 4.0);
}

TEST(Graph, ConstantsGetNoGradient) {
  Graph g;
  Var c = g.constant(Tensor::vector({1.0, 2.0}));
  Var x = g.leaf(Tensor::vector({3.0, 4.0}), true);
  g.backward(ng::sum(c * x));
  EXPECT_FALSE(g.has_grad(c));
  EXPECT_THROW(g.grad(c), Error);
  EXPECT_EQ(g.grad(x)[0], 1.0);
}

TEST(Graph, ShapeMismatchNamesTheOp) {
  Graph g;
  Var a = g.constant(Tensor(Shape{2, 3}));
  Var b = g.constant(Tensor(Shape{2, 4}));
  try {
    ng::add(a, b);
    FAIL() << "expected a shape error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
    EXPECT_NE(std::string(e.what()).find("add"), std::string::npos);
  }
  EXPECT_THROW(ng::reshape(a, {5}), Error);
}

TEST(Graph, EntropyTreatsZeroLogZeroAsZero) {
  Graph g;
  Var p = g.constant(Tensor::vector({0.5, 0.5, 0.0}));
  EXPECT_NEAR(ng::entropy(p).value().item(), std::log(2.0), 1e-15);
}

TEST(Graph, NormalizeZeroRowUsesUniformDirection) {
  Graph g;
  Var x = g.leaf(Tensor::matrix({{0, 0, 0, 0}, {3, 4, 0, 0}}), true);
  Var n = ng::l2_normalize_rows(x);
  EXPECT_DOUBLE_EQ(n.value()(0, 2), 0.5);
  EXPECT_DOUBLE_EQ(n.value()(1, 1), 0.8);
  g.backward(ng::sum(n));
  for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(g.grad(x)(0, j), 0.0);
}

TEST(Graph, GramLogdetMatchesExplicitGram) {
  const Tensor a = random_tensor({4, 5}, 21);
  const Tensor b = random_tensor({4, 5}, 22);
  Graph g;
  std::vector<Var> members = {g.constant(a), g.constant(b)};
  const Tensor out = ng::gram_logdet(members, 1e-6).value();
  for (std::size_t r = 0; r < 4; ++r) {
    Tensor gram(Shape{2, 2});
    for (std::size_t i = 0; i < 5; ++i) {
      gram(0, 0) += a(r, i) * a(r, i);
      gram(0, 1) += a(r, i) * b(r, i);
      gram(1, 1) += b(r, i) * b(r, i);
    }
    gram(1, 0) = gram(0, 1);
    gram(0, 0) += 1e-6;
    gram(1, 1) += 1e-6;
    EXPECT_NEAR(out[r], std::log(linalg::determinant(gram)), 1e-12);
  }
}

TEST(Graph, FiniteDiffCheckFlagsWrongGradient) {
  // A custom op whose backward is deliberately off by a factor of two.
  auto broken = [](Graph& g, Var x) {
    Tensor y = x.value();
    for (double& v : y.storage()) v = v * v;
    Var out = g.record("square_wrong", y, {x.id}, [](Graph& gg, std::size_t self) {
      const std::size_t in = gg.inputs(self)[0];
      Tensor& gin = gg.grad_buffer(in);
      for (std::size_t i = 0; i < gin.size(); ++i) gin[i] += gg.upstream(self)[i] * gg.value(in)[i];
    });
    return ng::sum(out);
  };
  EXPECT_GT(ng::finite_diff_check(broken, random_tensor({3}, 5)), 0.4);
}
