#include <gtest/gtest.h>

#include <cmath>

#include "divens/error.hpp"
#include "divens/linalg.hpp"
#include "divens/tensor.hpp"
#include "support.hpp"

using namespace divens;
using divens::testing::random_tensor;

namespace {

// Cofactor expansion along the first row; exponential but exact enough for n <= 6.
double cofactor_det(const Tensor& a) {
  const std::size_t n = a.rows();
  if (n == 1) return a(0, 0);
  double total = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    Tensor minor(Shape{n - 1, n - 1});
    for (std::size_t i = 1; i < n; ++i) {
      std::size_t cc = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == c) continue;
        minor(i - 1, cc++) = a(i, j);
      }
    }
    total += (c % 2 == 0 ? 1.0 : -1.0) * a(0, c) * cofactor_det(minor);
  }
  return total;
}

}  // namespace

TEST(Tensor, ConstructionAndAccess) {
  Tensor m = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 3u);
  EXPECT_EQ(m(1, 2), 6.0);
  EXPECT_EQ(m.row(1)[0], 4.0);
  EXPECT_EQ(Tensor::scalar(2.5).item(), 2.5);
  EXPECT_EQ(shape_string(m.shape()), "[2,3]");
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), Error);
}

TEST(Tensor, AllFiniteDetectsNan) {
  Tensor t = Tensor::vector({1.0, 2.0});
  EXPECT_TRUE(t.all_finite());
  t[1] = std::nan("");
  EXPECT_FALSE(t.all_finite());
}

TEST(Kernels, MatmulMatchesTripleLoop) {
  const Tensor a = random_tensor({4, 5}, 1);
  const Tensor b = random_tensor({5, 3}, 2);
  const Tensor c = kernels::matmul(a, b);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 5; ++k) s += a(i, k) * b(k, j);
      EXPECT_NEAR(c(i, j), s, 1e-14);
    }
  }
  EXPECT_THROW(kernels::matmul(a, a), Error);
}

TEST(Kernels, TransposedAccumulators) {
  const Tensor a = random_tensor({3, 4}, 3);
  const Tensor b = random_tensor({2, 4}, 4);
  Tensor out(Shape{3, 2});
  kernels::matmul_bt_accumulate(a, b, out);
  const Tensor ref = kernels::matmul(a, kernels::transpose(b));
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], ref[i], 1e-14);

  const Tensor c = random_tensor({3, 2}, 5);
  Tensor out2(Shape{4, 2});
  kernels::matmul_at_accumulate(a, c, out2);
  const Tensor ref2 = kernels::matmul(kernels::transpose(a), c);
  for (std::size_t i = 0; i < out2.size(); ++i) EXPECT_NEAR(out2[i], ref2[i], 1e-14);
}

TEST(Kernels, SoftmaxRowsAreDistributions) {
  Tensor z = random_tensor({6, 10}, 6, -50.0, 50.0);
  z(0, 0) = 800.0;  // overflow without stabilization
  const Tensor p = kernels::softmax(z);
  const Tensor lp = kernels::log_softmax(z);
  for (std::size_t i = 0; i < 6; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 10; ++j) {
      EXPECT_GE(p(i, j), 0.0);
      s += p(i, j);
      if (p(i, j) > 1e-300) {
        EXPECT_NEAR(std::log(p(i, j)), lp(i, j), 1e-9);
      }
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_NEAR(p(0, 0), 1.0, 1e-15);
}

TEST(Linalg, DeterminantMatchesCofactorOracle) {
  for (std::size_t n = 1; n <= 6; ++n) {
    for (std::uint64_t s = 0; s < 5; ++s) {
      const Tensor a = random_tensor({n, n}, 100 * n + s);
      EXPECT_NEAR(linalg::determinant(a), cofactor_det(a), 1e-12) << "n=" << n;
    }
  }
}

TEST(Linalg, InverseTimesMatrixIsIdentity) {
  const Tensor a = random_tensor({5, 5}, 9);
  const Tensor prod = kernels::matmul(a, linalg::inverse(a));
  const Tensor id = Tensor::identity(5);
  for (std::size_t i = 0; i < prod.size(); ++i) EXPECT_NEAR(prod[i], id[i], 1e-10);
}

TEST(Linalg, LogAbsDeterminant) {
  const Tensor a = random_tensor({4, 4}, 11);
  const auto lu = linalg::lu_factor(a);
  EXPECT_NEAR(lu.log_abs_determinant(), std::log(std::abs(cofactor_det(a))), 1e-10);
}

TEST(Linalg, SingularMatrix) {
  const Tensor a = Tensor::matrix({{1, 2}, {2, 4}});
  const auto lu = linalg::lu_factor(a);
  EXPECT_TRUE(lu.singular);
  EXPECT_EQ(linalg::determinant(a), 0.0);
  EXPECT_TRUE(std::isinf(linalg::condition_1norm(a, lu)));
  EXPECT_THROW(linalg::inverse(a), Error);
}

TEST(Linalg, ConditionNumberOfDiagonal) {
  const Tensor a = Tensor::matrix({{4, 0}, {0, 0.5}});
  EXPECT_NEAR(linalg::condition_1norm(a, linalg::lu_factor(a)), 8.0, 1e-12);
}
