#include "divens/linalg.hpp"

#include <cmath>
#include <limits>
#include <utility>

#include "divens/error.hpp"

namespace divens::linalg {

namespace {

void require_square(const Tensor& t, const char* op) {
  if (t.rank() != 2 || t.shape()[0] != t.shape()[1]) {
    fail(ErrorCode::kShapeMismatch, std::string(op) + " requires a square matrix", "shape=" + shape_string(t.shape()));
  }
}

double norm1(const Tensor& m) {
  const std::size_t n = m.shape()[0];
  double best = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double col = 0.0;
    for (std::size_t i = 0; i < n; ++i) col += std::abs(m(i, j));
    best = std::max(best, col);
  }
  return best;
}

}  // namespace

Lu lu_factor(const Tensor& square) {
  require_square(square, "lu_factor");
  Lu lu;
  lu.n = square.shape()[0];
  lu.factors = square.storage();
  lu.pivots.resize(lu.n);
  const std::size_t n = lu.n;
  auto at = [&](std::size_t i, std::size_t j) -> double& { return lu.factors[i * n + j]; };
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    double best = std::abs(at(k, k));
    for (std::size_t i = k + 1; i < n; ++i) {
      if (std::abs(at(i, k)) > best) {
        best = std::abs(at(i, k));
        p = i;
      }
    }
    lu.pivots[k] = p;
    if (p != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(at(k, j), at(p, j));
      lu.sign = -lu.sign;
    }
    if (at(k, k) == 0.0) {
      lu.singular = true;
      continue;
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      at(i, k) /= at(k, k);
      const double f = at(i, k);
      if (f == 0.0) continue;
      for (std::size_t j = k + 1; j < n; ++j) at(i, j) -= f * at(k, j);
    }
  }
  return lu;
}

double Lu::determinant() const {
  double det = sign;
  for (std::size_t i = 0; i < n; ++i) det *= factors[i * n + i];
  return det;
}

double Lu::log_abs_determinant() const {
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += std::log(std::abs(factors[i * n + i]));
  return total;
}

Tensor Lu::inverse() const {
  if (singular) fail(ErrorCode::kNumeric, "matrix is singular", "condition=inf");
  Tensor inv(Shape{n, n});
  std::vector<double> col(n);
  for (std::size_t c = 0; c < n; ++c) {
    std::fill(col.begin(), col.end(), 0.0);
    col[c] = 1.0;
    // Apply the row interchanges in factorization order.
    for (std::size_t k = 0; k < n; ++k) std::swap(col[k], col[pivots[k]]);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < i; ++j) col[i] -= factors[i * n + j] * col[j];
    for (std::size_t ii = n; ii-- > 0;) {
      for (std::size_t j = ii + 1; j < n; ++j) col[ii] -= factors[ii * n + j] * col[j];
      col[ii] /= factors[ii * n + ii];
    }
    for (std::size_t i = 0; i < n; ++i) inv(i, c) = col[i];
  }
  return inv;
}

double condition_1norm(const Tensor& square, const Lu& lu) {
  if (lu.singular) return std::numeric_limits<double>::infinity();
  const Tensor inv = lu.inverse();
  if (!inv.all_finite()) return std::numeric_limits<double>::infinity();
  return norm1(square) * norm1(inv);
}

double determinant(const Tensor& square) { return lu_factor(square).determinant(); }

Tensor inverse(const Tensor& square) {
  const Lu lu = lu_factor(square);
  const double cond = condition_1norm(square, lu);
  if (!std::isfinite(cond) || cond > 1e15) {
    fail(ErrorCode::kNumeric, "matrix is singular to working precision", "condition=" + std::to_string(cond));
  }
  return lu.inverse();
}

}  // namespace divens::linalg
